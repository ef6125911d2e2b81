"""Selection schemes: multinomial, residual and stratified resampling.

Each scheme maps normalised weights to offspring counts ``N_i`` with
``sum(N_i) == N`` and ``E[N_i] = N * w_i``.  All three run in O(N): uniforms
are generated already sorted and pushed through the weight CDF in one pass.
"""

import enum

import numpy as np

from rbpf._backend import kernels
from rbpf.errors import CountMismatch


class Resampler(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    RESIDUAL = "residual"
    STRATIFIED = "stratified"


def _cdf(weights):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-d array")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    positive = np.flatnonzero(w > 0)
    if positive.size == 0:
        raise ValueError("weights are all zero")
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    # pin the top of the CDF so rounding never lands on a zero-weight tail
    cdf[positive[-1]:] = 1.0
    return cdf


def _sorted_uniforms(n, rng):
    # normalised exponential spacings are the order statistics of n uniforms
    e = rng.standard_exponential(n + 1)
    s = np.cumsum(e)
    return s[:-1] / s[-1]


def multinomial(weights, n, rng):
    """Offspring counts distributed as Multinomial(n, weights)."""
    cdf = _cdf(weights)
    if n == 0:
        return np.zeros(cdf.size, dtype=np.int64)
    return kernels.inverse_cdf_counts(cdf, _sorted_uniforms(n, rng))


def residual(weights, n, rng):
    """Deterministic ``floor(n * w)`` copies plus a multinomial remainder."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    scaled = n * w
    base = np.floor(scaled).astype(np.int64)
    left = n - int(base.sum())
    if left <= 0:
        return base
    res = scaled - base
    return base + multinomial(res, left, rng)


def stratified(weights, n, rng):
    """One independent uniform in each stratum ``[k/n, (k+1)/n)``."""
    cdf = _cdf(weights)
    u = (np.arange(n) + rng.random(n)) / n
    return kernels.inverse_cdf_counts(cdf, u)


SCHEMES = {
    Resampler.MULTINOMIAL: multinomial,
    Resampler.RESIDUAL: residual,
    Resampler.STRATIFIED: stratified,
}


def offspring_counts(scheme, weights, n, rng):
    return SCHEMES[Resampler(scheme)](weights, n, rng)


def ancestors_from_counts(counts, n=None):
    """Expand offspring counts into a sorted ancestor index array."""
    counts = np.asarray(counts, dtype=np.int64)
    if (counts < 0).any():
        raise CountMismatch("negative offspring count")
    n = counts.size if n is None else n
    if int(counts.sum()) != n:
        raise CountMismatch(f"offspring counts sum to {int(counts.sum())}, expected {n}")
    return np.repeat(np.arange(counts.size), counts)
