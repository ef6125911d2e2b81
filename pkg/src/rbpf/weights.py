"""Log-space weight normalisation and the effective sample size."""

import numpy as np

from rbpf.errors import AllWeightsZero, NotNormalized

NORMALIZATION_TOL = 1e-9


def normalize(log_weights):
    """Normalise log-weights with a max shift.

    Returns ``(normalized, log_increment)`` where ``exp(normalized)`` sums to
    one and ``log_increment = log(mean(exp(log_weights)))``.
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.ndim != 1 or lw.size == 0:
        raise ValueError("log_weights must be a non-empty 1-d array")
    if np.isnan(lw).any():
        raise ValueError("log_weights contain NaN")
    shift = lw.max()
    if shift == -np.inf:
        raise AllWeightsZero("every particle has zero weight")
    if shift == np.inf:
        raise ValueError("log_weights contain +inf")
    scaled = np.exp(lw - shift)
    total = scaled.sum()
    log_total = np.log(total)
    normalized = lw - shift - log_total
    return normalized, shift + log_total - np.log(lw.size)


def effective_sample_size(log_weights, tol=NORMALIZATION_TOL):
    """``1 / sum(w**2)`` for normalised log-weights."""
    w = np.exp(np.asarray(log_weights, dtype=np.float64))
    total = w.sum()
    if abs(total - 1.0) > tol:
        raise NotNormalized(f"weights sum to {total!r}, not 1")
    # clip rounding excursions outside [1, N]
    return float(np.clip(1.0 / np.sum(w * w), 1.0, w.size))


def uniform_log_weights(n):
    return np.full(n, -np.log(n))
