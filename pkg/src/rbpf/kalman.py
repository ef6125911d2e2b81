"""Exact conditional filter for conditionally linear Gaussian models.

Given a sampled regime, the continuous state is advanced by a Kalman
predict/update.  The update uses the Joseph form so the covariance stays
symmetric positive semi-definite; the innovation covariance is factorised by
Cholesky with a small diagonal jitter escalation.
"""

from dataclasses import dataclass

import numpy as np

from rbpf.errors import SingularInnovation

LOG_2PI = np.log(2.0 * np.pi)
# relative to the mean diagonal of S
JITTER_SCHEDULE = (0.0, 1e-12, 1e-11, 1e-10, 1e-9)


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class RegimeParams:
    """Linear Gaussian dynamics ``x' = A x + q``, ``y = C x' + r``.

    Control inputs and offsets are not modelled; subclass to add them.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A, C, Q, R = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (self.A, self.C, self.Q, self.R))
        nx, ny = A.shape[0], C.shape[0]
        if A.shape != (nx, nx) or C.shape != (ny, nx) or Q.shape != (nx, nx) or R.shape != (ny, ny):
            raise ValueError(
                f"inconsistent shapes A{A.shape} C{C.shape} Q{Q.shape} R{R.shape}"
            )
        for name, m in (("Q", Q), ("R", R)):
            if not np.allclose(m, m.T, atol=1e-10):
                raise ValueError(f"{name} is not symmetric")
        for name, value in (("A", A), ("C", C), ("Q", Q), ("R", R)):
            object.__setattr__(self, name, value)

    @property
    def n_state(self):
        return self.A.shape[0]

    @property
    def n_obs(self):
        return self.C.shape[0]


def _cholesky(S):
    """Batched Cholesky of (..., d, d) with relative jitter escalation."""
    d = S.shape[-1]
    scale = np.trace(S, axis1=-2, axis2=-1) / d
    eye = np.eye(d)
    for jitter in JITTER_SCHEDULE:
        try:
            L = np.linalg.cholesky(S + (jitter * scale)[..., None, None] * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diagonal(L, axis1=-2, axis2=-1) > 0):
            return L
    raise SingularInnovation("innovation covariance is singular")


def _predict(mean, cov, A, Q):
    m = np.einsum("...ij,...j->...i", A, mean)
    P = A @ cov @ np.swapaxes(A, -1, -2) + Q
    return m, 0.5 * (P + np.swapaxes(P, -1, -2))


def _innovation(m_pred, P_pred, C, R, y):
    v = y - np.einsum("...ij,...j->...i", C, m_pred)
    S = C @ P_pred @ np.swapaxes(C, -1, -2) + R
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    L = _cholesky(S)
    return v, S, L


def _log_density(v, L):
    z = np.linalg.solve(L, v[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
    return -0.5 * (v.shape[-1] * LOG_2PI + logdet + np.sum(z * z, axis=-1))


def kalman_step_batch(mean, cov, A, C, Q, R, y):
    """Kalman step over a leading batch axis.

    ``mean`` (..., n), ``cov`` (..., n, n); model matrices broadcast against
    the batch.  Returns ``(mean, cov, log_pred)``.
    """
    m_pred, P_pred = _predict(mean, cov, A, Q)
    v, S, L = _innovation(m_pred, P_pred, C, R, y)
    CT = np.swapaxes(C, -1, -2)
    PCt = P_pred @ CT
    # K = P C^T S^-1 via two triangular solves on the transposed system
    Kt = np.linalg.solve(
        np.swapaxes(L, -1, -2), np.linalg.solve(L, np.swapaxes(PCt, -1, -2))
    )
    K = np.swapaxes(Kt, -1, -2)
    m_new = m_pred + np.einsum("...ij,...j->...i", K, v)
    n = mean.shape[-1]
    I_KC = np.eye(n) - K @ C
    P_new = I_KC @ P_pred @ np.swapaxes(I_KC, -1, -2) + K @ R @ Kt
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    return m_new, P_new, _log_density(v, L)


def kalman_predictive_batch(mean, cov, A, C, Q, R, y):
    m_pred, P_pred = _predict(mean, cov, A, Q)
    v, _, L = _innovation(m_pred, P_pred, C, R, y)
    return _log_density(v, L)


def kalman_step(belief, params, y):
    """One predict/update cycle; returns ``(posterior, log p(y | past))``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m, P, lp = kalman_step_batch(
        belief.mean, belief.cov, params.A, params.C, params.Q, params.R, y
    )
    return GaussianBelief(m, P), float(lp)


def kalman_predictive(belief, params, y):
    """Predictive log-density of ``y`` without committing the update."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return float(
        kalman_predictive_batch(belief.mean, belief.cov, params.A, params.C, params.Q, params.R, y)
    )


def textbook_update(belief, params, y):
    """Plain ``(I - K C) P`` covariance update, kept as a cross-check."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m_pred, P_pred = _predict(belief.mean, belief.cov, params.A, params.Q)
    S = params.C @ P_pred @ params.C.T + params.R
    K = P_pred @ params.C.T @ np.linalg.inv(S)
    m = m_pred + K @ (y - params.C @ m_pred)
    P = (np.eye(params.n_state) - K @ params.C) @ P_pred
    return GaussianBelief(m, P)
