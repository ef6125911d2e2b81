"""Numpy fallback for the compiled kernels in ``_kernels.pyx``."""

import numpy as np

BACKEND = "python"


def inverse_cdf_counts(cdf, u):
    n = cdf.shape[0]
    idx = np.searchsorted(cdf, u, side="right")
    np.minimum(idx, n - 1, out=idx)
    return np.bincount(idx, minlength=n).astype(np.int64)


def map_update(theta, cells, observed, eps, commit=True):
    n, _, n_col = theta.shape
    seen = cells >= 0
    rows = np.broadcast_to(np.arange(n)[:, None], cells.shape)[seen]
    cols = cells[seen]
    ys = np.broadcast_to(observed[None, :], cells.shape)[seen]

    lik = np.full((ys.size, n_col), eps / (n_col - 1))
    lik[np.arange(ys.size), ys] = 1.0 - eps
    prior = theta[rows, cols]
    joint = lik * prior
    pred = joint.sum(axis=1)

    ok = pred > 0.0
    logp = np.full(pred.shape, -np.inf)
    logp[ok] = np.log(pred[ok])
    out = np.zeros(n)
    np.add.at(out, rows, logp)
    if commit:
        theta[rows[ok], cols[ok]] = joint[ok] / pred[ok, None]
    return out
