"""Exact conditional map posterior for the grid world.

Given the location trajectory, cell colours are independent, so the map
posterior is a product of per-cell categorical marginals.  Beliefs are stored
as probabilities (rows renormalised on every update).
"""

from dataclasses import dataclass

import numpy as np

from rbpf._backend import kernels

ROW_TOL = 1e-9


@dataclass(frozen=True)
class FactoredMapBelief:
    """``cell_marginals[i, c] = P(M(i) = c | y, L)``."""

    cell_marginals: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.cell_marginals, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] < 2:
            raise ValueError("cell_marginals must be (n_cells, n_colors>=2)")
        if (p < 0).any() or (p > 1 + ROW_TOL).any():
            raise ValueError("entries must lie in [0, 1]")
        if not np.allclose(p.sum(axis=1), 1.0, atol=ROW_TOL, rtol=0):
            raise ValueError("rows must sum to 1")
        object.__setattr__(self, "cell_marginals", p)

    @classmethod
    def uniform(cls, n_cells, n_colors):
        return cls(np.full((n_cells, n_colors), 1.0 / n_colors))

    @property
    def n_cells(self):
        return self.cell_marginals.shape[0]

    @property
    def n_colors(self):
        return self.cell_marginals.shape[1]


def change_kernel(n_colors, p_change):
    """Per-cell colour flip: stay w.p. ``1-p``, else uniform over the others."""
    K = np.full((n_colors, n_colors), p_change / (n_colors - 1))
    np.fill_diagonal(K, 1.0 - p_change)
    return K


def sensor_matrix(n_colors, eps):
    """``S[c, y] = P(y | colour c)``: correct w.p. ``1-eps``."""
    return change_kernel(n_colors, eps)


def predict_marginals(theta, p_change):
    """Diffuse (..., n_colors) marginals through the flip kernel."""
    if p_change == 0.0:
        return theta
    n_col = theta.shape[-1]
    # row-sum identity: sum_{c' != c} theta(c') = 1 - theta(c)
    out = (1.0 - p_change) * theta + p_change * (1.0 - theta) / (n_col - 1)
    return out / out.sum(axis=-1, keepdims=True)


def map_predict(belief, p_change):
    return FactoredMapBelief(predict_marginals(belief.cell_marginals, p_change))


def update_marginals(theta, cells, observed, eps, commit=True):
    """Batched sensor update of (particles, cells, colours) marginals.

    ``cells`` is (particles, offsets) with -1 where nothing is seen; modified
    in place when ``commit``.  Returns per-particle log predictive.
    """
    return kernels.map_update(
        theta,
        np.ascontiguousarray(cells, dtype=np.int64),
        np.ascontiguousarray(observed, dtype=np.int64),
        float(eps),
        commit,
    )


def map_update(belief, cells, observed, eps):
    """Condition on noisy colours ``observed[k]`` of grid ``cells[k]``.

    Returns the new belief and ``log p(observed | belief)`` (``-inf`` when the
    observation is impossible).
    """
    cells = np.atleast_1d(np.asarray(cells, dtype=np.int64))
    observed = np.atleast_1d(np.asarray(observed, dtype=np.int64))
    if cells.shape != observed.shape:
        raise ValueError("cells and observed must align")
    if ((cells < 0) | (cells >= belief.n_cells)).any():
        raise ValueError("observed cell outside the grid")
    theta = np.array(belief.cell_marginals[None], dtype=np.float64, order="C")
    log_pred = update_marginals(theta, cells[None], observed, eps)
    return FactoredMapBelief(theta[0]), float(log_pred[0])
