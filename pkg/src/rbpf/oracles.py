"""Ground truth for small problems.

* :func:`exact_filter_step` runs the HMM forward recursion over the full joint
  state ``(L_t, M_t(1..N_L))`` of a grid world.
* :func:`bk_filter_step` is the fully factorised Boyen-Koller filter: the
  exact one-step update of a product-form belief, projected back onto the
  product of its marginals.
* :func:`enumerate_root_paths` enumerates every root trajectory of an
  enumerable model and scores it with the model's exact conditional filter.

Joint tables are ndarrays of shape ``(N_L,) + (N_C,) * N_L``; their C-order
flattening is the mixed-radix index ``L * N_C**N_L + sum_i M(i) * N_C**(N_L-1-i)``
(location major, cell 0 most significant among the cells).
"""

from dataclasses import dataclass

import numpy as np

from rbpf.errors import StateSpaceTooLarge
from rbpf.mapbelief import change_kernel, predict_marginals, sensor_matrix

MAX_JOINT_STATES = 10**6
MAX_PATHS = 2 * 10**5


@dataclass
class JointBelief:
    table: np.ndarray

    @property
    def n_cells(self):
        return self.table.shape[0]


@dataclass
class BkBelief:
    location: np.ndarray
    cells: np.ndarray


def joint_size(model):
    return model.n_cells * model.n_colors ** model.n_cells


def exact_initial_belief(model):
    size = joint_size(model)
    if size > MAX_JOINT_STATES:
        raise StateSpaceTooLarge(
            f"joint state space has {model.n_colors}^{model.n_cells} x {model.n_cells} "
            f"entries, above the {MAX_JOINT_STATES} guard"
        )
    shape = (model.n_cells,) + (model.n_colors,) * model.n_cells
    table = np.empty(shape)
    table[...] = np.asarray(model.init_location).reshape((-1,) + (1,) * model.n_cells)
    table /= model.n_colors ** model.n_cells
    return JointBelief(table)


def _apply_per_cell(table, K, first_axis):
    """Multiply every cell axis (from ``first_axis``) by kernel ``K``."""
    for ax in range(first_axis, table.ndim):
        table = np.moveaxis(np.tensordot(table, K, axes=([ax], [0])), -1, ax)
    return table


def _sensor_factor(model, y):
    S = sensor_matrix(model.n_colors, model.sensor_flip)
    return [None if v < 0 else S[:, v] for v in np.asarray(y)]


def exact_filter_step(belief, t, y, model):
    """One exact forward step for the grid world at time ``t``.

    Returns the posterior joint belief and ``log p(y_t | y_{1:t-1})``.
    """
    n_cells = model.n_cells
    table = np.tensordot(model.transition_matrix(t), belief.table, axes=([0], [0]))
    if model.p_change > 0:
        table = _apply_per_cell(table, change_kernel(model.n_colors, model.p_change), 1)
    factors = _sensor_factor(model, y)
    y = np.asarray(y)
    out = np.zeros_like(table)
    for loc in range(n_cells):
        cells = model.neighbors(loc)
        if not np.array_equal(cells < 0, y < 0):
            continue
        sl = table[loc]
        for k, cell in enumerate(cells):
            if cell < 0:
                continue
            shape = [1] * n_cells
            shape[cell] = model.n_colors
            sl = sl * factors[k].reshape(shape)
        out[loc] = sl
    total = out.sum()
    if total <= 0:
        return JointBelief(out), -np.inf
    return JointBelief(out / total), float(np.log(total))


def exact_marginals(belief):
    """Location marginal and per-cell colour marginals of a joint table."""
    table = belief.table
    n_cells = table.shape[0]
    loc = table.reshape(n_cells, -1).sum(axis=1)
    cells = np.stack(
        [table.sum(axis=tuple(a for a in range(table.ndim) if a != 1 + i)) for i in range(n_cells)]
    )
    return loc, cells


def exact_filter(model, observations):
    """Run the exact filter; returns per-step marginals and log-evidence."""
    belief = exact_initial_belief(model)
    locs, cells, logs = [], [], []
    for t, y in enumerate(observations, start=1):
        belief, lp = exact_filter_step(belief, t, y, model)
        loc, cm = exact_marginals(belief)
        locs.append(loc)
        cells.append(cm)
        logs.append(lp)
    return np.array(locs), np.array(cells), np.array(logs), belief


def exact_conditional_map(model, locations, observations):
    """Exact per-cell map marginals given a clamped location trajectory.

    ``locations`` holds ``L_1..L_t``.  Works on the full joint map table, so
    it does not rely on the factored representation.
    """
    n_cells, n_col = model.n_cells, model.n_colors
    if n_col ** n_cells > MAX_JOINT_STATES:
        raise StateSpaceTooLarge("map table too large to enumerate")
    table = np.full((n_col,) * n_cells, 1.0 / n_col ** n_cells)
    K = change_kernel(n_col, model.p_change) if model.p_change > 0 else None
    for loc, y in zip(locations, observations):
        if K is not None:
            table = _apply_per_cell(table, K, 0)
        for k, cell in enumerate(model.neighbors(loc)):
            if cell < 0:
                continue
            shape = [1] * n_cells
            shape[cell] = n_col
            table = table * _sensor_factor(model, y)[k].reshape(shape)
        table = table / table.sum()
    return np.stack(
        [table.sum(axis=tuple(a for a in range(n_cells) if a != i)) for i in range(n_cells)]
    )


# ---------------------------------------------------------------------------
# fully factorised Boyen-Koller

def bk_initial_belief(model):
    return BkBelief(
        np.asarray(model.init_location, dtype=np.float64),
        np.full((model.n_cells, model.n_colors), 1.0 / model.n_colors),
    )


def bk_filter_step(belief, t, y, model):
    """Exact update of a product-form belief, projected onto its marginals.

    Returns the projected belief and the one-step log predictive.
    """
    loc = model.transition_matrix(t).T @ belief.location
    theta = predict_marginals(belief.cells, model.p_change)
    S = sensor_matrix(model.n_colors, model.sensor_flip)
    y = np.asarray(y)
    pred = np.zeros(model.n_cells)
    posts = {}
    for l in range(model.n_cells):
        if loc[l] == 0:
            continue
        cells = model.neighbors(l)
        if not np.array_equal(cells < 0, y < 0):
            continue
        seen = cells >= 0
        rows = theta[cells[seen]] * S[:, y[seen]].T
        norms = rows.sum(axis=1)
        pred[l] = np.prod(norms)
        if pred[l] > 0:
            posts[l] = (cells[seen], rows / norms[:, None])
    joint = loc * pred
    total = joint.sum()
    if total <= 0:
        return BkBelief(loc, theta), -np.inf
    p_loc = joint / total
    cells_new = theta.copy()
    for l, (idx, post) in posts.items():
        cells_new[idx] += p_loc[l] * (post - theta[idx])
    return BkBelief(p_loc, cells_new), float(np.log(total))


def bk_filter(model, observations):
    belief = bk_initial_belief(model)
    locs, cells, logs = [], [], []
    for t, y in enumerate(observations, start=1):
        belief, lp = bk_filter_step(belief, t, y, model)
        locs.append(belief.location)
        cells.append(belief.cells)
        logs.append(lp)
    return np.array(locs), np.array(cells), np.array(logs), belief


def project_product(belief):
    """Product of the marginals of a joint table (the BK projection)."""
    loc, cells = exact_marginals(belief)
    table = loc.reshape((-1,) + (1,) * loc.size)
    for i in range(loc.size):
        shape = [1] * (loc.size + 1)
        shape[1 + i] = cells.shape[1]
        table = table * cells[i].reshape(shape)
    return JointBelief(table)


# ---------------------------------------------------------------------------
# enumeration of root trajectories

def enumerate_root_paths(model, observations, max_paths=MAX_PATHS):
    """All root paths with non-zero posterior and their exact scores.

    Returns ``(paths, log_joint, stats)`` where ``paths`` is (P, T+1),
    ``log_joint[p] = log p(r_{0:T}, y_{1:T})`` and ``stats`` are the final
    conditional statistics per path.  ``logsumexp(log_joint)`` is the exact
    log-evidence.
    """
    vals, lp0 = model.initial_support()
    paths = np.asarray(vals)[:, None]
    logw = np.asarray(lp0, dtype=np.float64)
    stats = model.initial_stats(paths.shape[0])
    for t, y in enumerate(observations, start=1):
        succ, lps = model.successors(paths[:, -1], t)
        k = succ.shape[1]
        rep = np.repeat(np.arange(paths.shape[0]), k)
        new_paths = np.column_stack([paths[rep], succ.ravel()])
        new_logw = logw[rep] + lps.ravel()
        keep = new_logw > -np.inf
        new_paths, new_logw, rep = new_paths[keep], new_logw[keep], rep[keep]
        uniq, first, inv = np.unique(new_paths, axis=0, return_index=True, return_inverse=True)
        inv = inv.ravel()
        merged = np.full(uniq.shape[0], -np.inf)
        np.logaddexp.at(merged, inv, new_logw)
        if uniq.shape[0] > max_paths:
            raise StateSpaceTooLarge(f"more than {max_paths} root paths at t={t}")
        parent = rep[first]
        prev_stats = model.take_stats(stats, parent)
        stats, ll = model.cond_step(prev_stats, uniq[:, -2], uniq[:, -1], y, t)
        logw = merged + ll
        alive = logw > -np.inf
        paths, logw = uniq[alive], logw[alive]
        stats = model.take_stats(stats, np.flatnonzero(alive))
    return paths, logw, stats


def _logsumexp(a):
    m = np.max(a)
    return float(m + np.log(np.exp(a - m).sum()))


def exact_log_evidence(model, observations):
    _, logw, _ = enumerate_root_paths(model, observations)
    return _logsumexp(logw)


def exact_path_posterior(model, observations):
    paths, logw, stats = enumerate_root_paths(model, observations)
    return paths, np.exp(logw - _logsumexp(logw)), stats


def exact_root_marginal(model, observations, n_values):
    paths, p, _ = exact_path_posterior(model, observations)
    return np.bincount(paths[:, -1], weights=p, minlength=n_values)


def exact_expectation(model, observations, f):
    """``E[f(r_T, x_T) | y_{1:T}]`` by path enumeration."""
    paths, p, stats = exact_path_posterior(model, observations)
    vals = model.conditional_expectation(f, paths[:, -1], stats)
    return float(np.dot(p, vals))
