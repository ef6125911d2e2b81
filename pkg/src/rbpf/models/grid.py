"""Grid-world robot with an unknown, possibly changing colour map.

The robot's cell is the root chain; cell colours are marginalised exactly by
a factored per-cell filter.  At step ``t`` the robot attempts action
``actions[(t-1) % len(actions)]``: it moves w.p. ``1 - p_slip`` and stays put
otherwise (moves off the grid always stay).  It then sees the colour of every
cell in its neighbourhood, each flipped to another colour w.p. ``sensor_flip``.

Observations are integer vectors with one entry per neighbourhood offset
(row-major over the 3x3 block, or a single entry); ``-1`` marks an offset that
falls off the grid, which the robot senses without error.
"""

from dataclasses import dataclass, field

import numpy as np

from rbpf.errors import ConfigError
from rbpf.mapbelief import predict_marginals, sensor_matrix, update_marginals
from rbpf.model import CellColor, RbpfModel, SimulatedRun

ACTIONS = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1), "X": (0, 0)}
NEIGHBORHOODS = {
    "single": [(0, 0)],
    "3x3": [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)],
}
WALL = -1


@dataclass(frozen=True)
class GridWorldModel(RbpfModel):
    width: int
    height: int
    actions: str
    n_colors: int = 2
    sensor_flip: float = 0.1
    p_slip: float = 0.2
    p_change: float = 0.0
    neighborhood: str = "single"
    init_location: tuple = (0,)
    true_map: tuple | None = None
    _tables: dict = field(default=None, init=False, repr=False, compare=False)

    enumerable = True

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.n_colors < 2:
            raise ConfigError("need at least two colours")
        for name in ("sensor_flip", "p_slip", "p_change"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} is not a probability")
        if not self.actions:
            raise ConfigError("action script is empty")
        bad = set(self.actions) - set(ACTIONS)
        if bad:
            raise ConfigError(f"unknown actions {sorted(bad)}; use N,S,E,W,X")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ConfigError(f"neighborhood must be one of {sorted(NEIGHBORHOODS)}")
        init = np.atleast_1d(np.asarray(self.init_location, dtype=np.float64))
        if init.size == 1:
            cell = int(init[0])
            if not 0 <= cell < self.n_cells:
                raise ConfigError(f"initial cell {cell} outside the grid")
            init = np.zeros(self.n_cells)
            init[cell] = 1.0
        if init.shape != (self.n_cells,) or (init < 0).any() or abs(init.sum() - 1.0) > 1e-9:
            raise ConfigError("init_location must be a cell index or a distribution over cells")
        object.__setattr__(self, "init_location", tuple(float(v) for v in init))
        if self.true_map is not None:
            tm = tuple(int(c) for c in self.true_map)
            if len(tm) != self.n_cells or min(tm) < 0 or max(tm) >= self.n_colors:
                raise ConfigError("true_map must give one valid colour per cell")
            object.__setattr__(self, "true_map", tm)
        object.__setattr__(self, "_tables", self._build_tables())

    # -- geometry --------------------------------------------------------------

    @property
    def n_cells(self):
        return self.width * self.height

    def cell(self, row, col):
        return row * self.width + col

    def coords(self, cell):
        return divmod(int(cell), self.width)

    def _build_tables(self):
        rows, cols = np.divmod(np.arange(self.n_cells), self.width)
        moves = {}
        for a, (dr, dc) in ACTIONS.items():
            r2, c2 = rows + dr, cols + dc
            inside = (r2 >= 0) & (r2 < self.height) & (c2 >= 0) & (c2 < self.width)
            moves[a] = np.where(inside, r2 * self.width + c2, np.arange(self.n_cells))
        offsets = NEIGHBORHOODS[self.neighborhood]
        nbr = np.full((self.n_cells, len(offsets)), WALL, dtype=np.int64)
        for k, (dr, dc) in enumerate(offsets):
            r2, c2 = rows + dr, cols + dc
            inside = (r2 >= 0) & (r2 < self.height) & (c2 >= 0) & (c2 < self.width)
            nbr[inside, k] = (r2 * self.width + c2)[inside]
        init = np.asarray(self.init_location)
        return {
            "moves": moves,
            "nbr": nbr,
            "init": init,
            "init_cdf": np.cumsum(init),
            "sensor": sensor_matrix(self.n_colors, self.sensor_flip),
        }

    def neighbors(self, cell):
        """Grid cells observed from ``cell`` (off-grid offsets are ``-1``)."""
        return self._tables["nbr"][cell]

    def action(self, t):
        return self.actions[(t - 1) % len(self.actions)]

    def intended(self, prev, t):
        return self._tables["moves"][self.action(t)][prev]

    def transition_matrix(self, t):
        """Dense ``T[l, l'] = p(L_t = l' | L_{t-1} = l)``."""
        T = np.zeros((self.n_cells, self.n_cells))
        idx = np.arange(self.n_cells)
        np.add.at(T, (idx, self.intended(idx, t)), 1.0 - self.p_slip)
        np.add.at(T, (idx, idx), self.p_slip)
        return T

    def root_transition(self, prev, t):
        """Distribution over ``L_t`` given ``L_{t-1} = prev``."""
        return self.transition_matrix(t)[int(prev)]

    # -- root chain ------------------------------------------------------------

    def sample_initial_roots(self, n, rng):
        cdf = self._tables["init_cdf"]
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return np.minimum(idx, self.n_cells - 1).astype(np.int64)

    def initial_log_prob(self, roots):
        with np.errstate(divide="ignore"):
            return np.log(self._tables["init"][roots])

    def initial_support(self):
        init = self._tables["init"]
        vals = np.flatnonzero(init > 0)
        return vals, np.log(init[vals])

    def sample_roots(self, prev, t, rng):
        prev = np.asarray(prev, dtype=np.int64)
        stay = rng.random(prev.shape[0]) < self.p_slip
        return np.where(stay, prev, self.intended(prev, t))

    def transition_log_prob(self, prev, roots, t):
        p = (1.0 - self.p_slip) * (roots == self.intended(prev, t)) + self.p_slip * (roots == prev)
        with np.errstate(divide="ignore"):
            return np.log(p)

    def successors(self, prev, t):
        prev = np.asarray(prev, dtype=np.int64)
        vals = np.column_stack([self.intended(prev, t), prev])
        with np.errstate(divide="ignore"):
            lp = np.log([1.0 - self.p_slip, self.p_slip])
        return vals, np.broadcast_to(lp, vals.shape).copy()

    # -- conditional map filter ------------------------------------------------

    def initial_stats(self, n):
        return np.full((n, self.n_cells, self.n_colors), 1.0 / self.n_colors)

    def _observed_cells(self, roots, y):
        y = np.asarray(y, dtype=np.int64)
        cells = self._tables["nbr"][roots]
        consistent = np.all((cells < 0) == (y < 0), axis=1)
        cells = np.where(consistent[:, None], cells, WALL)
        return cells, y, consistent

    def cond_step(self, stats, prev, roots, y, t):
        theta = np.array(predict_marginals(stats, self.p_change), dtype=np.float64, order="C")
        cells, y, ok = self._observed_cells(roots, y)
        ll = update_marginals(theta, cells, y, self.sensor_flip)
        ll[~ok] = -np.inf
        return theta, ll

    def cond_predictive(self, stats, prev, roots, y, t):
        theta = predict_marginals(stats, self.p_change)
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        cells, y, ok = self._observed_cells(roots, y)
        ll = update_marginals(theta, cells, y, self.sensor_flip, commit=False)
        ll[~ok] = -np.inf
        return ll

    # -- estimation support ----------------------------------------------------

    def conditional_expectation(self, f, roots, stats):
        if isinstance(f, CellColor):
            return np.asarray(stats)[:, f.cell, f.color].copy()
        return super().conditional_expectation(f, roots, stats)

    def evaluate(self, f, roots, hidden):
        if isinstance(f, CellColor):
            return (np.asarray(hidden)[:, f.cell] == f.color).astype(np.float64)
        return super().evaluate(f, roots, hidden)

    def sample_initial_hidden(self, n, rng):
        return rng.integers(0, self.n_colors, size=(n, self.n_cells))

    def sample_hidden(self, hidden, prev, roots, t, rng):
        if self.p_change == 0.0:
            return hidden
        n = hidden.shape[0]
        u = rng.random((n, self.n_cells, 2))
        flip = u[..., 0] < self.p_change
        shift = 1 + np.floor(u[..., 1] * (self.n_colors - 1)).astype(np.int64)
        return np.where(flip, (hidden + shift) % self.n_colors, hidden)

    def hidden_log_likelihood(self, hidden, roots, y, t):
        cells, y, ok = self._observed_cells(roots, y)
        seen = cells >= 0
        colors = np.take_along_axis(hidden, np.where(seen, cells, 0), axis=1)
        with np.errstate(divide="ignore"):
            logS = np.log(self._tables["sensor"])
        terms = np.where(seen, logS[colors, np.where(y < 0, 0, y)[None, :]], 0.0)
        ll = terms.sum(axis=1)
        ll[~ok] = -np.inf
        return ll

    # -- simulation ----------------------------------------------------------------

    def observe(self, location, colors, rng):
        """Noisy neighbourhood reading from ``location`` of map ``colors``."""
        cells = self._tables["nbr"][location]
        y = np.full(cells.shape, WALL, dtype=np.int64)
        for k, c in enumerate(cells):
            if c < 0:
                continue
            true = int(colors[c])
            if rng.random() < self.sensor_flip:
                true = (true + 1 + int(rng.integers(0, self.n_colors - 1))) % self.n_colors
            y[k] = true
        return y

    def simulate(self, horizon=None, rng=None):
        """Simulate ``horizon`` steps (default: one pass of the action script)."""
        horizon = len(self.actions) if horizon is None else int(horizon)
        rng = np.random.default_rng(0) if rng is None else rng
        if self.true_map is not None:
            colors = np.array(self.true_map, dtype=np.int64)
        else:
            colors = rng.integers(0, self.n_colors, size=self.n_cells)
        loc = int(self.sample_initial_roots(1, rng)[0])
        roots, maps, obs = [loc], [colors.copy()], []
        for t in range(1, horizon + 1):
            loc = int(self.sample_roots(np.array([loc]), t, rng)[0])
            if self.p_change > 0:
                colors = self.sample_hidden(colors[None], None, None, t, rng)[0]
            roots.append(loc)
            maps.append(colors.copy())
            obs.append(self.observe(loc, colors, rng))
        return SimulatedRun(np.array(roots), np.array(maps), obs)

    def visited_or_observed(self, path):
        """Boolean mask of cells seen from any location on ``path``."""
        cells = self._tables["nbr"][np.asarray(path)].ravel()
        mask = np.zeros(self.n_cells, dtype=bool)
        mask[cells[cells >= 0]] = True
        return mask

    def coverage_step(self, roots):
        """First ``t`` by which observations from ``L_1..L_t`` covered every
        cell, or ``None``.  ``roots`` holds ``L_0..L_T``."""
        mask = np.zeros(self.n_cells, dtype=bool)
        nbr = self._tables["nbr"]
        for t in range(1, len(roots)):
            cells = nbr[roots[t]]
            mask[cells[cells >= 0]] = True
            if mask.all():
                return t
        return None

    def intended_path(self, start, horizon=None):
        """Locations reached when no move slips."""
        horizon = len(self.actions) if horizon is None else int(horizon)
        path = [int(start)]
        for t in range(1, horizon + 1):
            path.append(int(self.intended(path[-1], t)))
        return np.array(path)
