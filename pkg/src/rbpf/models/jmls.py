"""Jump Markov linear system: a finite regime chain switching linear Gaussian
dynamics.  Regimes are sampled; the continuous state is Kalman-filtered."""

from dataclasses import dataclass, field

import numpy as np

from rbpf.errors import ConfigError
from rbpf.kalman import GaussianBelief, kalman_predictive_batch, kalman_step_batch
from rbpf.model import RbpfModel, SimulatedRun, StateComponent


def _psd_sqrt(M):
    """Symmetric square root usable as a noise factor for singular ``M``."""
    vals, vecs = np.linalg.eigh(M)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class JmlsModel(RbpfModel):
    regimes: tuple
    regime_transition: np.ndarray
    init_regime: np.ndarray
    init_belief: GaussianBelief
    _stack: dict = field(default=None, init=False, repr=False, compare=False)

    enumerable = True

    def __post_init__(self):
        regimes = tuple(self.regimes)
        if not regimes:
            raise ConfigError("need at least one regime")
        Pi = np.atleast_2d(np.asarray(self.regime_transition, dtype=np.float64))
        k = len(regimes)
        if Pi.shape != (k, k) or (Pi < 0).any() or not np.allclose(Pi.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ConfigError("regime_transition must be a row-stochastic k x k matrix")
        init = np.asarray(self.init_regime, dtype=np.float64)
        if init.shape != (k,) or (init < 0).any() or abs(init.sum() - 1.0) > 1e-9:
            raise ConfigError("init_regime must be a distribution over regimes")
        nx, ny = regimes[0].n_state, regimes[0].n_obs
        if any(r.n_state != nx or r.n_obs != ny for r in regimes):
            raise ConfigError("all regimes must share state and observation dimensions")
        if self.init_belief.mean.size != nx:
            raise ConfigError("init_belief dimension does not match the regimes")
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "regime_transition", Pi)
        object.__setattr__(self, "init_regime", init)
        stack = {name: np.stack([getattr(r, name) for r in regimes]) for name in "ACQR"}
        stack["Qs"] = np.stack([_psd_sqrt(r.Q) for r in regimes])
        stack["Pi_cdf"] = np.cumsum(Pi, axis=1)
        stack["init_cdf"] = np.cumsum(init)
        object.__setattr__(self, "_stack", stack)

    @property
    def n_regimes(self):
        return len(self.regimes)

    @property
    def n_state(self):
        return self.regimes[0].n_state

    # -- root chain ------------------------------------------------------------

    def _draw(self, cdf, u):
        k = (cdf <= (u * cdf[..., -1])[..., None]).sum(axis=-1)
        return np.minimum(k, self.n_regimes - 1).astype(np.int64)

    def sample_initial_roots(self, n, rng):
        return self._draw(np.broadcast_to(self._stack["init_cdf"], (n, self.n_regimes)), rng.random(n))

    def initial_log_prob(self, roots):
        with np.errstate(divide="ignore"):
            return np.log(self.init_regime[roots])

    def initial_support(self):
        vals = np.flatnonzero(self.init_regime > 0)
        return vals, np.log(self.init_regime[vals])

    def sample_roots(self, prev, t, rng):
        prev = np.asarray(prev, dtype=np.int64)
        return self._draw(self._stack["Pi_cdf"][prev], rng.random(prev.shape[0]))

    def transition_log_prob(self, prev, roots, t):
        with np.errstate(divide="ignore"):
            return np.log(self.regime_transition[prev, roots])

    def successors(self, prev, t):
        prev = np.asarray(prev, dtype=np.int64)
        vals = np.broadcast_to(np.arange(self.n_regimes), (prev.shape[0], self.n_regimes)).copy()
        with np.errstate(divide="ignore"):
            return vals, np.log(self.regime_transition[prev])

    # -- conditional Kalman filter -------------------------------------------

    def initial_stats(self, n):
        b = self.init_belief
        return (np.tile(b.mean, (n, 1)), np.tile(b.cov, (n, 1, 1)))

    def _params(self, roots):
        s = self._stack
        return s["A"][roots], s["C"][roots], s["Q"][roots], s["R"][roots]

    def cond_step(self, stats, prev, roots, y, t):
        mean, cov = stats
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        m, P, ll = kalman_step_batch(mean, cov, *self._params(roots), y)
        return (m, P), ll

    def cond_predictive(self, stats, prev, roots, y, t):
        mean, cov = stats
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return kalman_predictive_batch(mean, cov, *self._params(roots), y)

    # -- estimation support --------------------------------------------------

    def conditional_expectation(self, f, roots, stats):
        if isinstance(f, StateComponent):
            return stats[0][:, f.index].copy()
        return super().conditional_expectation(f, roots, stats)

    def evaluate(self, f, roots, hidden):
        if isinstance(f, StateComponent):
            return np.asarray(hidden)[:, f.index].astype(np.float64)
        return super().evaluate(f, roots, hidden)

    def sample_initial_hidden(self, n, rng):
        b = self.init_belief
        return b.mean + rng.standard_normal((n, self.n_state)) @ _psd_sqrt(b.cov).T

    def sample_hidden(self, hidden, prev, roots, t, rng):
        A, Qs = self._stack["A"][roots], self._stack["Qs"][roots]
        eps = rng.standard_normal(hidden.shape)
        return np.einsum("nij,nj->ni", A, hidden) + np.einsum("nij,nj->ni", Qs, eps)

    def hidden_log_likelihood(self, hidden, roots, y, t):
        C, R = self._stack["C"][roots], self._stack["R"][roots]
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        v = y - np.einsum("nij,nj->ni", C, hidden)
        L = np.linalg.cholesky(R)
        z = np.linalg.solve(L, v[..., None])[..., 0]
        logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
        return -0.5 * (v.shape[-1] * np.log(2 * np.pi) + logdet + np.sum(z * z, axis=-1))

    # -- simulation ----------------------------------------------------------

    def simulate(self, horizon, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        r = self.sample_initial_roots(1, rng)
        x = self.sample_initial_hidden(1, rng)
        roots, xs, obs = [int(r[0])], [x[0].copy()], []
        for t in range(1, int(horizon) + 1):
            r_new = self.sample_roots(r, t, rng)
            x = self.sample_hidden(x, r, r_new, t, rng)
            C, R = self._stack["C"][r_new[0]], self._stack["R"][r_new[0]]
            y = C @ x[0] + _psd_sqrt(R) @ rng.standard_normal(R.shape[0])
            r = r_new
            roots.append(int(r[0]))
            xs.append(x[0].copy())
            obs.append(y)
        return SimulatedRun(np.array(roots), np.array(xs), obs)
