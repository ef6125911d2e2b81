"""Model interface consumed by the particle-filter engine.

A model splits its hidden state into a sampled *root* chain and a part that
is marginalised exactly given the root trajectory.  All methods are batched:
roots are ``(N,)`` integer arrays, sufficient statistics carry the particle
axis first, and ``rng`` is a :class:`numpy.random.Generator` whose draws are
laid out one row per particle.

Time runs ``t = 0, 1, ..., T``; ``r_0`` has no observation and ``y_t`` is
observed after the transition into ``r_t``.
"""

import abc
from dataclasses import dataclass

import numpy as np

from rbpf.errors import UnsupportedFunction


# ---------------------------------------------------------------------------
# descriptors for functions of the state

@dataclass(frozen=True)
class Constant:
    value: float = 1.0


@dataclass(frozen=True)
class RootIndicator:
    """``1[r_t == value]`` (location or regime indicator)."""

    value: int


@dataclass(frozen=True)
class CellColor:
    """``1[M_t(cell) == color]`` for the grid world."""

    cell: int
    color: int


@dataclass(frozen=True)
class StateComponent:
    """Component ``index`` of the continuous state ``x_t``."""

    index: int = 0


def describe(f):
    name = type(f).__name__
    fields = ",".join(f"{k}={v}" for k, v in vars(f).items())
    return f"{name}({fields})"


class RbpfModel(abc.ABC):
    """Abstract generative model for Rao-Blackwellised filtering."""

    #: whether ``successors`` / ``initial_support`` enumerate the root space
    enumerable = False

    # -- root chain ----------------------------------------------------------

    @abc.abstractmethod
    def sample_initial_roots(self, n, rng):
        """Draw ``n`` values of ``r_0``."""

    @abc.abstractmethod
    def initial_log_prob(self, roots):
        """``log p(r_0)`` per entry."""

    @abc.abstractmethod
    def sample_roots(self, prev, t, rng):
        """Draw ``r_t ~ p(. | r_{t-1})`` for every particle."""

    @abc.abstractmethod
    def transition_log_prob(self, prev, roots, t):
        """``log p(r_t | r_{t-1})`` per particle."""

    def successors(self, prev, t):
        """``(values, log_probs)`` of shape (N, K) listing every successor.

        Duplicate values are allowed; their probabilities add up.
        """
        raise NotImplementedError

    def initial_support(self):
        """``(values, log_probs)`` enumerating ``r_0``."""
        raise NotImplementedError

    # -- conditional filter ----------------------------------------------------

    @abc.abstractmethod
    def initial_stats(self, n):
        """Sufficient statistic of ``p(x_0)`` replicated for ``n`` particles."""

    @abc.abstractmethod
    def cond_step(self, stats, prev, roots, y, t):
        """Advance the exact conditional filter by one step.

        Returns ``(new_stats, log p(y_t | y_{1:t-1}, r_{0:t}))``; the input
        statistic is not modified.  Log-likelihoods are finite or ``-inf``.
        """

    def cond_predictive(self, stats, prev, roots, y, t):
        """Log predictive only; override when cheaper than a full step."""
        return self.cond_step(stats, prev, roots, y, t)[1]

    def take_stats(self, stats, idx):
        """Select particles ``idx`` (copies)."""
        if isinstance(stats, tuple):
            return tuple(s[idx] for s in stats)
        return stats[idx]

    # -- estimation support ------------------------------------------------------

    def conditional_expectation(self, f, roots, stats):
        """``E[f | y_{1:t}, r_{0:t}]`` per particle, in closed form."""
        out = self._root_function(f, roots)
        if out is None:
            raise UnsupportedFunction(f"{describe(f)} has no closed form for {type(self).__name__}")
        return out

    def evaluate(self, f, roots, hidden):
        """``f(r_t, x_t)`` per particle for jointly sampled states."""
        out = self._root_function(f, roots)
        if out is None:
            raise UnsupportedFunction(f"{describe(f)} cannot be evaluated by {type(self).__name__}")
        return out

    def _root_function(self, f, roots):
        if isinstance(f, Constant):
            return np.full(np.shape(roots)[0], float(f.value))
        if isinstance(f, RootIndicator):
            return (np.asarray(roots) == f.value).astype(np.float64)
        return None

    # joint sampling of the marginalised part, used by the plain estimator

    def sample_initial_hidden(self, n, rng):
        raise NotImplementedError

    def sample_hidden(self, hidden, prev, roots, t, rng):
        raise NotImplementedError

    def hidden_log_likelihood(self, hidden, roots, y, t):
        """``log p(y_t | r_t, x_t)`` for jointly sampled states."""
        raise NotImplementedError

    # -- simulation ---------------------------------------------------------------

    @abc.abstractmethod
    def simulate(self, horizon, rng):
        """Draw a :class:`SimulatedRun` of ``horizon`` observations."""

    def check_contract(self, n=16, t=1, seed=0):
        """Sanity checks on the interface; raises AssertionError on violation."""
        rng = np.random.default_rng(seed)
        if self.enumerable:
            vals, lp = self.initial_support()
            assert abs(np.exp(lp).sum() - 1.0) < 1e-9, "initial law not normalised"
            prev = np.repeat(vals, max(1, n // max(1, len(vals))))
            _, lps = self.successors(prev, t)
            assert np.allclose(np.exp(lps).sum(axis=1), 1.0, atol=1e-9, rtol=0), \
                "transition rows not stochastic"
        roots0 = self.sample_initial_roots(n, rng)
        roots1 = self.sample_roots(roots0, t, rng)
        run = self.simulate(t, rng)
        _, ll = self.cond_step(self.initial_stats(n), roots0, roots1, run.observations[0], t)
        assert not np.isnan(ll).any(), "cond_step returned NaN"


@dataclass
class SimulatedRun:
    """Hidden truth plus observations ``y_1..y_T``.

    ``roots`` has ``T + 1`` entries (``r_0..r_T``); ``hidden`` holds the
    marginalised state per step (map rows or ``x_t``), ``T + 1`` entries.
    """

    roots: np.ndarray
    hidden: np.ndarray
    observations: list

    @property
    def horizon(self):
        return len(self.observations)
