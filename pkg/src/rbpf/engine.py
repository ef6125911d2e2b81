"""Generic Rao-Blackwellised particle filter.

Each step samples the root chain from a proposal, advances every particle's
exact conditional filter, reweights in log-space, and optionally resamples and
rejuvenates with a Metropolis-Hastings move over a trailing window of roots.

Randomness is derived from ``(seed, t, stream)`` through counter-based Philox
generators, and each particle consumes its own row of every draw, so results
depend only on the seed and never on how the work is scheduled.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from rbpf import resampling
from rbpf.errors import ProposalUnsupported, RbpfError, WindowTooLarge, ZeroPredictive
from rbpf.weights import effective_sample_size, normalize, uniform_log_weights

PROPOSAL_STREAM = 0
SELECTION_STREAM = 1
MCMC_STREAM = 2


def step_rng(seed, t, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(t), int(stream)])))


class Proposal(str, enum.Enum):
    PRIOR = "prior"
    OPTIMAL = "optimal"


@dataclass(frozen=True)
class ResamplePolicy:
    """``always`` (every step), ``ess`` (when ESS < threshold * N) or ``never``."""

    kind: str = "always"
    threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in ("always", "ess", "never"):
            raise ValueError(f"unknown resample policy {self.kind!r}")
        if self.kind == "ess" and not 0.0 < self.threshold <= 1.0:
            raise ValueError("ESS threshold must lie in (0, 1]")

    @classmethod
    def parse(cls, text):
        """Parse ``always``, ``never`` or ``ess:<tau>``."""
        text = text.strip().lower()
        if text in ("always", "never"):
            return cls(text)
        if text.startswith("ess:"):
            return cls("ess", float(text[4:]))
        raise ValueError(f"cannot parse resample policy {text!r}")

    def __str__(self):
        return f"ess:{self.threshold:g}" if self.kind == "ess" else self.kind

    def wants(self, ess, n):
        if self.kind == "always":
            return True
        if self.kind == "never":
            return False
        return ess < self.threshold * n


@dataclass(frozen=True)
class MCMCConfig:
    window: int = 1
    moves: int = 1

    def __post_init__(self):
        if self.window < 1 or self.moves < 0:
            raise ValueError("MCMC needs window >= 1 and moves >= 0")

    @classmethod
    def parse(cls, text):
        k, m = (int(v) for v in text.split(","))
        return cls(k, m)


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int
    proposal: Proposal = Proposal.PRIOR
    resampler: resampling.Resampler = resampling.Resampler.MULTINOMIAL
    resample: ResamplePolicy = ResamplePolicy()
    mcmc: MCMCConfig | None = None
    seed: int = 0
    keep_trajectory: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        object.__setattr__(self, "proposal", Proposal(self.proposal))
        object.__setattr__(self, "resampler", resampling.Resampler(self.resampler))


@dataclass
class RootWindow:
    """Trailing roots plus the conditional statistic just before them.

    ``roots[:, 0]`` is the anchor ``r_c`` when ``checkpoint_step >= 0``;
    the remaining columns are ``r_{c+1}..r_t``.  With ``checkpoint_step == -1``
    every column (``r_0..r_t``) is a movable site.
    """

    roots: np.ndarray
    checkpoint_stats: object
    checkpoint_step: int

    @property
    def n_sites(self):
        return self.roots.shape[1] - (1 if self.checkpoint_step >= 0 else 0)


@dataclass
class WeightedParticleSet:
    roots: np.ndarray
    stats: object
    log_weights: np.ndarray
    step: int = 0
    increments: np.ndarray | None = None
    window: RootWindow | None = None
    trajectory: np.ndarray | None = None
    proposal: tuple | None = None

    @property
    def n(self):
        return self.roots.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def estimate(self, values):
        """Weighted average of per-particle values."""
        return float(np.dot(self.weights, values))

    def root_marginal(self, n_values, rao_blackwell=False):
        """Weighted histogram of the current root over ``0..n_values-1``.

        With ``rao_blackwell`` and a set produced by an optimal-proposal step,
        each particle contributes its whole proposal distribution over ``r_t``
        instead of the drawn value.  This is the same estimate with the
        sampling of ``r_t`` integrated out.
        """
        if not rao_blackwell:
            return np.bincount(self.roots, weights=self.weights, minlength=n_values)
        if self.proposal is None:
            raise ValueError("set carries no proposal; use the optimal proposal before selection")
        succ, log_q = self.proposal
        mass = self.weights[:, None] * np.exp(log_q)
        return np.bincount(succ.ravel(), weights=mass.ravel(), minlength=n_values)


@dataclass
class FilterTrace:
    weights: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    log_increments: list = field(default_factory=list)
    resampled: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)

    @property
    def log_likelihood(self):
        return float(np.sum(self.log_increments))

    def __len__(self):
        return len(self.log_increments)


def _take(model, ps, idx, log_weights):
    window = None
    if ps.window is not None:
        w = ps.window
        window = RootWindow(w.roots[idx], model.take_stats(w.checkpoint_stats, idx), w.checkpoint_step)
    return WeightedParticleSet(
        roots=ps.roots[idx],
        stats=model.take_stats(ps.stats, idx),
        log_weights=log_weights,
        step=ps.step,
        increments=None if ps.increments is None else ps.increments[idx],
        window=window,
        trajectory=None if ps.trajectory is None else ps.trajectory[idx],
    )


def initialize(model, cfg, window=None):
    """Particle set at ``t = 0``: roots from ``p(r_0)``, prior statistics."""
    n = cfg.n_particles
    roots = np.asarray(model.sample_initial_roots(n, step_rng(cfg.seed, 0, PROPOSAL_STREAM)))
    stats = model.initial_stats(n)
    win = None
    if window is not None:
        win = RootWindow(roots[:, None].copy(), model.initial_stats(n), -1)
    traj = roots[:, None].copy() if cfg.keep_trajectory else None
    return WeightedParticleSet(roots, stats, uniform_log_weights(n), 0, None, win, traj)


def _row_choice(log_probs, u):
    """Pick one column per row by inverse CDF of exp(log_probs)."""
    cdf = np.cumsum(np.exp(log_probs), axis=1)
    k = (cdf <= u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(k, log_probs.shape[1] - 1)


def _logsumexp_rows(a):
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


def optimal_proposal(model, prev, stats, y, t, strict=True):
    """Locally optimal proposal over an enumerable root space.

    Returns ``(successors, log_q, log_predictive)``: ``log_q`` (N, K) is the
    normalised proposal ``p(y_t | ..., r_t) p(r_t | r_{t-1}) / predictive``
    and ``log_predictive`` (N,) is the normaliser, which is the incremental
    weight whatever value is drawn.
    """
    if not model.enumerable:
        raise ProposalUnsupported(f"{type(model).__name__} does not enumerate its root space")
    succ, log_prior = model.successors(prev, t)
    ll = np.column_stack(
        [model.cond_predictive(stats, prev, succ[:, k], y, t) for k in range(succ.shape[1])]
    )
    with np.errstate(invalid="ignore"):
        joint = ll + log_prior
    joint = np.where(np.isnan(joint), -np.inf, joint)
    log_pred = _logsumexp_rows(joint)
    dead = log_pred == -np.inf
    if strict and dead.any():
        raise ZeroPredictive(f"observation impossible for {int(dead.sum())} particle(s)")
    with np.errstate(invalid="ignore"):
        log_q = joint - log_pred[:, None]
    # rows with no admissible successor fall back to the prior; their weight is zero
    log_q[dead] = log_prior[dead]
    return succ, log_q, log_pred


def sis_step(model, ps, y, cfg, rng=None):
    """Sequential importance sampling from ``t-1`` to ``t``.

    The returned log-weights are on the mean-one scale
    (``log(N * w_{t-1}) + increment``) so that :func:`normalize` yields the
    log predictive increment directly.
    """
    t = ps.step + 1
    if rng is None:
        rng = step_rng(cfg.seed, t, PROPOSAL_STREAM)
    prev = ps.roots
    n = ps.n
    if cfg.proposal is Proposal.OPTIMAL:
        succ, log_q, log_pred = optimal_proposal(model, prev, ps.stats, y, t, strict=False)
        k = _row_choice(log_q, rng.random(n))
        roots = succ[np.arange(n), k]
        stats, _ = model.cond_step(ps.stats, prev, roots, y, t)
        inc = log_pred
    else:
        roots = np.asarray(model.sample_roots(prev, t, rng))
        stats, inc = model.cond_step(ps.stats, prev, roots, y, t)
    inc = np.asarray(inc, dtype=np.float64)
    if np.isnan(inc).any():
        raise RbpfError("conditional filter returned NaN log-likelihood")

    window = ps.window
    if window is not None:
        window = RootWindow(np.column_stack([window.roots, roots]), window.checkpoint_stats, window.checkpoint_step)
    traj = None if ps.trajectory is None else np.column_stack([ps.trajectory, roots])
    proposal = (succ, log_q) if cfg.proposal is Proposal.OPTIMAL else None
    return WeightedParticleSet(
        roots=roots,
        stats=stats,
        log_weights=ps.log_weights + np.log(n) + inc,
        step=t,
        increments=inc,
        window=window,
        trajectory=traj,
        proposal=proposal,
    )


def apply_selection(model, ps, counts):
    """Copy particle ``i`` ``counts[i]`` times and reset weights to uniform."""
    idx = resampling.ancestors_from_counts(counts, ps.n)
    return _take(model, ps, idx, uniform_log_weights(ps.n))


def _trim_window(model, ps, observations, size):
    """Advance the checkpoint until at most ``size`` movable sites remain."""
    w = ps.window
    roots, stats, c = w.roots, w.checkpoint_stats, w.checkpoint_step
    while (roots.shape[1] - (1 if c >= 0 else 0)) > size:
        if c == -1:
            c = 0  # stats at t=0 are the prior; nothing to replay
            continue
        stats, _ = model.cond_step(stats, roots[:, 0], roots[:, 1], observations[c], c + 1)
        roots = roots[:, 1:]
        c += 1
    return replace(ps, window=RootWindow(roots, stats, c))


def _replay(model, window, path, observations):
    """Conditional log-likelihoods along ``path`` from the checkpoint.

    ``path`` has the same layout as ``window.roots``.  Returns the final
    statistic and an (N, n_steps) array of per-step log-likelihoods.
    """
    stats = window.checkpoint_stats
    c = window.checkpoint_step
    lls = []
    # column 0 is the anchor r_c, or r_0 when c == -1; either way no y precedes it
    t = max(c, 0)
    for j in range(1, path.shape[1]):
        t += 1
        stats, ll = model.cond_step(stats, path[:, j - 1], path[:, j], observations[t - 1], t)
        lls.append(ll)
    if lls:
        return stats, np.column_stack(lls)
    return stats, np.zeros((path.shape[0], 0))


def mcmc_rejuvenate(model, ps, observations, window, moves, rng):
    """Single-site Metropolis-Hastings over the last ``window`` roots.

    Each site ``s`` proposes ``r_s' ~ p(. | r_{s-1})`` (``p(r_0)`` at
    ``s = 0``) and accepts with probability
    ``min(1, p(r_{s+1}|r_s') / p(r_{s+1}|r_s) * prod_k p(y_k|..,r')/p(y_k|..,r))``
    where the likelihood ratio is replayed from the pre-window checkpoint.
    The kernel leaves ``p(r_{0:t} | y_{1:t})`` invariant; weights are unchanged.
    ``observations[k-1]`` must hold ``y_k``.
    """
    t = ps.step
    if window > t + 1:
        raise WindowTooLarge(f"window {window} exceeds the {t + 1} available roots")
    if moves == 0:
        return ps
    if ps.window is None:
        raise ValueError("particle set carries no root window; initialise with a window")
    ps = _trim_window(model, ps, observations, window)
    w = ps.window
    if w.n_sites < window:
        raise WindowTooLarge(f"particle set holds only {w.n_sites} movable roots")
    path = w.roots.copy()
    offset = 1 if w.checkpoint_step >= 0 else 0
    first_site = w.checkpoint_step + 1
    n = ps.n
    stats_cur, ll_cur = _replay(model, w, path, observations)
    for _ in range(moves):
        for j in range(offset, path.shape[1]):
            s = first_site + (j - offset)
            if s == 0:
                prop = np.asarray(model.sample_initial_roots(n, rng))
            else:
                prop = np.asarray(model.sample_roots(path[:, j - 1], s, rng))
            cand = path.copy()
            cand[:, j] = prop
            stats_new, ll_new = _replay(model, w, cand, observations)
            log_ratio = ll_new.sum(axis=1) - ll_cur.sum(axis=1)
            if j + 1 < path.shape[1]:
                log_ratio = log_ratio + (
                    model.transition_log_prob(prop, path[:, j + 1], s + 1)
                    - model.transition_log_prob(path[:, j], path[:, j + 1], s + 1)
                )
            log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
            accept = np.log(rng.random(n)) < log_ratio
            if accept.any():
                path[accept] = cand[accept]
                ll_cur = np.where(accept[:, None], ll_new, ll_cur)
                stats_cur = _merge_stats(model, stats_cur, stats_new, accept)
    traj = ps.trajectory
    if traj is not None:
        traj = traj.copy()
        k = path.shape[1] - offset
        traj[:, -k:] = path[:, offset:]
    return replace(
        ps,
        roots=path[:, -1].copy(),
        stats=stats_cur,
        window=RootWindow(path, w.checkpoint_stats, w.checkpoint_step),
        trajectory=traj,
    )


def _merge_stats(model, old, new, mask):
    idx = np.arange(mask.size)
    pick_new = model.take_stats(new, idx[mask])
    if isinstance(old, tuple):
        old = tuple(np.array(o) for o in old)
        for o, p in zip(old, pick_new):
            o[mask] = p
        return old
    old = np.array(old)
    old[mask] = pick_new
    return old


def particles_from_trajectories(model, trajectories, observations, window=None):
    """Uniformly weighted set whose particles follow the given root paths.

    ``trajectories`` is (N, t+1) holding ``r_0..r_t``; statistics are replayed
    along each path.  With ``window`` the set carries a root window usable by
    :func:`mcmc_rejuvenate`.
    """
    traj = np.asarray(trajectories)
    n, length = traj.shape
    t = length - 1
    stats = model.initial_stats(n)
    checkpoint = None
    c = t - window if window is not None else None
    if c is not None and c < -1:
        raise WindowTooLarge(f"window {window} exceeds the {t + 1} available roots")
    if c == -1:
        checkpoint = model.initial_stats(n)
    for s in range(1, length):
        if c is not None and s - 1 == c:
            checkpoint = stats
        stats, _ = model.cond_step(stats, traj[:, s - 1], traj[:, s], observations[s - 1], s)
    win = None
    if window is not None:
        cols = traj[:, max(c, 0):] if c >= 0 else traj
        win = RootWindow(cols.copy(), checkpoint, c)
    return WeightedParticleSet(traj[:, -1].copy(), stats, uniform_log_weights(n), t, None, win, traj.copy())


def run_filter(model, observations, cfg, estimators=None):
    """Run the filter over ``y_1..y_T``.

    ``estimators`` maps names to callables ``(model, ps) -> value`` evaluated
    on the normalised set before selection at every step.  Returns the final
    particle set and a :class:`FilterTrace`.  Errors carry the failing step.
    """
    if len(observations) == 0:
        raise ValueError("observation sequence is empty")
    if cfg.proposal is Proposal.OPTIMAL and not model.enumerable:
        raise ProposalUnsupported(f"{type(model).__name__} does not enumerate its root space")
    estimators = estimators or {}
    trace = FilterTrace(estimates={name: [] for name in estimators})
    mcmc = cfg.mcmc if cfg.mcmc is not None and cfg.mcmc.moves > 0 else None
    ps = initialize(model, cfg, window=mcmc.window if mcmc else None)
    n = cfg.n_particles
    for t in range(1, len(observations) + 1):
        try:
            ps = sis_step(model, ps, observations[t - 1], cfg)
            lw, log_inc = normalize(ps.log_weights)
            ps.log_weights = lw
            ess = effective_sample_size(lw)
            trace.weights.append(np.exp(lw))
            trace.ess.append(ess)
            trace.log_increments.append(float(log_inc))
            for name, fn in estimators.items():
                trace.estimates[name].append(fn(model, ps))
            resampled = cfg.resample.wants(ess, n)
            if resampled:
                counts = resampling.offspring_counts(
                    cfg.resampler, np.exp(lw), n, step_rng(cfg.seed, t, SELECTION_STREAM)
                )
                ps = apply_selection(model, ps, counts)
            trace.resampled.append(bool(resampled))
            if mcmc:
                ps = _trim_window(model, ps, observations, mcmc.window)
                if resampled:
                    ps = mcmc_rejuvenate(
                        model, ps, observations, min(mcmc.window, t + 1), mcmc.moves,
                        step_rng(cfg.seed, t, MCMC_STREAM),
                    )
        except RbpfError as exc:
            raise exc.with_step(t)
    return ps, trace
