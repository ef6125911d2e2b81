"""Statistical harnesses: Rao-Blackwellised vs plain importance sampling,
weight degeneracy over time, and MSE scaling in the number of particles.

Every harness is deterministic given its seed.  Trials draw from
``trial_rng(seed, trial, stream)`` so results do not depend on how trials
are distributed over workers.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as st

from rbpf.engine import FilterConfig, ResamplePolicy, run_filter
from rbpf.errors import UnsupportedFunction
from rbpf.weights import normalize

ROOT_STREAM = 0
HIDDEN_STREAM = 1


@dataclass(frozen=True)
class DiagnosticThresholds:
    """Significance levels and tolerances used for verdicts."""

    variance_alpha: float = 0.01
    trend_alpha: float = 0.05
    mean_sigmas: float = 4.0
    slope_range: tuple = (-1.3, -0.7)
    max_weight: float = 0.5
    paired_fraction: float = 0.95


def trial_rng(seed, trial, stream=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial), int(stream)])))


def map_trials(fn, args, workers=1):
    """``[fn(*a) for a in args]``, optionally over a process pool.

    Order is preserved, so output is identical for any worker count.
    """
    args = list(args)
    if workers <= 1 or len(args) < 2:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * workers))))


def tv_distance(p, q):
    """Total variation distance between two distributions on the same support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    for name, v in (("p", p), ("q", q)):
        if (v < -1e-12).any() or abs(v.sum(axis=-1) - 1.0).max() > 1e-9:
            raise ValueError(f"{name} is not a normalised distribution")
    return 0.5 * np.abs(p - q).sum(axis=-1)


def mann_kendall(values):
    """One-sided Mann-Kendall test for an increasing trend.

    Returns ``(tau, p_value)``; the statistic is Kendall's tau against time.
    """
    values = np.asarray(values, dtype=np.float64)
    res = st.kendalltau(np.arange(values.size), values, alternative="greater")
    return float(res.statistic), float(res.pvalue)


def paired_variance_test(a, b):
    """Pitman-Morgan test of ``var(a) < var(b)`` for paired samples.

    ``var(b) - var(a) = cov(b - a, b + a)``, so the test is a one-sided test
    of positive correlation between the difference and the sum.  Returns
    ``(correlation, p_value)``; degenerate inputs give ``(nan, 1.0)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d, s = b - a, b + a
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    if np.ptp(d) <= 1e-12 * scale or np.ptp(s) <= 1e-12 * scale:
        return float("nan"), 1.0
    res = st.pearsonr(d, s, alternative="greater")
    return float(res.statistic), float(res.pvalue)


def variance_not_greater(a, b, alpha):
    """Independent samples: is ``var(a) <= var(b)`` not rejected at ``alpha``?

    One-sided F test of ``H0: var(a) <= var(b)`` against ``var(a) > var(b)``.
    Returns ``(passes, p_value)``; two zero variances pass trivially.
    """
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    if va == 0:
        return True, 1.0
    if vb == 0:
        return False, 0.0
    p = float(st.f.sf(va / vb, len(a) - 1, len(b) - 1))
    return p >= alpha, p


# ---------------------------------------------------------------------------
# Rao-Blackwellised vs plain importance sampling


@dataclass
class EstimatorSummary:
    mean: float
    variance: float
    mse: float
    weight_variance: float


@dataclass
class EstimatorReport:
    trials: int
    n_particles: int
    truth: float
    plain: EstimatorSummary
    rao_blackwellised: EstimatorSummary
    variance_correlation: float
    variance_p_value: float
    paired_win_fraction: float
    batch_win_fraction: float
    weight_variance_p_value: float
    estimates: dict = field(default_factory=dict, repr=False)

    def variance_reduced(self, alpha=0.01):
        return self.variance_p_value < alpha

    def to_dict(self, with_estimates=False):
        out = asdict(self)
        if not with_estimates:
            out.pop("estimates")
        return out


def _is_trial(model, f, observations, n, seed, trial, log_evidence):
    rng_r = trial_rng(seed, trial, ROOT_STREAM)
    rng_x = trial_rng(seed, trial, HIDDEN_STREAM)
    roots = np.asarray(model.sample_initial_roots(n, rng_r))
    hidden = model.sample_initial_hidden(n, rng_x)
    stats = model.initial_stats(n)
    lw_rb = np.zeros(n)
    lw_plain = np.zeros(n)
    for t, y in enumerate(observations, start=1):
        new = np.asarray(model.sample_roots(roots, t, rng_r))
        hidden = model.sample_hidden(hidden, roots, new, t, rng_x)
        stats, ll = model.cond_step(stats, roots, new, y, t)
        lw_rb += ll
        lw_plain += model.hidden_log_likelihood(hidden, new, y, t)
        roots = new
    w_rb = np.exp(normalize(lw_rb)[0])
    w_plain = np.exp(normalize(lw_plain)[0])
    est_rb = float(np.dot(w_rb, model.conditional_expectation(f, roots, stats)))
    est_plain = float(np.dot(w_plain, model.evaluate(f, roots, hidden)))
    # weights on the scale where their expectation is one
    with np.errstate(over="ignore"):
        wv_rb = float(np.var(np.exp(lw_rb - log_evidence)))
        wv_plain = float(np.var(np.exp(lw_plain - log_evidence)))
    return est_plain, est_rb, wv_plain, wv_rb


def compare_estimators(model, f, observations, n_particles, trials, seed=0,
                       truth=None, log_evidence=None, batches=20, workers=1):
    """Plain vs Rao-Blackwellised one-pass importance sampling of ``E[f | y]``.

    Both estimators propose roots from the prior and share the root draws of
    each trial.  The plain estimator also samples the marginalised state and
    weights by the joint likelihood; the Rao-Blackwellised one weights by the
    conditional predictive and averages the closed-form ``E[f | y, r]``.

    ``truth`` and ``log_evidence`` default to exact enumeration.  Trials are
    also split into ``batches`` consecutive groups; ``batch_win_fraction`` is
    the share of groups whose Rao-Blackwellised MSE does not exceed the plain
    one, and ``paired_win_fraction`` the same share over single trials.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    # fail early when either side cannot handle f
    probe = model.initial_stats(1)
    r0 = np.zeros(1, dtype=np.int64)
    model.conditional_expectation(f, r0, probe)
    try:
        model.evaluate(f, r0, model.sample_initial_hidden(1, np.random.default_rng(0)))
    except NotImplementedError as exc:
        raise UnsupportedFunction(f"{type(model).__name__} cannot sample its marginalised state") from exc
    if truth is None or log_evidence is None:
        from rbpf import oracles

        if truth is None:
            truth = oracles.exact_expectation(model, observations, f)
        if log_evidence is None:
            log_evidence = oracles.exact_log_evidence(model, observations)
    out = map_trials(
        _is_trial,
        [(model, f, observations, n_particles, seed, k, log_evidence) for k in range(trials)],
        workers,
    )
    arr = np.array(out)
    plain, rb = arr[:, 0], arr[:, 1]
    corr, p_var = paired_variance_test(rb, plain)
    if np.all(np.isfinite(arr[:, 2:])):
        _, p_w = paired_variance_test(arr[:, 3], arr[:, 2])
    else:
        p_w = float("nan")
    err_plain, err_rb = (plain - truth) ** 2, (rb - truth) ** 2

    def summary(est, err, wv):
        return EstimatorSummary(float(est.mean()), float(est.var(ddof=1)), float(err.mean()), float(wv.mean()))

    return EstimatorReport(
        trials=trials,
        n_particles=n_particles,
        truth=float(truth),
        plain=summary(plain, err_plain, arr[:, 2]),
        rao_blackwellised=summary(rb, err_rb, arr[:, 3]),
        variance_correlation=corr,
        variance_p_value=p_var,
        paired_win_fraction=float(np.mean(err_rb <= err_plain)),
        batch_win_fraction=float(np.mean([
            a.mean() <= b.mean()
            for a, b in zip(np.array_split(err_rb, min(batches, trials)), np.array_split(err_plain, min(batches, trials)))
        ])),
        weight_variance_p_value=float(p_w),
        estimates={"plain": plain, "rao_blackwellised": rb},
    )


# ---------------------------------------------------------------------------
# weight degeneracy


@dataclass
class WeightTrace:
    replicates: int
    n_particles: int
    weight_variance: np.ndarray
    max_weight: np.ndarray
    trend_tau: float
    trend_p_value: float

    def to_dict(self):
        return {
            "replicates": self.replicates,
            "n_particles": self.n_particles,
            "weight_variance": [float(v) for v in self.weight_variance],
            "max_weight": [float(v) for v in self.max_weight],
            "trend_tau": self.trend_tau,
            "trend_p_value": self.trend_p_value,
        }


def _degeneracy_replicate(model, n, horizon, seed, rep):
    run = model.simulate(horizon, trial_rng(seed, rep, ROOT_STREAM))
    cfg = FilterConfig(n, resample=ResamplePolicy("never"), seed=int(trial_rng(seed, rep, HIDDEN_STREAM).integers(2**31)))
    _, trace = run_filter(model, run.observations, cfg)
    w = np.array(trace.weights)
    # variance of the weights rescaled to mean one: N * sum(w^2) - 1
    return (n * w).var(axis=1), w.max(axis=1)


def weight_variance_trace(model, n_particles, horizon, replicates, seed=0, workers=1):
    """Per-step weight variance and maximum weight under SIS without selection.

    Each replicate simulates fresh data and runs the prior-proposal filter
    with resampling disabled.  The variance is that of the weights rescaled
    to mean one (``N * w``), averaged over replicates.
    """
    out = map_trials(
        _degeneracy_replicate,
        [(model, n_particles, horizon, seed, k) for k in range(replicates)],
        workers,
    )
    var = np.mean([o[0] for o in out], axis=0)
    mx = np.mean([o[1] for o in out], axis=0)
    tau, p = mann_kendall(var)
    return WeightTrace(replicates, n_particles, var, mx, tau, p)


# ---------------------------------------------------------------------------
# MSE scaling


@dataclass
class MseTable:
    n_particles: list
    mse: list
    standard_error: list
    slope: float
    truth: float

    def rows(self):
        return list(zip(self.n_particles, self.mse, self.standard_error))

    def to_dict(self):
        return asdict(self)


def _mse_trial(model, f, observations, cfg, truth):
    def fn(m, ps):
        return ps.estimate(m.conditional_expectation(f, ps.roots, ps.stats))

    _, trace = run_filter(model, observations, cfg, estimators={"f": fn})
    return (trace.estimates["f"][-1] - truth) ** 2


def mse_vs_n(model, f, observations, ns, trials, seed=0, truth=None, base=None, workers=1):
    """Empirical MSE of the filtering estimate of ``f`` at the final step.

    The estimate is the weighted average before selection.  ``base`` is a
    :class:`FilterConfig` supplying everything but ``n_particles`` and the
    seed.  Returns a table with the least-squares slope of log MSE on log N.
    """
    if truth is None:
        from rbpf import oracles

        truth = oracles.exact_expectation(model, observations, f)
    base = base or FilterConfig(1)
    rows_mse, rows_se = [], []
    for n in ns:
        args = []
        for k in range(trials):
            s = int(trial_rng(seed, k, int(n)).integers(2**31))
            cfg = FilterConfig(
                n, proposal=base.proposal, resampler=base.resampler, resample=base.resample,
                mcmc=base.mcmc, seed=s,
            )
            args.append((model, f, observations, cfg, truth))
        sq = np.array(map_trials(_mse_trial, args, workers))
        rows_mse.append(float(sq.mean()))
        rows_se.append(float(sq.std(ddof=1) / np.sqrt(sq.size)))
    slope = float(np.polyfit(np.log(ns), np.log(rows_mse), 1)[0])
    return MseTable([int(n) for n in ns], rows_mse, rows_se, slope, float(truth))


# ---------------------------------------------------------------------------
# location tracking against the exact filter


@dataclass
class LocationComparison:
    seeds: int
    n_particles: int
    rbpf_tv: list
    bk_tv: list

    @property
    def rbpf_mean_tv(self):
        return float(np.mean(self.rbpf_tv))

    @property
    def bk_worse_fraction(self):
        return float(np.mean(np.array(self.bk_tv) > np.array(self.rbpf_tv)))

    def to_dict(self):
        return {
            "seeds": self.seeds,
            "n_particles": self.n_particles,
            "rbpf_tv": list(self.rbpf_tv),
            "bk_tv": list(self.bk_tv),
            "rbpf_mean_tv": self.rbpf_mean_tv,
            "bk_worse_fraction": self.bk_worse_fraction,
        }


def location_estimator(cfg):
    """Per-step location marginal estimator matching ``cfg``'s proposal."""
    rb = cfg.proposal.value == "optimal"

    def fn(model, ps):
        return ps.root_marginal(model.n_cells, rao_blackwell=rb)

    return fn


def _location_trial(model, cfg, horizon, seed, k):
    from rbpf import oracles

    run = model.simulate(horizon, trial_rng(seed, k, ROOT_STREAM))
    obs = run.observations
    exact, _, _, _ = oracles.exact_filter(model, obs)
    bk, _, _, _ = oracles.bk_filter(model, obs)
    cfg = FilterConfig(
        cfg.n_particles, proposal=cfg.proposal, resampler=cfg.resampler, resample=cfg.resample,
        mcmc=cfg.mcmc, seed=int(trial_rng(seed, k, HIDDEN_STREAM).integers(2**31)),
    )
    _, trace = run_filter(model, obs, cfg, estimators={"loc": location_estimator(cfg)})
    est = np.array(trace.estimates["loc"])
    return float(tv_distance(est, exact).mean()), float(tv_distance(bk, exact).mean())


def location_comparison(model, cfg, seeds, horizon=None, seed=0, workers=1):
    """Mean per-step TV distance to the exact location marginal, RBPF vs BK.

    Each of ``seeds`` replicates simulates a run from ``model`` and scores
    both filters on it.
    """
    out = map_trials(_location_trial, [(model, cfg, horizon, seed, k) for k in range(seeds)], workers)
    return LocationComparison(seeds, cfg.n_particles, [o[0] for o in out], [o[1] for o in out])
