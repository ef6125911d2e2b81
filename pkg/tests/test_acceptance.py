"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line.

Run alone with ``pytest -m slow tests/test_acceptance.py -s`` (the lines are
also printed without ``-s``).
"""

import time

import numpy as np
import pytest
from scipy import stats as st

from _quadrature import quadrature_log_pred

from rbpf import oracles, resampling
from rbpf import diagnostics as dg
from rbpf.cli import main as cli_main
from rbpf.engine import (
    FilterConfig,
    ResamplePolicy,
    mcmc_rejuvenate,
    particles_from_trajectories,
    run_filter,
    sis_step,
)
from rbpf.kalman import GaussianBelief, RegimeParams, kalman_predictive
from rbpf.model import CellColor, RootIndicator, StateComponent
from rbpf.models import GridWorldModel, corridor_scenario, load_scenario, ten_by_ten_scenario

pytestmark = pytest.mark.slow

TH = dg.DiagnosticThresholds()
LOCATION_CFG = FilterConfig(50, proposal="optimal", resampler="stratified", resample=ResamplePolicy.parse("ess:0.5"))


@pytest.fixture
def report(capsys):
    def emit(name, passed, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {name}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return emit


def test_01_corridor_location_tracking(report):
    m, _ = corridor_scenario()
    t0 = time.perf_counter()
    comp = dg.location_comparison(m, LOCATION_CFG, 20, seed=0)
    elapsed = time.perf_counter() - t0
    ok = comp.rbpf_mean_tv < 0.15 and comp.bk_worse_fraction >= 0.8 and elapsed < 30
    detail = (f"rbpf mean TV {comp.rbpf_mean_tv:.4f} (< 0.15), bk mean TV {np.mean(comp.bk_tv):.4f}, "
              f"bk worse on {comp.bk_worse_fraction:.0%} of seeds (>= 80%), {elapsed:.1f}s (< 30s)")
    assert report("1 corridor location tracking", ok, detail)


def _map_learning_trial(model, seed):
    run = model.simulate(450, np.random.default_rng(seed))
    horizon = model.coverage_step(run.roots)
    assert horizon is not None, f"seed {seed} never covered the grid"
    obs = run.observations[:horizon]
    cfg = FilterConfig(100, proposal="optimal", resampler="stratified",
                       resample=ResamplePolicy.parse("ess:0.5"), seed=seed)

    def map_estimate(m, ps):
        return np.einsum("n,nlc->lc", ps.weights, ps.stats) if ps.step == horizon else None

    _, trace = run_filter(model, obs, cfg, estimators={"map": map_estimate})
    est = trace.estimates["map"][-1].argmax(axis=1)
    return int((est == run.hidden[horizon]).sum()), horizon


def test_02_ten_by_ten_map_learning(report):
    m, _ = ten_by_ten_scenario()
    t0 = time.perf_counter()
    out = [_map_learning_trial(m, s) for s in range(10)]
    elapsed = time.perf_counter() - t0
    correct = [c for c, _ in out]
    med = float(np.median(correct))
    ok = med >= 90 and elapsed < 60
    detail = (f"median {med:g}/100 cells correct (>= 90), per seed {correct}, "
              f"coverage steps {[h for _, h in out]}, {elapsed:.1f}s (< 60s)")
    assert report("2 ten_by_ten map learning", ok, detail)


def _most_uncertain_cell(model, obs):
    paths, p, stats = oracles.exact_path_posterior(model, obs)
    marg = np.einsum("p,plc->lc", p, stats)
    return CellColor(int(np.argmax(marg[:, 0] * (1 - marg[:, 0]))), 0)


@pytest.mark.parametrize("setup", ["two_cell", "jmls"])
def test_03_rao_blackwell_variance(report, setup):
    if setup == "two_cell":
        m = load_scenario("two_cell")
        obs = m.simulate(8, np.random.default_rng(0)).observations
        f = _most_uncertain_cell(m, obs)
    else:
        m = load_scenario("jmls_switching")
        obs = m.simulate(10, np.random.default_rng(0)).observations
        f = StateComponent(0)
    rep = dg.compare_estimators(m, f, obs, 100, 2000, seed=0)
    ok = rep.variance_p_value < TH.variance_alpha and rep.batch_win_fraction >= TH.paired_fraction
    detail = (f"var rb {rep.rao_blackwellised.variance:.3e} vs plain {rep.plain.variance:.3e} "
              f"(paired test p={rep.variance_p_value:.2e} < {TH.variance_alpha}), "
              f"MSE wins {rep.batch_win_fraction:.0%} of 20 seed batches (>= 95%), "
              f"{rep.paired_win_fraction:.1%} of single seeds")
    assert report(f"3 Rao-Blackwellised variance [{setup}]", ok, detail)


def test_04_optimal_proposal_equal_increments(report):
    m, _ = corridor_scenario()
    run = m.simulate(16, np.random.default_rng(0))
    n = 50
    spread_opt, spread_prior = [], []
    for t in range(1, 17):
        # every particle descends from one ancestor following the true path
        ancestor = np.tile(run.roots[:t], (n, 1))
        ps = particles_from_trajectories(m, ancestor, run.observations)
        y = run.observations[t - 1]
        opt = sis_step(m, ps, y, FilterConfig(n, proposal="optimal", seed=t))
        pri = sis_step(m, ps, y, FilterConfig(n, proposal="prior", seed=t))
        spread_opt.append(float(np.ptp(opt.increments)))
        # the prior can only spread increments when the successors' predictives differ
        succ, _ = opt.proposal
        lik = [m.cond_predictive(ps.stats[:1], ps.roots[:1], succ[:1, k], y, t)[0] for k in range(2)]
        if lik[0] != lik[1]:
            spread_prior.append(float(np.ptp(pri.increments)))
    ok = max(spread_opt) == 0.0 and len(spread_prior) > 0 and min(spread_prior) > 0.0
    detail = (f"optimal spread max {max(spread_opt):g} (== 0) over t=1..16, prior spread min "
              f"{min(spread_prior):.3g} (> 0) over the {len(spread_prior)} steps with distinguishable successors")
    assert report("4 optimal proposal equal increments", ok, detail)


def test_05_weight_degeneracy(report):
    m, _ = corridor_scenario()
    tr = dg.weight_variance_trace(m, 10, 20, 500, seed=0)
    ok = tr.trend_p_value < TH.trend_alpha and tr.max_weight[-1] > TH.max_weight
    detail = (f"Mann-Kendall tau {tr.trend_tau:.3f} p={tr.trend_p_value:.2e} (< {TH.trend_alpha}), "
              f"mean max weight at t=20 {tr.max_weight[-1]:.3f} (> {TH.max_weight}), N=10")
    assert report("5 weight degeneracy", ok, detail)


def test_06_mse_rate(report):
    m, _ = corridor_scenario()
    obs = m.simulate(16, np.random.default_rng(1)).observations
    p = oracles.exact_root_marginal(m, obs, m.n_cells)
    f = RootIndicator(int(np.argmax(p * (1 - p))))
    tab = dg.mse_vs_n(m, f, obs, [50, 100, 200, 400, 800], 500, seed=0)
    lo, hi = TH.slope_range
    ok = lo <= tab.slope <= hi
    detail = f"slope {tab.slope:.3f} in [{lo}, {hi}], MSE {[f'{v:.2e}' for v in tab.mse]}"
    assert report("6 MSE rate in N", ok, detail)


def test_07_resampling_contract(report):
    w = np.array([0.4, 0.3, 0.2, 0.1])
    n, draws = 10, 10_000
    counts = {}
    for k, scheme in enumerate(resampling.Resampler):
        rng = np.random.default_rng([7, k])
        counts[scheme] = np.array([resampling.offspring_counts(scheme, w, n, rng) for _ in range(draws)])
    sums_ok = all((c.sum(axis=1) == n).all() for c in counts.values())
    means_ok = all(
        np.all(np.abs(c.mean(axis=0) - n * w) <= 4 * c.std(axis=0, ddof=1) / np.sqrt(draws) + 1e-12)
        for c in counts.values()
    )
    S, R, M = (counts[s][:, 0] for s in (resampling.Resampler.STRATIFIED, resampling.Resampler.RESIDUAL,
                                         resampling.Resampler.MULTINOMIAL))
    sr, p_sr = dg.variance_not_greater(S, R, TH.variance_alpha)
    rm, p_rm = dg.variance_not_greater(R, M, TH.variance_alpha)
    ok = sums_ok and means_ok and sr and rm
    detail = (f"sums exact {sums_ok}, means within 4 sigma {means_ok}, var(count_1) "
              f"stratified {S.var(ddof=1):.4f} <= residual {R.var(ddof=1):.4f} (p={p_sr:.3g}) "
              f"<= multinomial {M.var(ddof=1):.4f} (p={p_rm:.3g})")
    assert report("7 resampling contract", ok, detail)


def test_08_conditional_filter_exactness(report):
    rng = np.random.default_rng(8)
    worst_map = 0.0
    for _ in range(100):
        m = GridWorldModel(3, 2, "X", neighborhood=str(rng.choice(["single", "3x3"])),
                           sensor_flip=float(rng.uniform(0.01, 0.4)), p_change=float(rng.uniform(0, 0.3)))
        length = int(rng.integers(1, 12))
        locs = rng.integers(0, 6, size=length)
        colours = rng.integers(0, 2, size=6)
        obs = [m.observe(int(l), colours, rng) for l in locs]
        exact = oracles.exact_conditional_map(m, locs, obs)
        stats = m.initial_stats(1)
        for t, (l, y) in enumerate(zip(locs, obs), start=1):
            stats, _ = m.cond_step(stats, locs[max(t - 2, 0):t - 1] if t > 1 else locs[:1], np.array([l]), y, t)
        worst_map = max(worst_map, float(np.abs(stats[0] - exact).max()))
    worst_kf = 0.0
    for _ in range(100):
        mean, P = rng.uniform(-3, 3), rng.uniform(0.05, 5)
        A, C = rng.uniform(-2, 2), rng.uniform(-2, 2)
        Q, R = rng.uniform(0.05, 2), rng.uniform(0.05, 5)
        y = rng.uniform(-6, 6)
        lp = kalman_predictive(GaussianBelief([mean], [[P]]), RegimeParams(A, C, Q, R), y)
        worst_kf = max(worst_kf, abs(lp - quadrature_log_pred(mean, P, A, C, Q, R, y)))
    ok = worst_map <= 1e-10 and worst_kf <= 1e-6
    detail = f"map max abs error {worst_map:.2e} (<= 1e-10), Kalman log-density max error {worst_kf:.2e} (<= 1e-6)"
    assert report("8 conditional filter exactness", ok, detail)


def test_09_evidence_consistency(report):
    m = load_scenario("two_cell")
    obs = m.simulate(8, np.random.default_rng(0)).observations
    exact = float(np.sum(oracles.exact_filter(m, obs)[2]))
    est = np.array([run_filter(m, obs, FilterConfig(200, seed=s))[1].log_likelihood for s in range(200)])
    se = est.std(ddof=1) / np.sqrt(est.size)
    ok = abs(est.mean() - exact) <= 3 * se
    detail = f"mean log-evidence {est.mean():.5f} vs exact {exact:.5f}, |diff| {abs(est.mean() - exact):.2e} <= 3 SE {3 * se:.2e}"
    assert report("9 evidence consistency", ok, detail)


def test_10_mcmc_invariance(report):
    m = load_scenario("two_cell")
    obs = m.simulate(8, np.random.default_rng(0)).observations
    paths, p, _ = oracles.exact_path_posterior(m, obs)
    rng = np.random.default_rng(10)
    idx = rng.choice(paths.shape[0], size=10_000, p=p)
    ps = particles_from_trajectories(m, paths[idx], obs, window=4)
    out = mcmc_rejuvenate(m, ps, obs, 4, 1, rng)
    target = oracles.exact_root_marginal(m, obs, m.n_cells)
    observed = np.bincount(out.roots, minlength=m.n_cells)
    moved = float(np.mean(np.any(out.trajectory != ps.trajectory, axis=1)))
    chi2, pval = st.chisquare(observed, 10_000 * target)
    ok = pval >= 0.01 and moved > 0
    detail = f"chi2 {chi2:.3f} p={pval:.3f} (>= 0.01), counts {observed.tolist()}, {moved:.1%} of paths moved"
    assert report("10 MCMC invariance", ok, detail)


def _snapshot(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_11_cli_determinism(report, tmp_path):
    commands = [
        ["simulate", "--scenario", "corridor", "--seed", "4"],
        ["filter", "--scenario", "corridor", "--seed", "4", "--methods", "rbpf,exact,bk",
         "--proposal", "optimal", "--resampler", "stratified", "--resample", "ess:0.5", "--mcmc", "3,1"],
        ["filter", "--scenario", "jmls_switching", "--horizon", "6", "--methods", "rbpf,exact"],
        ["diagnose", "--check", "prop1", "--trials", "40", "--horizon", "4"],
        ["diagnose", "--check", "prop2", "--scenario", "jmls_switching", "--trials", "40", "--horizon", "4"],
        ["diagnose", "--check", "prop4", "--trials", "20"],
        ["diagnose", "--check", "thm5", "--trials", "10", "--ns", "10,20"],
        ["diagnose", "--check", "fig4", "--trials", "3"],
    ]
    failures = []
    for k, cmd in enumerate(commands):
        snaps = []
        for rep, workers in enumerate((1, 1, 2)):
            out = tmp_path / f"c{k}" / f"r{rep}"
            argv = cmd + ["--out", str(out / "run.json" if cmd[0] == "simulate" else out)]
            if cmd[0] != "simulate":
                argv += ["--workers", str(workers)]
            out.mkdir(parents=True, exist_ok=True)
            assert cli_main(argv) == 0, argv
            snaps.append(_snapshot(out))
        if not (snaps[0] == snaps[1] == snaps[2]) or not snaps[0]:
            failures.append(" ".join(cmd[:3]))
    ok = not failures
    detail = f"{len(commands)} commands x (rerun, 2 workers) byte-identical" if ok else f"differs: {failures}"
    assert report("11 CLI determinism", ok, detail)
