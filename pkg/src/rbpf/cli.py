"""Command-line experiment runner.

    rbpf simulate --scenario corridor --seed 7 -o run.json
    rbpf filter --run run.json --methods rbpf,exact,bk --particles 50 --out results/
    rbpf diagnose --check prop4 --seed 1 --out report/

Exit codes: 0 ok, 2 configuration error, 3 exact oracle infeasible,
4 harness precondition failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from rbpf import diagnostics, oracles
from rbpf.engine import FilterConfig, MCMCConfig, Proposal, ResamplePolicy, run_filter
from rbpf.errors import ConfigError, RbpfError, StateSpaceTooLarge
from rbpf.model import CellColor, StateComponent
from rbpf.models import GridWorldModel, JmlsModel, load_model, load_scenario, model_from_dict, model_to_dict
from rbpf.resampling import Resampler

RUN_SCHEMA = "rbpf.run/1"
FILTER_SCHEMA = "rbpf.filter/1"
REPORT_SCHEMA = "rbpf.report/1"
METHODS = ("rbpf", "exact", "bk")
CHECKS = ("prop1", "prop2", "prop4", "thm5", "fig4")

# per-check defaults; flags given on the command line or in --config win
CHECK_DEFAULTS = {
    "prop1": {"scenario": "two_cell", "particles": 100, "trials": 2000, "horizon": 8},
    "prop2": {"scenario": "two_cell", "particles": 100, "trials": 2000, "horizon": 8},
    "prop4": {"scenario": "corridor", "particles": 10, "trials": 500, "horizon": 20},
    "thm5": {"scenario": "corridor", "particles": None, "trials": 500, "horizon": 16},
    "fig4": {"scenario": "corridor", "particles": 50, "trials": 20, "horizon": 16,
             "proposal": "optimal", "resampler": "stratified", "resample": "ess:0.5"},
}
THM5_NS = (50, 100, 200, 400, 800)

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE, EXIT_HARNESS = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# output helpers


def _dump_json(path, doc):
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"
    Path(path).write_text(text)


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_table(path, schema, meta, columns, rows):
    lines = [f"# schema: {schema}"]
    lines += [f"# {k}: {meta[k]}" for k in sorted(meta)]
    lines.append("\t".join(columns))
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _tolist(a):
    return np.asarray(a).tolist()


# ---------------------------------------------------------------------------
# configuration


def _load_config_file(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from exc
    if not isinstance(doc, dict):
        raise CliError("config file must hold a JSON object", EXIT_CONFIG)
    return {k.replace("-", "_"): v for k, v in doc.items() if k != "schema"}


def _settings(args, defaults=None):
    """Merge built-in defaults, the config file and explicit flags."""
    out = dict(defaults or {})
    out.update(_load_config_file(getattr(args, "config", None)))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "func"):
            out[k] = v
    return out


def _model(settings):
    if settings.get("model"):
        return load_model(settings["model"])
    name = settings.get("scenario")
    if not name:
        raise CliError("give --scenario or --model", EXIT_CONFIG)
    return load_scenario(name)


def _filter_config(settings, n_particles):
    try:
        mcmc = settings.get("mcmc")
        return FilterConfig(
            int(n_particles),
            proposal=Proposal(settings.get("proposal", "prior")),
            resampler=Resampler(settings.get("resampler", "multinomial")),
            resample=ResamplePolicy.parse(str(settings.get("resample", "always"))),
            mcmc=MCMCConfig.parse(mcmc) if mcmc else None,
            seed=int(settings.get("seed", 0)),
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


# ---------------------------------------------------------------------------
# simulate


def _run_doc(model, run, seed):
    return {
        "schema": RUN_SCHEMA,
        "seed": int(seed),
        "model": model_to_dict(model),
        "roots": _tolist(run.roots),
        "hidden": _tolist(run.hidden),
        "observations": [_tolist(y) for y in run.observations],
    }


def _observations(model, raw):
    dtype = np.int64 if isinstance(model, GridWorldModel) else np.float64
    return [np.atleast_1d(np.asarray(y, dtype=dtype)) for y in raw]


def cmd_simulate(args):
    s = _settings(args)
    model = _model(s)
    seed = int(s.get("seed", 0))
    horizon = s.get("horizon")
    if horizon is None:
        if not isinstance(model, GridWorldModel):
            raise CliError("--horizon is required for this model", EXIT_CONFIG)
        horizon = len(model.actions)
    run = model.simulate(int(horizon), np.random.default_rng(seed))
    out = s.get("output") or s.get("out")
    if not out:
        raise CliError("give -o/--out for the run file", EXIT_CONFIG)
    out = Path(out)
    if out.is_dir():
        out = out / "run.json"
    _dump_json(out, _run_doc(model, run, seed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# filter


def _load_run(s):
    if s.get("run"):
        try:
            doc = json.loads(Path(s["run"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read run file: {exc}", EXIT_CONFIG) from exc
        if doc.get("schema") != RUN_SCHEMA:
            raise CliError(f"run file schema is not {RUN_SCHEMA}", EXIT_CONFIG)
        model = model_from_dict(doc["model"]) if not (s.get("model") or s.get("scenario")) else _model(s)
        return model, _observations(model, doc["observations"]), doc
    model = _model(s)
    seed = int(s.get("seed", 0))
    horizon = s.get("horizon") or (len(model.actions) if isinstance(model, GridWorldModel) else None)
    if horizon is None:
        raise CliError("--horizon is required for this model", EXIT_CONFIG)
    run = model.simulate(int(horizon), np.random.default_rng(seed))
    return model, run.observations, _run_doc(model, run, seed)


def _grid_rows(model, loc, cells, log_inc, ess, exact_loc, truth):
    rows = []
    total = 0.0
    for t in range(len(log_inc)):
        total += log_inc[t]
        row = [t + 1] + list(loc[t])
        conf = float(np.mean(cells[t].max(axis=1)))
        acc = None if truth is None else float(np.mean(cells[t].argmax(axis=1) == truth[t + 1]))
        tv = None if exact_loc is None else float(diagnostics.tv_distance(loc[t], exact_loc[t]))
        row += [conf, acc, None if ess is None else ess[t], total, tv]
        rows.append(row)
    return rows


def _rbpf_grid(model, obs, cfg):
    est = {
        "loc": diagnostics.location_estimator(cfg),
        "cells": lambda m, ps: np.einsum("n,nlc->lc", ps.weights, ps.stats),
    }
    _, trace = run_filter(model, obs, cfg, estimators=est)
    return np.array(trace.estimates["loc"]), np.array(trace.estimates["cells"]), trace.log_increments, trace.ess


def _filter_grid(model, obs, methods, cfg, run_doc, out):
    results = {}
    if "exact" in methods:
        loc, cells, logs, _ = oracles.exact_filter(model, obs)
        results["exact"] = (loc, cells, list(logs), None)
    if "bk" in methods:
        loc, cells, logs, _ = oracles.bk_filter(model, obs)
        results["bk"] = (loc, cells, list(logs), None)
    if "rbpf" in methods:
        results["rbpf"] = _rbpf_grid(model, obs, cfg)
    exact_loc = results["exact"][0] if "exact" in results else None
    truth = np.asarray(run_doc["hidden"]) if run_doc else None
    cols = ["t"] + [f"p_loc_{i}" for i in range(model.n_cells)] + [
        "map_confidence", "map_accuracy", "ess", "log_evidence", "tv_exact"]
    summary = {}
    for name in METHODS:
        if name not in results:
            continue
        loc, cells, logs, ess = results[name]
        meta = {"method": name, "model": type(model).__name__, "particles": cfg.n_particles if name == "rbpf" else "NA"}
        _write_table(out / f"{name}.tsv", FILTER_SCHEMA, meta, cols,
                     _grid_rows(model, loc, cells, logs, ess, exact_loc, truth))
        summary[name] = {"log_evidence": float(np.sum(logs))}
        if exact_loc is not None:
            summary[name]["mean_tv_exact"] = float(diagnostics.tv_distance(loc, exact_loc).mean())
    # position-vs-time panels in long form
    rows = []
    true_loc = run_doc["roots"] if run_doc else None
    for t in range(len(obs)):
        for c in range(model.n_cells):
            row = [t + 1, c, None if true_loc is None else int(true_loc[t + 1] == c)]
            row += [results[m][0][t][c] if m in results else None for m in METHODS]
            rows.append(row)
    _write_table(out / "trajectory.tsv", FILTER_SCHEMA, {"content": "per-cell location marginals vs time"},
                 ["t", "cell", "true"] + list(METHODS), rows)
    return summary


def _filter_jmls(model, obs, methods, cfg, out):
    if "bk" in methods:
        raise CliError("bk applies to grid models only", EXIT_CONFIG)
    summary = {}
    cols = ["t"] + [f"p_regime_{k}" for k in range(model.n_regimes)] + [
        f"mean_x_{i}" for i in range(model.n_state)] + ["ess", "log_evidence", "tv_exact"]
    exact = None
    if "exact" in methods:
        exact = []
        for t in range(1, len(obs) + 1):
            paths, p, stats = oracles.exact_path_posterior(model, obs[:t])
            regime = np.bincount(paths[:, -1], weights=p, minlength=model.n_regimes)
            exact.append((regime, p @ stats[0], oracles.exact_log_evidence(model, obs[:t])))
        rows = []
        for t, (regime, mean, lz) in enumerate(exact, start=1):
            rows.append([t] + list(regime) + list(mean) + [None, lz, 0.0])
        _write_table(out / "exact.tsv", FILTER_SCHEMA, {"method": "exact", "model": type(model).__name__}, cols, rows)
        summary["exact"] = {"log_evidence": exact[-1][2]}
    if "rbpf" in methods:
        est = {
            "regime": lambda m, ps: ps.root_marginal(m.n_regimes, rao_blackwell=cfg.proposal is Proposal.OPTIMAL),
            "mean": lambda m, ps: ps.weights @ ps.stats[0],
        }
        _, trace = run_filter(model, obs, cfg, estimators=est)
        rows, total = [], 0.0
        for t in range(len(obs)):
            total += trace.log_increments[t]
            regime = trace.estimates["regime"][t]
            tv = None if exact is None else float(diagnostics.tv_distance(regime, exact[t][0]))
            rows.append([t + 1] + list(regime) + list(trace.estimates["mean"][t]) + [trace.ess[t], total, tv])
        meta = {"method": "rbpf", "model": type(model).__name__, "particles": cfg.n_particles}
        _write_table(out / "rbpf.tsv", FILTER_SCHEMA, meta, cols, rows)
        summary["rbpf"] = {"log_evidence": trace.log_likelihood}
    return summary


def _methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = set(methods) - set(METHODS)
    if not methods or bad:
        raise CliError(f"--methods takes a comma list of {','.join(METHODS)}", EXIT_CONFIG)
    return methods


def _outdir(s):
    out = s.get("out") or s.get("output")
    if not out:
        raise CliError("give --out <dir>", EXIT_CONFIG)
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_CONFIG) from exc
    return out


def cmd_filter(args):
    s = _settings(args, {"methods": "rbpf", "particles": 50})
    methods = _methods(s["methods"])
    out = _outdir(s)
    model, obs, run_doc = _load_run(s)
    cfg = _filter_config(s, s["particles"])
    if "exact" in methods and isinstance(model, GridWorldModel) and oracles.joint_size(model) > oracles.MAX_JOINT_STATES:
        raise CliError(
            f"exact inference needs {model.n_cells} x {model.n_colors}^{model.n_cells} states", EXIT_ORACLE
        )
    if isinstance(model, GridWorldModel):
        summary = _filter_grid(model, obs, methods, cfg, run_doc, out)
    else:
        summary = _filter_jmls(model, obs, methods, cfg, out)
    _dump_json(out / "summary.json", {
        "schema": FILTER_SCHEMA,
        "config": _config_doc(cfg),
        "methods": summary,
        "steps": len(obs),
    })
    return EXIT_OK


def _config_doc(cfg):
    return {
        "particles": cfg.n_particles,
        "proposal": cfg.proposal.value,
        "resampler": cfg.resampler.value,
        "resample": str(cfg.resample),
        "mcmc": None if cfg.mcmc is None else f"{cfg.mcmc.window},{cfg.mcmc.moves}",
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# diagnose


def _default_function(model, obs):
    """A function with a non-trivial posterior: the most uncertain cell or
    the first state component."""
    if isinstance(model, JmlsModel):
        return StateComponent(0)
    cells = oracles.exact_path_posterior(model, obs)
    paths, p, stats = cells
    marg = np.einsum("p,plc->lc", p, stats)
    cell = int(np.argmax(marg[:, 0] * (1 - marg[:, 0])))
    return CellColor(cell, 0)


def _location_function(model, obs):
    from rbpf.model import RootIndicator

    p = oracles.exact_root_marginal(model, obs, model.n_cells)
    return RootIndicator(int(np.argmax(p * (1 - p))))


def cmd_diagnose(args):
    check = args.check
    s = _settings(args, CHECK_DEFAULTS[check])
    out = _outdir(s)
    th = diagnostics.DiagnosticThresholds()
    seed = int(s.get("seed", 0))
    workers = int(s.get("workers", 1))
    model = _model(s)
    horizon = int(s["horizon"])
    report = {"schema": REPORT_SCHEMA, "check": check, "seed": seed, "model": type(model).__name__}
    try:
        if check in ("prop1", "prop2"):
            obs = model.simulate(horizon, np.random.default_rng(seed)).observations
            f = _default_function(model, obs)
            rep = diagnostics.compare_estimators(model, f, obs, int(s["particles"]), int(s["trials"]),
                                                 seed=seed, workers=workers)
            report["function"] = repr(f)
            report["result"] = rep.to_dict()
            if check == "prop1":
                verdict = rep.weight_variance_p_value < th.variance_alpha
                report["criterion"] = "marginal weight variance below joint weight variance (paired test)"
            else:
                verdict = rep.variance_p_value < th.variance_alpha and rep.batch_win_fraction >= th.paired_fraction
                report["criterion"] = "Rao-Blackwellised estimator variance and MSE below plain"
        elif check == "prop4":
            tr = diagnostics.weight_variance_trace(model, int(s["particles"]), horizon, int(s["trials"]),
                                                   seed=seed, workers=workers)
            report["result"] = tr.to_dict()
            verdict = tr.trend_p_value < th.trend_alpha and tr.max_weight[-1] > th.max_weight
            report["criterion"] = "increasing weight variance trend and degenerate weights at the horizon"
        elif check == "thm5":
            obs = model.simulate(horizon, np.random.default_rng(seed)).observations
            f = _location_function(model, obs)
            ns = [int(n) for n in str(s.get("ns", ",".join(map(str, THM5_NS)))).split(",")]
            tab = diagnostics.mse_vs_n(model, f, obs, ns, int(s["trials"]), seed=seed,
                                       base=_filter_config(s, 1), workers=workers)
            report["function"] = repr(f)
            report["result"] = tab.to_dict()
            lo, hi = th.slope_range
            verdict = lo <= tab.slope <= hi
            report["criterion"] = f"log-log MSE slope in [{lo}, {hi}]"
            _write_table(out / "mse_vs_n.tsv", REPORT_SCHEMA, {"check": check}, ["n", "mse", "se"], tab.rows())
        else:
            cfg = _filter_config(s, s["particles"])
            comp = diagnostics.location_comparison(model, cfg, int(s["trials"]), horizon=horizon,
                                                   seed=seed, workers=workers)
            report["result"] = comp.to_dict()
            report["config"] = _config_doc(cfg)
            verdict = comp.rbpf_mean_tv < 0.15 and comp.bk_worse_fraction >= 0.8
            report["criterion"] = "RBPF mean TV < 0.15 and BK worse on >= 80% of seeds"
    except StateSpaceTooLarge as exc:
        raise CliError(str(exc), EXIT_ORACLE) from exc
    except (RbpfError, ValueError, TypeError) as exc:
        raise CliError(f"harness precondition failed: {exc}", EXIT_HARNESS) from exc
    report["verdict"] = "PASS" if verdict else "FAIL"
    _dump_json(out / f"{check}.json", report)
    print(f"{check}: {report['verdict']}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rbpf", description="Rao-Blackwellised particle filter experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of flag values (flags given here win)")
        sp.add_argument("--scenario", help="bundled scenario name")
        sp.add_argument("--model", help="model JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--out", help="output directory (or file for simulate)")

    def filt(sp):
        sp.add_argument("--particles", type=int)
        sp.add_argument("--proposal", choices=[v.value for v in Proposal])
        sp.add_argument("--resampler", choices=[v.value for v in Resampler])
        sp.add_argument("--resample", help="always | never | ess:<tau>")
        sp.add_argument("--mcmc", help="K,M: window size and moves after each selection")
        sp.add_argument("--workers", type=int)

    sp = sub.add_parser("simulate", help="simulate a run and write it as JSON")
    common(sp)
    sp.add_argument("-o", "--output", help="run file")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="run filters on a run's observations")
    common(sp)
    filt(sp)
    sp.add_argument("--run", help="run file from `simulate` (otherwise one is simulated)")
    sp.add_argument("--methods", help="comma list of rbpf,exact,bk")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("diagnose", help="run a statistical check")
    common(sp)
    filt(sp)
    sp.add_argument("--check", choices=CHECKS, required=True)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--ns", help="comma list of particle counts for thm5")
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"rbpf: {exc}", file=sys.stderr)
        return exc.code
    except StateSpaceTooLarge as exc:
        print(f"rbpf: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ConfigError, ValueError) as exc:
        print(f"rbpf: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RbpfError as exc:
        print(f"rbpf: {exc}", file=sys.stderr)
        return EXIT_HARNESS


if __name__ == "__main__":
    sys.exit(main())
