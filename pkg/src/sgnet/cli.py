"""Scenario-driven command line front end.

`sgnet run config.json` executes the scenario's analyses in dependency
order (condition checks, then closures, then the decay path, then
simulation), writes a JSON report plus CSV tables, and renders a line
plot next to every table.  The other subcommands run a single stage with
flags mirroring the library parameters.

Exit code contract: 0 iff no analysis was falsified or refused.
Reports are byte-stable for a fixed config except for the timing block.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import gainop, network, path as pathmod, plots, scenario, sgc
from .errors import ConfigError, ConstructionRefusedError, SgnetError
from .gainop import NonnegSeq, kleene_star
from .scenario import (
    fn_from_config,
    jsonable,
    load_scenario,
    network_from_config,
    operator_at_window,
    operator_from_config,
    parse_functions,
    resolve_fn,
)

_STAGE_RANK = {
    "sgc_sampled": 0, "sgc_cycles": 0, "strong_sgc": 0, "max_robust_sgc": 0,
    "ugs": 0, "ugas": 0, "chain": 0, "attractivity": 0,
    "virtual_reduce": 0, "compactification": 0,
    "star": 1,
    "path": 2,
    "simulate": 3,
}

_RECHECKABLE = {"sgc_sampled", "strong_sgc", "max_robust_sgc", "ugas", "ugs", "chain"}

_FAILING = {"falsified", "refused"}


class _RunContext:
    def __init__(self, cfg, out_dir, jobs, render_plots, recheck):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.jobs = jobs
        self.render_plots = render_plots
        self.recheck = recheck and cfg.get("recheck", True)
        self.seed = int(cfg.get("seed", 20240901))
        self.functions = parse_functions(cfg)
        self.operator = (
            operator_from_config(cfg["operator"]) if "operator" in cfg else None
        )
        self.network = (
            network_from_config(cfg["network"]) if "network" in cfg else None
        )
        self.decay_path = None
        self.files: list[str] = []

    def rng(self, index):
        return np.random.default_rng([self.seed, index])

    def need_operator(self):
        if self.operator is None:
            raise ConfigError("operator", "this analysis needs an operator block")
        return self.operator

    def need_network(self):
        if self.network is None:
            raise ConfigError("network", "this analysis needs a network block")
        return self.network

    def fn(self, spec, where):
        return resolve_fn(spec, self.functions, where)

    def add_file(self, name):
        self.files.append(str(name))


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _verdict_entry(verdict):
    return {
        "status": verdict.status.value,
        "scope": verdict.scope,
        "witness": jsonable(verdict.witness),
    }


def _samples_for(op, params, rng):
    count = int(params.get("samples", 200))
    radii = tuple(params.get("radii", (0.5, 1.0, 2.0)))
    return sgc.default_samples(op, count, rng, radii=radii)


# ---------------------------------------------------------------------------
# analysis handlers; each returns a result entry dict


def _run_sgc_sampled(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    verdict = sgc.check_sgc_sampled(op, _samples_for(op, params, ctx.rng(idx)))
    return _verdict_entry(verdict)


def _run_sgc_cycles(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    verdict = sgc.check_sgc_cycles(op, params.get("r_grid"))
    entry = _verdict_entry(verdict)
    cycles = sgc.enumerate_cycles(op)
    entry["cycles"] = [
        {"nodes": list(c), "value_at_1": sgc.cycle_composition(op, c)(1.0)}
        for c in cycles
    ]
    return entry


def _run_strong_sgc(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    rho = ctx.fn(params["rho"], f"analyses[{idx}].rho")
    verdict = sgc.check_strong_sgc(op, rho, _samples_for(op, params, ctx.rng(idx)))
    return _verdict_entry(verdict)


def _run_max_robust(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    omega = ctx.fn(params["omega"], f"analyses[{idx}].omega")
    verdict = sgc.check_max_robust_sgc(
        op, omega, int(params.get("ij_bound", op.window)),
        _samples_for(op, params, ctx.rng(idx)), jobs=ctx.jobs,
    )
    return _verdict_entry(verdict)


def _iterate_table(op, radius, k_max):
    rows = []
    x = NonnegSeq.ones(op.window, radius)
    for k in range(k_max + 1):
        rows.append([k, x.sup_norm(), *[float(v) for v in x.values]])
        if k < k_max:
            x = op.apply(x)
    return rows


def _emit_norm_tables(ctx, op, report, prefix):
    norms_csv = ctx.out_dir / f"{prefix}_norms.csv"
    radii = sorted(report.norms)
    k_count = max(len(report.norms[r]) for r in radii)
    rows = [
        [k, *[float(report.norms[r][k]) if k < len(report.norms[r]) else "" for r in radii]]
        for k in range(k_count)
    ]
    _write_csv(norms_csv, ["k", *[f"norm_r{r:g}" for r in radii]], rows)
    ctx.add_file(norms_csv.name)

    radius = 1.0 if 1.0 in report.norms else radii[0]
    iter_csv = ctx.out_dir / f"{prefix}_iterates.csv"
    k_max = len(report.norms[radius]) - 1
    table = _iterate_table(op, radius, k_max)
    _write_csv(iter_csv, ["k", "sup_norm", *[f"c{i}" for i in range(1, op.window + 1)]], table)
    ctx.add_file(iter_csv.name)

    if ctx.render_plots:
        png = ctx.out_dir / f"{prefix}_norms.png"
        plots.plot_norm_decay(report.norms, png, title=f"{prefix} iterate norms")
        ctx.add_file(png.name)


def _run_ugs(ctx, params, idx, prefix, op=None):
    emit = op is None
    op = op if op is not None else ctx.need_operator()
    report = sgc.check_ugs(op, params.get("radii", (0.5, 1.0, 2.0)),
                           int(params.get("k_max", 2 * op.window)))
    if emit:
        _emit_norm_tables(ctx, op, report, prefix)
    bounded = all(np.all(np.isfinite(t)) for t in report.norms.values())
    entry = {"status": "no-violation-found" if bounded else "falsified",
             "scope": report.scope}
    entry["report"] = scenario.ugas_report_to_json(report)
    entry["_norms"] = report.norms
    return entry


def _run_ugas(ctx, params, idx, prefix, op=None):
    emit = op is None
    op = op if op is not None else ctx.need_operator()
    report = sgc.check_ugas(
        op,
        radii=params.get("radii", (0.5, 1.0, 2.0)),
        k_max=params.get("k_max"),
        decay_target=float(params.get("decay_target", 0.5)),
    )
    if emit:
        _emit_norm_tables(ctx, op, report, prefix)
    if report.uniform_decay is None:
        status = "refused"
    elif report.uniform_decay:
        status = "no-violation-found"
    else:
        status = "falsified"
    entry = {"status": status, "scope": report.scope}
    entry["report"] = scenario.ugas_report_to_json(report)
    entry["_norms"] = report.norms
    return entry


def _run_chain(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    eta = ctx.fn(params["eta"], f"analyses[{idx}].eta")
    verdict = sgc.check_chain_condition(
        op, eta, float(params.get("r", 1.0)), int(params.get("n_max", op.window)),
        int(params.get("index_bound", op.window)),
    )
    return _verdict_entry(verdict)


def _run_attractivity(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    component = int(params.get("i", 1))
    start = NonnegSeq.ones(op.window, float(params.get("radius", 1.0)))
    ok = sgc.check_componentwise_attractivity(
        op, start, component, int(params.get("k_max", 4 * op.window)),
        float(params.get("tol", 1e-9)),
    )
    return {
        "status": "no-violation-found" if ok else "falsified",
        "scope": f"window={op.window}; component={component}",
        "attractive": ok,
    }


def _run_virtual_reduce(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    where = f"analyses[{idx}]"
    groups = params["groups"]
    default = groups.get("default")
    explicit = {int(k): int(v) for k, v in groups.items() if k != "default"}

    def partition(i):
        if i in explicit:
            return explicit[i]
        if default is None:
            raise ConfigError(f"{where}.groups", f"no group for index {i}")
        return int(default)

    table = []
    for gi, row in enumerate(params["virtual_gains"]):
        table.append([
            None if rec is None else fn_from_config(rec, f"{where}.virtual_gains[{gi}]")
            for rec in row
        ])
    virtual = sgc.virtual_reduce(op, partition, table)
    entry = {
        "status": "no-violation-found",
        "scope": f"window={op.window} -> groups={virtual.window}; domination grid-certified",
        "virtual_window": virtual.window,
    }
    if params.get("check_cycles", True):
        verdict = sgc.check_sgc_cycles(virtual)
        entry["cycle_check"] = _verdict_entry(verdict)
        entry["status"] = verdict.status.value
        entry["implies"] = (
            "certified virtual cycles license uniform decay of the dominated operator "
            "(grid scope above)" if verdict.certified else None
        )
    return entry


def _run_compactification(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    where = f"analyses[{idx}]"
    omega = ctx.fn(params["omega"], f"{where}.omega")
    inf_row = []
    for k, (target, rec) in enumerate(params["inf_row"]):
        fn = fn_from_config(rec, f"{where}.inf_row[{k}]")
        inf_row.append((None if target is None else int(target), fn))
    verdict = sgc.compactification_check(
        op, inf_row, omega, int(params.get("k0", 1)),
        params.get("r_grid", (0.5, 1.0, 2.0)),
        params.get("index_probe", _default_probe(op.window)),
    )
    return _verdict_entry(verdict)


def _default_probe(window):
    probe = sorted({window // 2, (3 * window) // 4, window})
    return [i for i in probe if i >= 1]


def _run_star(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    radii = [float(r) for r in params.get("radii", (1.0,))]
    eps = float(params.get("eps", gainop.KLEENE_EPS))
    m_max = int(params.get("m_max", gainop.KLEENE_M_MAX))
    closures = {}
    details = []
    status = "no-violation-found"
    for r in radii:
        res = kleene_star(op, NonnegSeq.ones(op.window, r), eps, m_max)
        closures[r] = res.closure
        details.append({
            "r": r, "depth": res.depth_used,
            "residual": res.residual if np.isfinite(res.residual) else None,
            "converged": res.converged, "sup_norm": res.closure.sup_norm(),
        })
        if not res.converged:
            status = "refused"
    csv_path = ctx.out_dir / f"{prefix}_closure.csv"
    rows = [
        [i, *[float(closures[r].values[i - 1]) for r in radii]]
        for i in range(1, op.window + 1)
    ]
    _write_csv(csv_path, ["index", *[f"closure_r{r:g}" for r in radii]], rows)
    ctx.add_file(csv_path.name)
    return {
        "status": status,
        "scope": f"window={op.window}; eps={eps}; m_max={m_max}",
        "closures": details,
    }


def _run_path(ctx, params, idx, prefix, op=None):
    op = op if op is not None else ctx.need_operator()
    where = f"analyses[{idx}]"
    theta = ctx.fn(params["theta"], f"{where}.theta")
    grid = np.geomspace(
        float(params.get("r_lo", 0.1)), float(params.get("r_hi", 10.0)),
        int(params.get("points", 64)),
    )
    omega = (
        ctx.fn(params["omega"], f"{where}.omega") if "omega" in params else None
    )
    built = pathmod.build_path(op, theta, grid, omega=omega)
    ctx.decay_path = built

    tracked = params.get("track")
    if tracked is None:
        tracked = list(range(1, min(op.window, 32) + 1))
    csv_path = ctx.out_dir / f"{prefix}_path.csv"
    rows = [
        [float(r), *[float(built.components[i - 1, k]) for i in tracked]]
        for k, r in enumerate(built.r_grid)
    ]
    _write_csv(csv_path, ["r", *[f"sigma_{i}" for i in tracked]], rows)
    ctx.add_file(csv_path.name)
    if ctx.render_plots:
        png = ctx.out_dir / f"{prefix}_path.png"
        plots.plot_path_components(built.r_grid, built.components, tracked, png)
        ctx.add_file(png.name)

    checks = {
        "decay": pathmod.verify_decay(built, op),
        "envelopes": pathmod.verify_envelopes(built),
        "monotone": pathmod.verify_monotone(built),
    }
    interval = params.get("bilipschitz_interval")
    bilip = None
    if interval:
        c, big_c, verdict = pathmod.verify_bilipschitz(built, tuple(interval))
        checks["bilipschitz"] = verdict
        bilip = {"c": c, "C": big_c}
    status = "falsified" if any(v.falsified for v in checks.values()) else "no-violation-found"
    entry = {
        "status": status,
        "scope": f"grid=[{grid[0]:g}, {grid[-1]:g}] x {grid.size}; window={op.window}",
        "checks": {k: _verdict_entry(v) for k, v in checks.items()},
        "depths": [int(d) for d in built.depths],
        "envelopes": {
            "lower": scenario.fn_to_config(built.sigma_min),
            "upper": scenario.fn_to_config(built.sigma_max),
            "margin": scenario.fn_to_config(built.rho),
        },
    }
    if built.gain_slope_bounds is not None:
        entry["gain_slope_bounds"] = list(built.gain_slope_bounds)
    if bilip:
        entry["bilipschitz"] = bilip
    return entry


def _make_input(spec, where):
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return network.InputSignal.zero()
    if kind == "constant":
        return network.InputSignal.constant(float(spec.get("value", 0.0)))
    if kind == "step":
        return network.InputSignal.step(float(spec.get("value", 0.0)),
                                        at=float(spec.get("at", 0.0)))
    raise ConfigError(where, f"unknown input kind {kind!r}")


def _initial_states(net, spec, count, norm_bound, rng):
    if isinstance(spec, list):
        return [np.asarray(spec, dtype=float)]
    if spec == "ones":
        return [np.ones(net.total_dim)] * max(count, 1)
    if spec == "random":
        states = []
        for _ in range(max(count, 1)):
            x = rng.uniform(-1.0, 1.0, size=net.total_dim)
            peak = np.abs(x).max()
            if peak > 0.0:
                x *= rng.uniform(0.3, 1.0) * norm_bound / peak
            states.append(x)
        return states
    raise ConfigError("simulate.x0", f"unknown initial-state spec {spec!r}")


def _run_simulate(ctx, params, idx, prefix, op=None):
    net = ctx.need_network()
    where = f"analyses[{idx}]"
    rng = ctx.rng(idx)
    horizon = float(params.get("horizon", 4.0))
    dt = float(params.get("dt", network.DEFAULT_DT))
    signal = _make_input(params.get("input", {"kind": "zero"}), f"{where}.input")
    states = _initial_states(net, params.get("x0", "ones"), int(params.get("count", 1)),
                             float(params.get("norm_bound", 1.0)), rng)

    decay_path = ctx.decay_path
    if decay_path is None or decay_path.window < net.window:
        decay_path = pathmod.identity_path(net.window, np.geomspace(1e-3, 100.0, 64))
    composite = network.compose_V(net, decay_path)
    gamma = network.gamma_external(decay_path, net)

    trajectories = [network.simulate(net, x0, signal, horizon, dt) for x0 in states]
    entry = {
        "status": "no-violation-found",
        "scope": f"trajectories={len(trajectories)}; horizon={horizon}; dt={dt}",
        "sup_input_norm": trajectories[0].sup_input_norm,
        "gamma_of_input": gamma(trajectories[0].sup_input_norm),
    }

    if params.get("decay_check", True):
        alpha_spec = params.get("alpha_hat", {"kind": "linear", "slope": 0.1})
        alpha_hat = ctx.fn(alpha_spec, f"{where}.alpha_hat")
        worst = None
        for t_idx, traj in enumerate(trajectories):
            verdict = network.check_decay_implication(
                composite, gamma, alpha_hat, traj, h=params.get("h"),
                tol=params.get("tol"),
            )
            if verdict.falsified:
                worst = (t_idx, verdict)
                break
        if worst is not None:
            entry["status"] = "falsified"
            entry["decay_check"] = {"trajectory": worst[0], **_verdict_entry(worst[1])}
        else:
            entry["decay_check"] = {"trajectory": None, "status": "no-violation-found"}

    if "nonincreasing_tol" in params:
        tol = float(params["nonincreasing_tol"])
        monotone = True
        for traj in trajectories:
            series = composite.series(traj)
            if np.any(np.diff(series) > tol):
                monotone = False
                break
        entry["nonincreasing"] = monotone
        if not monotone:
            entry["status"] = "falsified"

    if "iss" in params:
        iss = params["iss"]
        magnitude = float(iss.get("input_magnitude", 0.1))
        step_at = float(iss.get("step_at", 0.5))
        rng_iss = ctx.rng(10_000 + idx)

        def batch(count):
            result = []
            for _ in range(count):
                x0 = _initial_states(net, "random", 1, 1.0, rng_iss)[0]
                mags = rng_iss.uniform(0.0, magnitude, size=net.window)
                sig = network.InputSignal.step(lambda i, m=mags: float(m[i - 1]), at=step_at)
                result.append(network.simulate(net, x0, sig, horizon, dt))
            return result

        train = batch(int(iss.get("train", 10)))
        test = batch(int(iss.get("test", 10)))
        beta = network.fit_iss_envelope(train, net, gamma)
        verdict = network.check_iss_estimate(test, net, beta, gamma)
        entry["iss"] = {
            "envelope": jsonable(beta),
            "held_out": _verdict_entry(verdict),
        }
        if verdict.falsified:
            entry["status"] = "falsified"

    first = trajectories[0]
    series = composite.series(first)
    sup_norms = np.array([net.state_norm(x) for x in first.states])
    threshold = gamma(first.sup_input_norm)
    csv_path = ctx.out_dir / f"{prefix}_trajectory.csv"
    shown = min(net.total_dim, 32)
    rows = [
        [float(t), float(v), float(s), int(v > threshold),
         *[float(x) for x in state[:shown]]]
        for t, v, s, state in zip(first.times, series, sup_norms, first.states)
    ]
    _write_csv(csv_path, ["t", "V", "sup_norm", "active", *[f"x{i}" for i in range(1, shown + 1)]], rows)
    ctx.add_file(csv_path.name)
    if ctx.render_plots:
        png = ctx.out_dir / f"{prefix}_trajectory.png"
        plots.plot_trajectory(first.times, series, sup_norms, png)
        ctx.add_file(png.name)
    return entry


_HANDLERS = {
    "sgc_sampled": _run_sgc_sampled,
    "sgc_cycles": _run_sgc_cycles,
    "strong_sgc": _run_strong_sgc,
    "max_robust_sgc": _run_max_robust,
    "ugs": _run_ugs,
    "ugas": _run_ugas,
    "chain": _run_chain,
    "attractivity": _run_attractivity,
    "virtual_reduce": _run_virtual_reduce,
    "compactification": _run_compactification,
    "star": _run_star,
    "path": _run_path,
    "simulate": _run_simulate,
}


def _norm_drift(a, b):
    drift = 0.0
    for r in a:
        if r in b:
            n = min(len(a[r]), len(b[r]))
            drift = max(drift, float(np.max(np.abs(a[r][:n] - b[r][:n]))))
    return drift


def run_scenario(cfg, out_dir, jobs=1, render_plots=True, recheck=True):
    """Execute a parsed scenario; returns (report dict, exit code)."""
    ctx = _RunContext(cfg, out_dir, jobs, render_plots, recheck)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    analyses = list(enumerate(cfg.get("analyses", [])))
    analyses.sort(key=lambda pair: (_STAGE_RANK.get(pair[1].get("analysis"), 0), pair[0]))

    results = []
    started = time.perf_counter()
    for idx, params in analyses:
        name = params.get("analysis")
        handler = _HANDLERS.get(name)
        prefix = f"{cfg['name']}_{idx:02d}_{name}"
        if handler is None:
            raise ConfigError(f"analyses[{idx}].analysis", f"unknown analysis {name!r}")
        try:
            entry = handler(ctx, params, idx, prefix)
        except (ConstructionRefusedError, SgnetError) as exc:
            entry = {"status": "refused", "reason": str(exc)}
        norms = entry.pop("_norms", None)
        if (
            ctx.recheck
            and name in _RECHECKABLE
            and ctx.operator is not None
            and not ctx.operator.is_explicit
        ):
            entry["recheck"] = _recheck_at_double_window(ctx, params, idx, name, norms)
        entry = {"analysis": name, "params": jsonable(dict(params)), **entry}
        results.append(entry)

    statuses = [entry["status"] for entry in results]
    exit_code = 1 if any(s in _FAILING for s in statuses) else 0
    report = {
        "schema_version": scenario.SCHEMA_VERSION,
        "scenario": jsonable(cfg),
        "results": results,
        "files": sorted(ctx.files),
        "exit_code": exit_code,
        "timing": {"seconds": round(time.perf_counter() - started, 6)},
    }
    report_path = ctx.out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report, exit_code


def _recheck_at_double_window(ctx, params, idx, name, norms):
    """Re-run a truncation-sensitive check at twice the window, report drift."""
    doubled = operator_at_window(ctx.cfg["operator"], 2 * ctx.operator.window)
    if doubled is None:
        return None
    handler = _HANDLERS[name]
    try:
        entry = handler(ctx, params, idx, prefix="", op=doubled)
    except SgnetError as exc:
        return {"window": doubled.window, "status": "refused", "reason": str(exc)}
    out = {"window": doubled.window, "status": entry["status"]}
    doubled_norms = entry.pop("_norms", None)
    if norms is not None and doubled_norms is not None:
        out["norm_drift"] = _norm_drift(norms, doubled_norms)
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _add_operator_flags(p):
    p.add_argument("--config", help="scenario config supplying the operator")
    p.add_argument("--preset", help="operator preset (cascade, example55, twonode, zero)")
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--slope", type=float, default=0.5, help="cascade preset slope")
    p.add_argument("--a", type=float, default=2.0, help="twonode forward gain")
    p.add_argument("--b", type=float, default=0.2, help="twonode backward gain")


def _operator_from_args(args):
    if args.config:
        cfg = load_scenario(args.config)
        return operator_from_config(cfg["operator"])
    if not args.preset:
        raise ConfigError("operator", "need --preset or --config")
    record = {"preset": args.preset, "window": args.window,
              "slope": args.slope, "a": args.a, "b": args.b}
    return operator_from_config(record)


def _jobs_default():
    env = os.environ.get("SGNET_JOBS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sgnet",
        description="Small-gain analysis of interconnected networks: "
                    "condition checks, closures, decay paths, simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario config end to end")
    p_run.add_argument("config", help="config file path or bundled scenario name")
    p_run.add_argument("--out", default=None, help="output directory (default: scenario's)")
    p_run.add_argument("--jobs", type=int, default=_jobs_default())
    p_run.add_argument("--no-plots", action="store_true")
    p_run.add_argument("--no-recheck", action="store_true",
                       help="skip the doubled-window truncation recheck")

    p_an = sub.add_parser("analyze", help="run a single condition check")
    _add_operator_flags(p_an)
    p_an.add_argument("--check", required=True,
                      choices=["sgc-sampled", "sgc-cycles", "strong-sgc",
                               "max-robust-sgc", "ugs", "ugas", "chain", "attractivity"])
    p_an.add_argument("--omega", type=float, default=0.5, help="perturbation slope")
    p_an.add_argument("--rho", type=float, default=0.1, help="margin slope")
    p_an.add_argument("--eta", type=float, default=0.5, help="chain contraction slope")
    p_an.add_argument("--r", type=float, default=1.0)
    p_an.add_argument("--n-max", type=int, default=8)
    p_an.add_argument("--index-bound", type=int, default=None)
    p_an.add_argument("--ij-bound", type=int, default=None)
    p_an.add_argument("--samples", type=int, default=200)
    p_an.add_argument("--k-max", type=int, default=None)
    p_an.add_argument("--decay-target", type=float, default=0.5)
    p_an.add_argument("--i", type=int, default=1, help="component for attractivity")
    p_an.add_argument("--seed", type=int, default=20240901)
    p_an.add_argument("--jobs", type=int, default=_jobs_default())

    p_star = sub.add_parser("star", help="print the ray closure of an operator")
    _add_operator_flags(p_star)
    p_star.add_argument("--r", type=float, action="append", default=None)
    p_star.add_argument("--eps", type=float, default=gainop.KLEENE_EPS)
    p_star.add_argument("--m-max", type=int, default=gainop.KLEENE_M_MAX)
    p_star.add_argument("--out", default=None, help="directory for the closure CSV")

    p_path = sub.add_parser("path", help="build and verify a decay path")
    _add_operator_flags(p_path)
    p_path.add_argument("--theta", type=float, default=0.1, help="scaling margin slope")
    p_path.add_argument("--omega", type=float, default=None,
                        help="contraction certificate slope for the upper envelope")
    p_path.add_argument("--r-lo", type=float, default=0.1)
    p_path.add_argument("--r-hi", type=float, default=10.0)
    p_path.add_argument("--points", type=int, default=64)
    p_path.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", help="integrate a network truncation")
    p_sim.add_argument("--preset", default="cascade", choices=["cascade", "twonode"])
    p_sim.add_argument("--n", type=int, default=50, help="cascade window")
    p_sim.add_argument("--horizon", type=float, default=4.0)
    p_sim.add_argument("--dt", type=float, default=network.DEFAULT_DT)
    p_sim.add_argument("--input", default="zero",
                       help="zero | constant:VALUE | step:VALUE@TIME")
    p_sim.add_argument("--x0", default="ones", help="ones | random")
    p_sim.add_argument("--count", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=20240901)
    p_sim.add_argument("--out", default="sgnet-out")

    p_merge = sub.add_parser("report-merge", help="merge run reports, detect conflicts")
    p_merge.add_argument("reports", nargs="+")
    p_merge.add_argument("-o", "--out", required=True)

    return parser


def _parse_input_flag(spec):
    if spec == "zero":
        return {"kind": "zero"}
    if spec.startswith("constant:"):
        return {"kind": "constant", "value": float(spec.split(":", 1)[1])}
    if spec.startswith("step:"):
        body = spec.split(":", 1)[1]
        value, _, at = body.partition("@")
        return {"kind": "step", "value": float(value), "at": float(at or 0.0)}
    raise ConfigError("input", f"cannot parse input spec {spec!r}")


def _single_analysis_scenario(name, op_record, analysis, seed=20240901):
    return {
        "schema_version": scenario.SCHEMA_VERSION,
        "name": name,
        "seed": seed,
        "operator": op_record,
        "analyses": [analysis],
    }


def _cmd_run(args):
    cfg = load_scenario(args.config)
    out_dir = args.out or cfg.get("output_dir") or f"sgnet-out/{cfg['name']}"
    report, code = run_scenario(
        cfg, out_dir, jobs=args.jobs,
        render_plots=not args.no_plots, recheck=not args.no_recheck,
    )
    counts = {}
    for entry in report["results"]:
        counts[entry["status"]] = counts.get(entry["status"], 0) + 1
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "no analyses"
    print(f"{cfg['name']}: {summary} -> {Path(out_dir) / 'report.json'}")
    return code


_CHECK_TO_ANALYSIS = {
    "sgc-sampled": "sgc_sampled",
    "sgc-cycles": "sgc_cycles",
    "strong-sgc": "strong_sgc",
    "max-robust-sgc": "max_robust_sgc",
    "ugs": "ugs",
    "ugas": "ugas",
    "chain": "chain",
    "attractivity": "attractivity",
}


def _cmd_analyze(args):
    op = _operator_from_args(args)
    name = _CHECK_TO_ANALYSIS[args.check]
    params = {"analysis": name, "samples": args.samples}
    if name == "strong_sgc":
        params["rho"] = {"kind": "linear", "slope": args.rho}
    if name == "max_robust_sgc":
        params["omega"] = {"kind": "linear", "slope": args.omega}
        params["ij_bound"] = args.ij_bound or op.window
    if name == "chain":
        params["eta"] = {"kind": "linear", "slope": args.eta}
        params.update(r=args.r, n_max=args.n_max,
                      index_bound=args.index_bound or op.window)
    if name == "ugas":
        params["decay_target"] = args.decay_target
        if args.k_max is not None:
            params["k_max"] = args.k_max
    if name == "ugs" and args.k_max is not None:
        params["k_max"] = args.k_max
    if name == "attractivity":
        params["i"] = args.i

    ctx = _RunContext(
        _single_analysis_scenario("analyze", {"preset": "zero", "window": 1}, params,
                                  seed=args.seed),
        out_dir="sgnet-out/analyze", jobs=args.jobs, render_plots=False, recheck=False,
    )
    ctx.operator = op
    entry = _HANDLERS[name](ctx, params, 0, "analyze")
    entry.pop("_norms", None)
    print(json.dumps(jsonable(entry), indent=2, sort_keys=True))
    return 1 if entry["status"] in _FAILING else 0


def _cmd_star(args):
    op = _operator_from_args(args)
    radii = args.r or [1.0]
    code = 0
    for r in radii:
        res = kleene_star(op, NonnegSeq.ones(op.window, r), args.eps, args.m_max)
        flag = "converged" if res.converged else "NOT CONVERGED"
        print(f"# closure of r={r:g} ray: depth={res.depth_used} residual={res.residual:g} ({flag})")
        for i in range(1, op.window + 1):
            print(f"{i}\t{float(res.closure.values[i - 1])!r}")
        print(f"tail\t{float(res.closure.tail)!r}")
        if not res.converged:
            code = 1
        if args.out:
            csv_path = Path(args.out) / f"closure_r{r:g}.csv"
            _write_csv(csv_path, ["index", "value"],
                       [[i, float(res.closure.values[i - 1])] for i in range(1, op.window + 1)])
            print(f"# wrote {csv_path}")
    return code


def _cmd_path(args):
    op = _operator_from_args(args)
    analysis = {
        "analysis": "path",
        "theta": {"kind": "linear", "slope": args.theta},
        "r_lo": args.r_lo, "r_hi": args.r_hi, "points": args.points,
    }
    if args.omega is not None:
        analysis["omega"] = {"kind": "linear", "slope": args.omega}
    cfg = _single_analysis_scenario("path", {"preset": "zero", "window": 1}, analysis)
    out_dir = args.out or "sgnet-out/path"
    ctx = _RunContext(cfg, out_dir, jobs=1, render_plots=args.out is not None, recheck=False)
    ctx.operator = op
    try:
        entry = _HANDLERS["path"](ctx, analysis, 0, "path")
    except (ConstructionRefusedError, SgnetError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(jsonable(entry), indent=2, sort_keys=True))
    return 1 if entry["status"] in _FAILING else 0


def _cmd_simulate(args):
    net_record = (
        {"preset": "linear_cascade", "n": args.n}
        if args.preset == "cascade" else {"preset": "twonode"}
    )
    analysis = {
        "analysis": "simulate",
        "count": args.count,
        "x0": args.x0,
        "horizon": args.horizon,
        "dt": args.dt,
        "input": _parse_input_flag(args.input),
        "nonincreasing_tol": 1e-6 if args.input == "zero" else None,
    }
    if analysis["nonincreasing_tol"] is None:
        analysis.pop("nonincreasing_tol")
    cfg = {
        "schema_version": scenario.SCHEMA_VERSION,
        "name": f"simulate-{args.preset}",
        "seed": args.seed,
        "network": net_record,
        "analyses": [analysis],
    }
    report, code = run_scenario(cfg, args.out, jobs=1, render_plots=True, recheck=False)
    print(json.dumps(jsonable(report["results"][0]), indent=2, sort_keys=True))
    return code


def _cmd_report_merge(args):
    reports = []
    for path in args.reports:
        reports.append(json.loads(Path(path).read_text()))
    merged_results = []
    seen = {}
    conflicts = []
    for rep in reports:
        scenario_name = rep.get("scenario", {}).get("name", "?")
        for entry in rep.get("results", []):
            key = (scenario_name,
                   json.dumps({"analysis": entry.get("analysis"),
                               "params": entry.get("params")}, sort_keys=True))
            if key in seen:
                if seen[key] != entry.get("status"):
                    conflicts.append({
                        "scenario": key[0], "analysis": entry.get("analysis"),
                        "statuses": [seen[key], entry.get("status")],
                    })
                continue
            seen[key] = entry.get("status")
            merged_results.append({"scenario": scenario_name, **entry})
    merged = {
        "schema_version": scenario.SCHEMA_VERSION,
        "merged_from": [Path(p).name for p in args.reports],
        "results": merged_results,
        "conflicts": conflicts,
        "exit_code": 1 if conflicts or any(
            e.get("status") in _FAILING for e in merged_results
        ) else 0,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    if conflicts:
        print(f"{len(conflicts)} conflicting verdict(s); see {out}", file=sys.stderr)
        return 1
    print(f"merged {len(merged_results)} result(s) -> {out}")
    return merged["exit_code"]


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "star":
            return _cmd_star(args)
        if args.command == "path":
            return _cmd_path(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "report-merge":
            return _cmd_report_merge(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SgnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
