"""Command-line entry point.

Subcommands: ``index``, ``check``, ``bellman``, ``frontier`` and ``eval``.
Exit status is 0 when every check passes, 1 when a verification fails (the
report is still written) and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bellman, engine, frontier, pcl
from ._io import atomic_write
from .config import (
    RunConfig,
    build_project,
    certified_g_floor,
    config_from_dict,
    load_config,
    model_grid,
)
from .errors import ConfigError, PCLIndexError
from .model import validate_assumptions

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return obj


def dump_json(data) -> str:
    return json.dumps(_jsonable(data), indent=2) + "\n"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--model", choices=["channel", "stopping", "custom"])
    common.add_argument("--p", type=float)
    common.add_argument("--q", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--spec", help="stopping-model spec file")
    common.add_argument("--grid", type=int, help="number of evenly spaced grid states")
    common.add_argument("--tol", type=float, help="target index accuracy")
    common.add_argument("--horizon", type=int, help="override the recursion horizon")
    common.add_argument("--out", help="output path")
    common.add_argument("--strict", action="store_true", default=None,
                        help="count indeterminate sign checks as failures")
    common.add_argument("--emit-config", help="write the effective configuration here")

    parser = argparse.ArgumentParser(prog="pclindex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("index", parents=[common], help="index curve as CSV")
    p = sub.add_parser("check", parents=[common], help="PCL-indexability report")
    p.add_argument("--seed", type=int)
    p.add_argument("--gap-budget", type=float, dest="gap_budget")
    p = sub.add_parser("bellman", parents=[common], help="value-iteration cross-check")
    p.add_argument("--lambdas", help="count, or comma-separated prices")
    p.add_argument("--band", type=float)
    p.add_argument("--csv", help="CSV of lambda, x, action gap, index minus lambda")
    p = sub.add_parser("frontier", parents=[common], help="resource-reward frontier")
    p.add_argument("--dist", help="uniform | pointmass:X | file.json")
    p.add_argument("--svg")
    sub.add_parser("eval", parents=[common], help="metrics table as CSV")
    return parser


def _effective_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        data = load_config(args.config).to_dict()
    overrides = {}
    for key in ("model", "p", "q", "beta", "spec", "grid", "tol", "horizon", "out", "strict",
                "seed", "gap_budget", "band", "csv", "dist", "svg"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "lambdas", None) is not None:
        text = args.lambdas
        try:
            overrides["lambdas"] = int(text) if text.isdigit() else [float(v) for v in text.split(",")]
        except ValueError:
            raise ConfigError(f"--lambdas: cannot parse {text!r}") from None
    data.update(overrides)
    data.setdefault("model", "channel")
    return config_from_dict(data, "command line")


def choose_horizon(cfg: RunConfig, project, grid: np.ndarray) -> tuple[int, dict]:
    """Horizon meeting the index tolerance, using a pilot run to bound ``g`` and ``|m*|``."""
    if cfg.horizon is not None:
        return cfg.horizon, {"source": "override"}
    w_max = float(np.max(project.weights(grid)))
    gap = float(np.min(project.costs(grid, 1) - project.costs(grid, 0)))
    floor = certified_g_floor(cfg)
    # pilot: horizon where the marginal error is a small fraction of the cost gap
    pilot = 0
    while 2.0 * project.bound_Mgamma * project.rate_gamma**pilot * w_max > 0.05 * gap and pilot < 10_000:
        pilot += 1
    curve = engine.compute_index(project, grid, pilot, node_budget=cfg.node_budget)
    g_lower = floor if floor is not None else curve.g_lower
    m_cap = float(np.nanmax(np.abs(curve.values)) + np.nanmax(curve.error_bounds))
    if not g_lower > 0:
        raise PCLIndexError("could not bound the marginal resource metric away from zero")
    k = engine.horizon_for_tolerance(project, cfg.tol, g_lower, m_cap, w_max)
    return k, {"source": "tolerance", "pilot_horizon": pilot, "g_lower": g_lower, "m_cap": m_cap}


def _horizon_meta(project, k: int, meta: dict) -> dict:
    e_FG, e_fg = engine.error_bounds(project, k)
    return {"horizon": k, "gamma_k": project.rate_gamma**k, "error_FG": e_FG, "error_fg": e_fg, **meta}


def _write(path, text: str, stdout) -> None:
    if path:
        try:
            atomic_write(path, text)
        except OSError as exc:
            raise PCLIndexError(f"could not write {path}: {exc}") from None
    else:
        stdout.write(text)


def _pcli3_states(grid: np.ndarray, n: int) -> np.ndarray:
    interior = grid[1:-1] if len(grid) > 2 else grid
    targets = np.linspace(interior[0], interior[-1], n + 2)[1:-1] if n < len(interior) else interior
    return np.unique(interior[np.abs(interior[:, None] - targets[None, :]).argmin(axis=0)])


def random_intervals(bps: np.ndarray, n: int, rng: np.random.Generator) -> list[tuple[float, float]]:
    """``n`` distinct intervals with breakpoint ends, from uniform draws snapped to breakpoints."""
    out: list[tuple[float, float]] = []
    if len(bps) < 2:
        return out
    seen = set()
    for _ in range(50 * n):
        u = np.sort(rng.uniform(bps[0], bps[-1], 2))
        a, b = (int(np.argmin(np.abs(bps - v))) for v in u)
        if a < b and (a, b) not in seen:
            seen.add((a, b))
            out.append((float(bps[a]), float(bps[b])))
        if len(out) == n:
            break
    return out


def run_check(cfg: RunConfig, project, grid: np.ndarray) -> tuple[dict, bool]:
    validation = validate_assumptions(project, grid)
    report: dict = {"schema": pcl.SCHEMA_VERSION, "command": "check", "config": cfg.to_dict(),
                    "assumptions": validation.to_dict()}
    if not validation.passed:
        report["pass"] = False
        return report, False
    k, meta = choose_horizon(cfg, project, grid)
    report["horizon"] = _horizon_meta(project, k, meta)
    bps = np.unique(np.concatenate([grid, [b for b in project.breakpoints if project.lower <= b <= project.upper]]))
    table = engine.compute_metrics(project, grid, engine.threshold_grid(bps), k, cfg.node_budget)
    curve = engine.compute_index(project, bps, k, node_budget=cfg.node_budget)
    grid_curve = engine.compute_index(project, grid, k, node_budget=cfg.node_budget)
    v1 = pcl.check_pcli1(table, certified_g_floor(cfg))
    v2 = pcl.check_pcli2(grid_curve, cfg.gap_budget)

    rng = np.random.default_rng(cfg.seed)
    xs = _pcli3_states(grid, cfg.pcli3_states)
    tables = pcl.state_tables(project, xs, k)
    s_curve = pcl.curve_for_tables(project, tables, k)
    cases = []
    for x, tb in tables.items():
        ivs = random_intervals(tb.finite_breakpoints(), cfg.pcli3_intervals, rng)
        cases.extend(pcl.check_pcli3(project, tb, s_curve, ivs).cases)
    v3 = pcl.Pcli3Verdict(
        max_residual=max((c.residual for c in cases), default=0.0),
        partitions=len(cases),
        passed=all(c.passed for c in cases),
        c1=pcl.TOLERANCE_FACTOR,
        c2=0.0,
        cases=tuple(cases),
    )

    identities = [pcl.jump_identity(table, curve), pcl.bound_identity(table, curve)]
    vres, vtol, vok, signs = 0.0, 0.0, True, {"pass": 0, "fail": 0, "indeterminate": 0}
    for x, tb in tables.items():
        for t in tb.thresholds:
            if t.left:
                continue
            r, tol = pcl.volterra_check(x, t, tb, s_curve, project.lower, project.upper)
            vres, vtol, vok = max(vres, r), max(vtol, tol), vok and r <= tol
            if t.is_finite:
                signs[pcl.sign_consistency(x, t, tb, s_curve, strict=cfg.strict).value] += 1
    identities.append(pcl.IdentityResult("volterra", vres, vtol, vok, {"states": len(tables)}))
    identities.append(pcl.IdentityResult("sign_consistency", float(signs["fail"]), 0.0, signs["fail"] == 0,
                                         {f"n_{key}": n for key, n in signs.items()}))
    m_lo, m_hi = float(np.nanmin(grid_curve.values)), float(np.nanmax(grid_curve.values))
    duals = []
    for frac in (0.25, 0.5, 0.75):
        lam = m_lo + frac * (m_hi - m_lo)
        duals.append(pcl.dual_witness_check(lam, xs, tables, s_curve, project.lower, project.upper))
    lam_hi = m_hi + 0.5 * max(m_hi - m_lo, 1.0)
    dual_hi = pcl.dual_witness_check(lam_hi, xs, tables, s_curve, project.lower, project.upper)
    dual_ok = all(d.passed for d in duals)
    identities.append(pcl.IdentityResult(
        "dual_witness", -min(min(d.min_margin for d in duals), 0.0),
        float(max(np.max(d.tolerances) for d in duals)), dual_ok,
        {"runs": [d.to_dict() for d in duals]},
    ))
    eq_res = float(np.max(np.abs(dual_hi.margins)))
    eq_tol = float(np.max(dual_hi.tolerances))
    identities.append(pcl.IdentityResult("dual_witness_equality", eq_res, eq_tol, eq_res <= eq_tol,
                                         {"lambda": lam_hi}))
    pcl_report = pcl.PCLReport(v1, v2, v3, tuple(identities), {
        "grid_states": len(grid),
        "thresholds": len(table.thresholds),
        "pcli3_states": [float(x) for x in xs],
        "coverage": f"sampled at {len(grid)} grid states and {len(bps)} breakpoints",
    })
    report.update(pcl_report.to_dict())
    report["schema"] = pcl.SCHEMA_VERSION
    return report, pcl_report.passed


def run_bellman(cfg: RunConfig, project, grid: np.ndarray) -> tuple[dict, bool, str | None]:
    validation = validate_assumptions(project, grid)
    report: dict = {"schema": pcl.SCHEMA_VERSION, "command": "bellman", "config": cfg.to_dict(),
                    "assumptions": validation.to_dict()}
    if not validation.passed:
        report["pass"] = False
        return report, False, None
    k, meta = choose_horizon(cfg, project, grid)
    report["horizon"] = _horizon_meta(project, k, meta)
    curve = engine.compute_index(project, grid, k, node_budget=cfg.node_budget)
    lams = (bellman.default_lambda_sweep(curve, cfg.lambdas) if isinstance(cfg.lambdas, int)
            else np.asarray(cfg.lambdas, dtype=float))
    sols = bellman.value_iteration_sweep(project, lams, grid, cfg.vi_tol, node_budget=cfg.node_budget)
    cross = bellman.indexability_crosscheck(curve, project, lams, cfg.band, solutions=sols)
    report["crosscheck"] = cross.to_dict()
    report["value_iteration"] = {
        "tol": cfg.vi_tol,
        "iterations": sols[0].iterations if sols else 0,
        "contraction_ok": all(s.contraction_ok for s in sols),
    }
    report["monotone_policy_structure"] = bellman.monotone_policy_structure(sols, cross.gap_epsilon)
    # optimality of the threshold policy picked for each price
    table = engine.compute_metrics(project, grid, engine.threshold_grid(grid, left=False), k, cfg.node_budget)
    index_fn = lambda z: float(engine.compute_index(project, [z], k).values[0])  # noqa: E731
    reps, sets = [], []
    for lam in lams:
        ts = bellman.optimal_threshold_set(lam, table, curve, index_fn, project.lower, project.upper)
        sets.append(ts)
        reps.append(ts.representative)
    rep_table = engine.compute_metrics(project, grid, reps, k, cfg.node_budget, marginals=False)
    e_FG, _ = engine.error_bounds(project, k)
    rows, ok = [], True
    for lam, sol, ts in zip(lams, sols, sets):
        j = rep_table.column(ts.representative)
        value = rep_table.F[:, j] - lam * rep_table.G[:, j]
        gap = float(np.max(np.abs(value - sol.values)))
        tol = (1.0 + abs(lam)) * max(cfg.tol, 10.0 * (sol.fixed_point_error + e_FG))
        ok &= gap <= tol
        rows.append({"lambda": lam, "case": ts.case, "threshold": ts.representative.label,
                     "z": ts.representative.z if ts.representative.is_finite else None,
                     "grid_members": len(ts.members), "consistent": ts.consistent,
                     "max_value_gap": gap, "tolerance": tol, "pass": gap <= tol})
    report["threshold_optimality"] = rows
    passed = cross.passed and bool(ok) and report["value_iteration"]["contraction_ok"]
    report["pass"] = passed
    csv_text = None
    if cfg.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "x", "action_gap", "m_star_minus_lambda"])
        for lam, sol in zip(lams, sols):
            for x, g, m in zip(grid, sol.action_gap, curve.values):
                w.writerow([repr(float(lam)), repr(float(x)), repr(float(g)), repr(float(m - lam))])
        csv_text = buf.getvalue()
    return report, passed, csv_text


def _distribution(cfg: RunConfig, grid: np.ndarray) -> frontier.Distribution:
    if cfg.dist == "uniform":
        return frontier.Distribution.uniform(grid)
    if cfg.dist.startswith("pointmass:"):
        try:
            return frontier.Distribution.point_mass(float(cfg.dist.split(":", 1)[1]))
        except ValueError:
            raise ConfigError(f"dist: bad point mass {cfg.dist!r}") from None
    try:
        data = json.loads(Path(cfg.dist).read_text())
        return frontier.Distribution(np.asarray(data["states"], float), np.asarray(data["probs"], float))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"dist file {cfg.dist}: {exc}") from None


def run_frontier(cfg: RunConfig, project, grid: np.ndarray, stdout) -> tuple[dict, bool]:
    k, meta = choose_horizon(cfg, project, grid)
    dist = _distribution(cfg, grid)
    bps = np.unique(np.concatenate([grid, dist.states]))
    pts = frontier.performance_points(project, dist, engine.threshold_grid(bps), k)
    hull = frontier.upper_hull(pts)
    curve = engine.compute_index(project, bps, k, node_budget=cfg.node_budget)
    sp = frontier.shadow_price_check(hull, curve, pts)
    slopes = frontier.hull_slopes(hull)
    concave = bool(np.all(np.diff(slopes) <= 1e-9 * max(1.0, float(np.max(np.abs(slopes))))))
    in_contract = dist.full_support and len(dist.states) > 1
    shadow_ok = sp.max_deviation <= 1e-4
    report = {
        "schema": pcl.SCHEMA_VERSION,
        "command": "frontier",
        "config": cfg.to_dict(),
        "horizon": _horizon_meta(project, k, meta),
        "points": len(pts),
        "hull_vertices": len(hull),
        "concave": concave,
        "shadow_price": {"max_deviation": sp.max_deviation, "checked": len(sp.rows), "skipped": sp.skipped,
                         "in_contract": in_contract, "pass": shadow_ok},
    }
    passed = concave and (shadow_ok or not in_contract)
    report["pass"] = passed
    if cfg.out:
        frontier.emit_frontier(hull, pts, cfg.out, "csv")
    else:
        stdout.write(frontier.frontier_csv(hull, pts))
    if cfg.svg:
        frontier.emit_frontier(hull, pts, cfg.svg, "svg")
    return report, passed


def run(argv=None, stdout=None, stderr=None) -> int:
    """Run the CLI and return its exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        cfg = _effective_config(args)
        if args.emit_config:
            atomic_write(args.emit_config, dump_json(cfg.to_dict()))
        project = build_project(cfg)
        grid = model_grid(cfg, project)
    except (ConfigError, PCLIndexError, ValueError) as exc:
        print(f"pclindex: error: {exc}", file=stderr)
        return 2
    try:
        if args.command == "index":
            k, _ = choose_horizon(cfg, project, grid)
            curve = engine.compute_index(project, grid, k, node_budget=cfg.node_budget)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["x", "m_star", "err_bound"])
            for x, m, e in zip(curve.states, curve.values, curve.error_bounds):
                w.writerow([repr(float(x)), repr(float(m)), repr(float(e))])
            _write(cfg.out, buf.getvalue(), stdout)
            return 0 if not np.any(curve.undefined) else 1
        if args.command == "eval":
            k, _ = choose_horizon(cfg, project, grid)
            table = engine.compute_metrics(project, grid, engine.threshold_grid(grid), k, cfg.node_budget)
            buf = io.StringIO()
            engine.write_table_csv(table, buf)
            _write(cfg.out, buf.getvalue(), stdout)
            return 0
        if args.command == "check":
            report, passed = run_check(cfg, project, grid)
            _write(cfg.out, dump_json(report), stdout)
            return 0 if passed else 1
        if args.command == "bellman":
            report, passed, csv_text = run_bellman(cfg, project, grid)
            if csv_text is not None:
                _write(cfg.csv, csv_text, stdout)
            _write(cfg.out, dump_json(report), stdout)
            return 0 if passed else 1
        if args.command == "frontier":
            report, passed = run_frontier(cfg, project, grid, stdout)
            print(dump_json(report), file=stderr, end="")
            return 0 if passed else 1
    except ConfigError as exc:
        print(f"pclindex: error: {exc}", file=stderr)
        return 2
    except PCLIndexError as exc:
        print(f"pclindex: verification error: {exc}", file=stderr)
        return 1
    return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
