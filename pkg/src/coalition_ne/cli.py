"""Command-line entry point: ``coalition-ne {validate,run,oracle,sweep}``.

Exit codes: 0 ok, 1 usage or parse error, 2 validation failure, 3 divergence
or solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .game import OracleError, project_nonneg, solve_ne_oracle, validate_game
from .graph import check_connectivity, estimation_min_eigenvalue, grounded_min_real_part
from .scenario import ScenarioError, load_scenario, resolve_path
from .seeker import check_gains, gain_lower_bounds
from .sim import DivergenceError, config_dict, run, write_log

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3
OUTPUT_ENV = "COALITION_NE_OUTPUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(key, value, out=None):
    print(f"{key},{value}", file=out or sys.stdout)


# -- validate ---------------------------------------------------------------------

def validation_checks(scenario) -> list:
    """``(status, name, detail)`` rows, status in PASS/WARN/FAIL."""
    rows = []
    rep = check_connectivity(scenario.topology)
    for i, ok in enumerate(rep.intra_connected):
        rows.append(("PASS" if ok else "FAIL", f"graph[coalition {i + 1}]",
                     "undirected and connected" if ok else
                     "; ".join(v for v in rep.violations if v.startswith(f"coalition {i + 1}:"))))
    rows.append(("PASS" if rep.global_strongly_connected else "FAIL", "graph[global]",
                 "strongly connected" if rep.global_strongly_connected
                 else "global graph is not strongly connected"))
    grounded = grounded_min_real_part(scenario.topology)
    rows.append(("PASS" if grounded > 0 else "FAIL", "estimation_stability",
                 f"smallest real part of the grounded Laplacian spectra {grounded:.4g}"))
    lam_l = estimation_min_eigenvalue(scenario.topology)
    rows.append(("PASS" if lam_l > 0 else "WARN", "estimation_contraction",
                 f"smallest eigenvalue of the symmetrised estimation matrix {lam_l:.4g}"
                 + ("" if lam_l > 0 else " (sufficient test only; gain bounds not computable)")))
    for chk in validate_game(scenario.game):
        rows.append((chk.status.upper(), chk.name, chk.detail))
    if scenario.model is not None and hasattr(scenario.model, "params"):
        probs = scenario.model.params.check()
        rows.append(("FAIL" if probs else "PASS", "plant_params",
                     "; ".join(probs) if probs else "mass matrix symmetric positive definite"))
    connected = all(rep.intra_connected) and rep.global_strongly_connected
    if scenario.game.is_quadratic and connected and lam_l > 0:
        bounds = gain_lower_bounds(scenario.game, scenario.topology)
        short = check_gains(scenario.gains, bounds)
        detail = ", ".join(f"{k}>{bounds[k]:.3g}" for k in ("alpha", "beta", "gamma", "kappa"))
        status = "PASS" if not short else ("FAIL" if scenario.gains.strict else "WARN")
        rows.append((status, "gain_bounds", f"sufficient thresholds {detail}"
                     + (f"; not met: {', '.join(short)}" if short else "")))
    return rows


def cmd_validate(args) -> int:
    scenario, _ = load_scenario(args.scenario, args.set)
    rows = validation_checks(scenario)
    for status, name, detail in rows:
        print(f"{status:<5} {name:<28} {detail}")
    return EXIT_INVALID if any(s == "FAIL" for s, _, _ in rows) else EXIT_OK


# -- oracle -----------------------------------------------------------------------

def cmd_oracle(args) -> int:
    scenario, _ = load_scenario(args.scenario, args.set)
    game = scenario.game
    try:
        sol = solve_ne_oracle(game, tol=args.tol, max_iter=args.max_iter)
    except OracleError as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        if exc.best is not None:
            for k, v in exc.best.as_dict().items():
                print(f"oracle: best {k} max {max(v, default=0.0):.3g}", file=sys.stderr)
        return EXIT_DIVERGED
    print("agent,coalition," + ",".join(f"x{c + 1}" for c in range(game.r))
          + ",lambda_plus,omega")
    xs = sol.x.reshape(game.n, game.r)
    for p in range(game.n):
        lam = " ".join(f"{v:.10g}" for v in project_nonneg(sol.lam[p]))
        om = " ".join(f"{v:.10g}" for v in sol.omega[p])
        print(f"{p + 1},{game.coalition_of(p) + 1}," + ",".join(f"{v:.10g}" for v in xs[p])
              + f",{lam},{om}")
    for k, v in sol.certificate.as_dict().items():
        _emit(f"certificate_{k}_max", f"{max(v, default=0.0):.3e}")
    _emit("method", sol.method)
    return EXIT_OK


# -- run ----------------------------------------------------------------------------

def default_output(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs")) / name


def _prepare_out(out: Path, force: bool):
    if out.exists() and any(out.iterdir()) and not force:
        raise ScenarioError(f"output directory {out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)


def write_plot_data(log, path, max_rows: int = 2000):
    """Downsampled per-time series (positions, references, gap, residuals)."""
    idx = np.unique(np.linspace(0, len(log.times) - 1, min(max_rows, len(log.times))).astype(int))
    xs, es = log.series("x"), log.series("eta")
    n, r = xs.shape[1], xs.shape[2]
    gap = log.gap()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{p + 1}_{c + 1}" for p in range(n) for c in range(r)]
                   + [f"eta_{p + 1}_{c + 1}" for p in range(n) for c in range(r)]
                   + ["gap", "max_stationarity", "max_coupling", "max_local", "e_norm"])
        for k in idx:
            w.writerow([format(log.times[k], ".10g")]
                       + [format(v, ".10g") for v in xs[k].ravel()]
                       + [format(v, ".10g") for v in es[k].ravel()]
                       + [format(gap[k], ".10g") if gap is not None else "nan",
                          format(log.kkt_stationarity[k].max(), ".6e"),
                          format(log.kkt_coupling[k].max(), ".6e"),
                          format(log.kkt_local[k].max(), ".6e"),
                          format(np.linalg.norm(log.e_norm[k]), ".6e")])


def _summarize(log, scenario):
    game = scenario.game
    y = log.final_state
    st = log.loop.seeker_state(y)
    _emit("final_time", f"{log.final_time:.6g}")
    _emit("stop_reason", log.stop_reason)
    _emit("steps", log.steps)
    if log.certificate is not None:
        _emit("kkt_max_residual", f"{log.certificate.max_residual:.3e}")
    _emit("e_norm", f"{np.linalg.norm(log.e_norm[-1]):.3e}")
    spread = 0.0
    for i in range(game.N):
        vals = [project_nonneg(st.lam[p]) for p in game.coalition_agents(i)]
        spread = max(spread, max(np.linalg.norm(a - b) for a in vals for b in vals))
    _emit("dual_spread", f"{spread:.3e}")
    _emit("max_omega_norm", f"{max(np.linalg.norm(o) for o in st.omega):.3e}")
    gap = log.gap()
    if gap is not None:
        _emit("gap", f"{gap[-1]:.3e}")


def cmd_run(args) -> int:
    scenario, _ = load_scenario(args.scenario, args.set)
    out = Path(args.out) if args.out else default_output(scenario.name)
    _prepare_out(out, args.force)
    oracle_x = None
    if args.oracle:
        try:
            oracle_x = solve_ne_oracle(scenario.game, tol=1e-8).x
        except OracleError as exc:
            print(f"oracle: {exc}; continuing without a reference solution", file=sys.stderr)
    bad = [row for row in validation_checks(scenario) if row[0] == "FAIL"]
    for _, name, detail in bad:
        print(f"warning: validation check {name} fails: {detail}", file=sys.stderr)
    code = EXIT_OK
    try:
        log = run(scenario, oracle_x=oracle_x)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        log = exc.log
        code = EXIT_DIVERGED
    cfg = config_dict(scenario)
    write_log(log, out / "trajectory.csv", cfg)
    write_plot_data(log, out / "plot_data.csv")
    _emit("output", out)
    _summarize(log, scenario)
    if not args.no_plots:
        bf = scenario.meta.get("battlefield")
        box = (bf["x_min"], bf["x_max"], bf["y_min"], bf["y_max"]) if bf else None
        from .plotting import render_report
        for p in render_report(log, out / "figures", box):
            _emit("figure", p)
    return code


# -- sweep ----------------------------------------------------------------------------

def _parse_grid(items):
    grid = []
    for item in items or ():
        if "=" not in item:
            raise ScenarioError(f"grid entry {item!r} is not of the form key=v1,v2,...")
        key, values = item.split("=", 1)
        grid.append((key.strip(), [v.strip() for v in values.split(",") if v.strip()]))
    return grid


def _sweep_one(job):
    path, overrides, want_oracle = job
    scenario, _ = load_scenario(path, overrides)
    oracle_x = None
    if want_oracle:
        try:
            oracle_x = solve_ne_oracle(scenario.game, tol=1e-8).x
        except OracleError:
            pass
    try:
        log = run(scenario, oracle_x=oracle_x)
        status = log.stop_reason
    except DivergenceError as exc:
        log = exc.log
        status = "diverged"
    gap = log.gap()
    cert = log.certificate
    return {"status": status, "final_time": log.final_time,
            "gap": float(gap[-1]) if gap is not None else float("nan"),
            "kkt_max": cert.max_residual if cert else float("nan"),
            "e_norm": float(np.linalg.norm(log.e_norm[-1])), "wall_time": log.wall_time}


def cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid)
    if not grid:
        raise ScenarioError("sweep needs at least one --grid key=v1,v2")
    keys = [k for k, _ in grid]
    combos = list(itertools.product(*[v for _, v in grid]))
    jobs = [(str(resolve_path(args.scenario)),
             list(args.set or ()) + [f"{k}={v}" for k, v in zip(keys, combo)], args.oracle)
            for combo in combos]
    load_scenario(args.scenario, jobs[0][1])  # fail fast on schema errors
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    fields = ["status", "final_time", "gap", "kkt_max", "e_norm", "wall_time"]
    out = sys.stdout if not args.out else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(keys + fields)
        for combo, res in zip(combos, results):
            w.writerow(list(combo) + [res[f] if isinstance(res[f], str) else format(res[f], ".6g")
                                      for f in fields])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_DIVERGED if any(r["status"] == "diverged" for r in results) else EXIT_OK


# -- entry -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="coalition-ne", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("scenario", help="scenario TOML file (extension optional)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario field by dotted path, e.g. gains.alpha=4")

    p = sub.add_parser("validate", help="check graph, constraint and convexity assumptions")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate and write trajectory, certificate and figures")
    common(p)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<name> or runs/<name>)")
    p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    p.add_argument("--oracle", action="store_true", help="solve the centralized NE and report the gap")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="centralized NE with multipliers and KKT residuals")
    common(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200_000)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="cartesian parameter grid, one run per combination")
    common(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--out", help="CSV file for the results table (default stdout)")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
