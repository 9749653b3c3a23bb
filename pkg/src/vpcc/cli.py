"""Batch front door: solve, sweep, moments, validate.

Exit codes: 0 on a feasible solve, 2 when the requested problem is
infeasible, 1 on any error (bad config, failed certification, ...).
``VPCC_SEED`` overrides the config seed. Outputs are a ``report.json`` per
solve and, for sweeps, a ``sweep.csv`` (UTF-8, LF, fixed header
``one_minus_alpha,method,feasible,objective,wall_time_ms,mc_upper_ci``,
numbers with 17 significant digits) plus per-point reports and a log.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import acs, scenario
from .config import ProblemConfig, load_config, parse_config
from .errors import ConfigError, VpccError
from .report import STATUS_INFEASIBLE, STATUS_OPTIMAL, SolveReport
from .stochastics import mc_certify

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

CSV_HEADER = "one_minus_alpha,method,feasible,objective,wall_time_ms,mc_upper_ci"


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.17g}"


def _load(path: str) -> ProblemConfig:
    cfg = load_config(path)
    env_seed = os.environ.get("VPCC_SEED")
    if env_seed is not None:
        cfg = cfg.with_seed(int(env_seed))
    return cfg


def _derived_seed(base: int, *key: int) -> int:
    return int(np.random.SeedSequence([base, *key]).generate_state(1)[0])


def _solve_proposed(cfg: ProblemConfig, mc_seed: int | None = None) -> SolveReport:
    cfg.require_attested()
    spec = cfg.system_spec()
    jcc = cfg.jcc()
    report = acs.run(spec, jcc, cfg.cost(), cfg.acs_config(), inputs_echo=cfg.to_dict())
    if report.status == STATUS_OPTIMAL:
        seed = mc_seed if mc_seed is not None else _derived_seed(cfg.seed, 1)
        cert = mc_certify(spec, jcc, np.asarray(report.U).ravel(), cfg.mc_samples, seed)
        report.mc = cert.to_dict()
        report.seed = seed
    return report


def _solve_scenario(cfg: ProblemConfig, seed: int | None = None) -> SolveReport:
    cfg.require_attested()
    spec = cfg.system_spec()
    return scenario.solve_scenario(
        spec, cfg.row_set(), cfg.cost(), cfg.scenario_config(seed), inputs_echo=cfg.to_dict()
    )


def _write_report(report: SolveReport, out_dir: str, name: str = "report.json") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(report.to_json(indent=2))
        handle.write("\n")
    return path


def cmd_solve(args) -> int:
    try:
        cfg = _load(args.config)
        if args.method == "proposed":
            report = _solve_proposed(cfg)
        else:
            report = _solve_scenario(cfg)
    except ConfigError as exc:
        print(f"config error at {exc.field or '<root>'}: {exc.reason}", file=sys.stderr)
        return EXIT_ERROR
    except VpccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    path = _write_report(report, args.out)
    print(f"{report.method}: {report.status}  objective={_fmt(report.objective)}  report={path}")
    if report.status == STATUS_INFEASIBLE:
        return EXIT_INFEASIBLE
    if report.status != STATUS_OPTIMAL:
        return EXIT_ERROR
    if report.method == "proposed":
        feas = report.feasibility or {}
        if not feas.get("feasible"):
            print("error: solution failed its own feasibility check", file=sys.stderr)
            return EXIT_ERROR
    return EXIT_OK


def parse_grid(text: str) -> list[float]:
    """Comma-separated points and start:stop:step segments, all inclusive."""
    points: list[float] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            parts = token.split(":")
            if len(parts) != 3:
                raise ConfigError("--grid", f"bad segment {token!r}; expected start:stop:step")
            start, stop, step = (float(p) for p in parts)
            if step <= 0 or stop < start:
                raise ConfigError("--grid", f"bad segment {token!r}")
            value = start
            while value <= stop + 1e-12:
                points.append(round(value, 10))
                value += step
        else:
            points.append(round(float(token), 10))
    seen = set()
    out = []
    for p in points:
        if p not in seen:
            seen.add(p)
            out.append(p)
    if not out:
        raise ConfigError("--grid", "grid is empty")
    return out


def _sweep_task(payload: dict) -> dict:
    """One (grid point, method) cell; runs in a worker process."""
    cfg = parse_config(payload["config"])
    point = payload["point"]
    method = payload["method"]
    alpha = round(1.0 - point, 12)
    row = {
        "one_minus_alpha": point,
        "method": method,
        "feasible": "error",
        "objective": None,
        "wall_time_ms": None,
        "mc_upper_ci": None,
        "error": None,
        "report": None,
    }
    try:
        cfg_point = cfg.with_alpha(alpha)
        if method == "proposed":
            report = _solve_proposed(cfg_point, mc_seed=payload["mc_seed"])
        else:
            report = _solve_scenario(cfg_point, seed=payload["scenario_seed"])
        row["report"] = report.to_dict()
        row["wall_time_ms"] = report.wall_time_ms
        if report.status == STATUS_OPTIMAL:
            row["feasible"] = "true"
            row["objective"] = report.objective
            if report.mc:
                row["mc_upper_ci"] = report.mc["upper_ci_99"]
        elif report.status == STATUS_INFEASIBLE:
            row["feasible"] = "false"
        else:
            row["error"] = f"status {report.status}: {'; '.join(report.notes)}"
    except VpccError as exc:
        row["error"] = str(exc)
    return row


def cmd_sweep(args) -> int:
    try:
        cfg = _load(args.config)
        points = parse_grid(args.grid)
    except ConfigError as exc:
        print(f"config error at {exc.field or '<root>'}: {exc.reason}", file=sys.stderr)
        return EXIT_ERROR
    methods = ["proposed", "scenario"] if args.methods == "both" else [args.methods]
    tasks = []
    for idx, point in enumerate(points):
        for method in methods:
            tasks.append(
                {
                    "config": cfg.to_dict(),
                    "point": point,
                    "method": method,
                    "scenario_seed": _derived_seed(cfg.seed, idx),
                    "mc_seed": _derived_seed(cfg.seed, idx, 1),
                }
            )

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(task) for task in tasks]

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    log_path = os.path.join(args.out, "sweep.log")
    failures = 0
    with open(csv_path, "w", encoding="utf-8", newline="\n") as csv_file, open(
        log_path, "w", encoding="utf-8", newline="\n"
    ) as log_file:
        csv_file.write(CSV_HEADER + "\n")
        for row in rows:
            csv_file.write(
                ",".join(
                    [
                        _fmt(row["one_minus_alpha"]),
                        row["method"],
                        row["feasible"],
                        _fmt(row["objective"]),
                        _fmt(row["wall_time_ms"]),
                        _fmt(row["mc_upper_ci"]),
                    ]
                )
                + "\n"
            )
            stamp = f"1-alpha={row['one_minus_alpha']} method={row['method']} feasible={row['feasible']}"
            if row["error"]:
                failures += 1
                log_file.write(f"{stamp} ERROR {row['error']}\n")
            else:
                log_file.write(f"{stamp} objective={_fmt(row['objective'])}\n")
            if row["report"] is not None:
                name = f"report_{row['one_minus_alpha']:g}_{row['method']}.json"
                with open(os.path.join(args.out, name), "w", encoding="utf-8", newline="\n") as rep:
                    json.dump(row["report"], rep, indent=2)
                    rep.write("\n")
    print(f"sweep: {len(rows)} rows -> {csv_path} ({failures} recorded failure(s))")
    return EXIT_OK


def cmd_moments(args) -> int:
    try:
        cfg = _load(args.config)
        spec = cfg.system_spec()
        rows = cfg.constraint_rows()
        matches = [r for r in rows if r.k == args.time]
        if not (1 <= args.row <= len(matches)):
            print(
                f"error: --row must lie in [1, {len(matches)}] for time step {args.time}",
                file=sys.stderr,
            )
            return EXIT_ERROR
        row = matches[args.row - 1]
        from .moments import constraint_moments

        m = constraint_moments(spec, row.G, row.k)
        if args.u:
            U = np.array([float(tok) for tok in args.u.split(",")], dtype=float)
            if U.shape[0] != spec.input_dim:
                print(f"error: --u needs {spec.input_dim} entries", file=sys.stderr)
                return EXIT_ERROR
        else:
            U = np.zeros(spec.input_dim)
    except ConfigError as exc:
        print(f"config error at {exc.field or '<root>'}: {exc.reason}", file=sys.stderr)
        return EXIT_ERROR
    except VpccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = {
        "row": row.id,
        "time": row.k,
        "mean_affine": {"a": m.a.tolist(), "b": m.b},
        "var_quadratic": {"Q": m.Q.tolist(), "q": m.q.tolist(), "r": m.r},
        "norm_form": {"L": m.L.tolist(), "v": m.v.tolist(), "s": m.s},
        "at_U": {"U": U.tolist(), "mean": m.mean(U), "variance": m.variance(U), "std": m.std(U)},
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
        cfg.require_attested()
    except ConfigError as exc:
        print(f"config error at {exc.field or '<root>'}: {exc.reason}", file=sys.stderr)
        return EXIT_ERROR
    rows = cfg.constraint_rows()
    print(
        f"ok: schema 1, n={cfg.n} m={cfg.m} horizon={cfg.horizon}, "
        f"{len(rows)} constraint row(s), alpha={cfg.alpha:g}, seed={cfg.seed}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpcc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one configuration")
    p_solve.add_argument("config")
    p_solve.add_argument("--method", choices=["proposed", "scenario"], default="proposed")
    p_solve.add_argument("--out", default=".")
    p_solve.set_defaults(func=cmd_solve)

    p_sweep = sub.add_parser("sweep", help="sweep safety levels 1-alpha over a grid")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--grid", required=True, help='e.g. "0.84:0.98:0.02,0.99"')
    p_sweep.add_argument("--methods", choices=["proposed", "scenario", "both"], default="both")
    p_sweep.add_argument("--out", default=".")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_moments = sub.add_parser("moments", help="print closed-form constraint moments")
    p_moments.add_argument("config")
    p_moments.add_argument("--row", type=int, required=True, help="1-based row index at the time step")
    p_moments.add_argument("--time", type=int, required=True)
    p_moments.add_argument("--u", default=None, help="comma-separated stacked input to evaluate at")
    p_moments.set_defaults(func=cmd_moments)

    p_validate = sub.add_parser("validate", help="schema-check a configuration")
    p_validate.add_argument("config")
    p_validate.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
