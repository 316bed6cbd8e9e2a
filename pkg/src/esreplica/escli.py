"""Command-line front end emitting CSV or JSON tables.

Exit codes: 0 success, 1 configuration error, 2 no convergence,
3 only unphysical results, 4 majority of LP samples unbounded.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from functools import partial

import numpy as np

from .espmap import NoRoot, effective_solution, map_from_effective
from .finite_lab import (
    empirical_order_params,
    load_returns_csv,
    optimize_es_lp,
    replica_vs_mc,
)
from .portfolio_stats import weight_distribution
from .replica_core import MarketModel, OrderParameters, Regularizer, ReplicaSolution
from .saddle_solver import (
    LeftPhysicalRegion,
    NoConvergence,
    SolveConfig,
    solve_saddle,
    solution_from_params,
    sweep,
    trace_boundary,
)
from .simplex import LPError, Unbounded

EXIT_OK, EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_UNPHYSICAL, EXIT_UNBOUNDED = range(5)

SOLUTION_COLUMNS = ("alpha", "r", "eta_plus", "eta_minus", "lambda", "epsilon", "q0", "delta",
                    "q0hat", "deltahat", "n0", "r_eff", "es_in", "out_ratio", "physical")
PARAM_COLUMNS = ("lambda", "epsilon", "q0", "delta", "q0hat", "deltahat")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def _json_value(value):
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return fmt(value) if not math.isfinite(value) else value
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


class Table:
    """Records with a fixed column order, written as CSV or JSON."""

    def __init__(self, columns, fmt_name: str):
        self.columns = tuple(columns)
        self.fmt_name = fmt_name
        self.records: list[dict] = []
        self.status: dict | None = None

    def add(self, record: dict) -> None:
        self.records.append({k: record[k] for k in self.columns})

    def render(self) -> str:
        if self.fmt_name == "json":
            payload = {"records": [{k: _json_value(v) for k, v in r.items()} for r in self.records]}
            if self.status is not None:
                payload["status"] = {k: _json_value(v) for k, v in self.status.items()}
            return json.dumps(payload, indent=1) + "\n"
        lines = [",".join(self.columns)]
        lines += [",".join(fmt(r[k]) for k in self.columns) for r in self.records]
        if self.status is not None:
            lines.append("# " + " ".join(f"{k}={fmt(v)}" for k, v in self.status.items()))
        return "\n".join(lines) + "\n"


def solution_record(sol: ReplicaSolution) -> dict:
    p = sol.params
    return {
        "alpha": sol.model.alpha, "r": sol.model.r,
        "eta_plus": sol.regularizer.eta_plus, "eta_minus": sol.regularizer.eta_minus,
        "lambda": p.lam, "epsilon": p.epsilon, "q0": p.q0, "delta": p.delta,
        "q0hat": p.q0hat, "deltahat": p.deltahat, "n0": sol.n0, "r_eff": sol.r_eff,
        "es_in": sol.es_in, "out_ratio": sol.out_ratio, "physical": sol.physical,
    }


def parse_sigma(text: str) -> tuple[float, float]:
    try:
        value, frac = text.split(":")
        return float(value), float(frac)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sigma expects value:fraction, got {text!r}") from None


def _common(p: argparse.ArgumentParser, need_r: bool = True) -> None:
    p.add_argument("--alpha", type=float, default=0.975, help="confidence level in (0.5, 1)")
    if need_r:
        p.add_argument("--r", type=float, default=0.1, help="aspect ratio N/T")
    p.add_argument("--eta-plus", type=float, default=0.0)
    shorts = p.add_mutually_exclusive_group()
    shorts.add_argument("--eta-minus", type=float, default=None)
    shorts.add_argument("--no-short", action="store_true", help="ban short positions")
    p.add_argument("--sigma", type=parse_sigma, action="append", metavar="VALUE:FRACTION",
                   help="volatility group (repeatable, default 1.0:1.0)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None, help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="esreplica", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="one saddle-point solution")
    _common(p)

    p = sub.add_parser("sweep", help="solutions along r or alpha")
    _common(p)
    p.add_argument("--param", choices=("r", "alpha"), default="r")
    p.add_argument("--r-min", type=float, default=0.01)
    p.add_argument("--r-max", type=float, default=0.45)
    p.add_argument("--alpha-min", type=float, default=0.8)
    p.add_argument("--alpha-max", type=float, default=0.99)
    p.add_argument("--steps", type=int, default=45)

    p = sub.add_parser("phase", help="critical or characteristic line over alpha")
    _common(p, need_r=False)
    p.add_argument("--alpha-min", type=float, default=0.8)
    p.add_argument("--alpha-max", type=float, default=0.99)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--line", choices=("characteristic", "critical_image"), default="characteristic")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("map", help="regularized -> effective -> regularized round trip")
    _common(p)

    p = sub.add_parser("weights", help="continuous weight density and condensate")
    _common(p)
    p.add_argument("--points", type=int, default=200)

    p = sub.add_parser("simulate", help="replica prediction against Monte-Carlo LP solutions")
    _common(p, need_r=False)
    p.add_argument("--n", type=int, default=200, help="number of assets N")
    p.add_argument("--t", type=int, default=400, help="number of observations T")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", default=None, help="CSV return matrix (rows assets, columns time)")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def regularizer_from(args) -> Regularizer:
    if not (args.eta_plus >= 0 and math.isfinite(args.eta_plus)):
        raise ConfigError(f"--eta-plus must be finite and >= 0, got {args.eta_plus}")
    if args.no_short:
        return Regularizer.no_short(args.eta_plus)
    eta_minus = 0.0 if args.eta_minus is None else args.eta_minus
    if not (eta_minus >= 0 and math.isfinite(eta_minus)):
        raise ConfigError(f"--eta-minus must be finite and >= 0 (use --no-short for a ban), got {eta_minus}")
    return Regularizer(args.eta_plus, eta_minus)


def model_from(args, r: float | None = None) -> MarketModel:
    if not 0.5 < args.alpha < 1.0:
        raise ConfigError(f"--alpha must lie in (0.5, 1), got {args.alpha}")
    r = args.r if r is None else r
    if not (r > 0 and math.isfinite(r)):
        raise ConfigError(f"--r must be positive, got {r}")
    groups = tuple(args.sigma) if args.sigma else ((1.0, 1.0),)
    try:
        return MarketModel(args.alpha, r, groups)
    except ValueError as exc:
        raise ConfigError(f"--sigma: {exc}") from exc


def config_from(args) -> SolveConfig:
    if not args.tol > 0:
        raise ConfigError(f"--tol must be positive, got {args.tol}")
    return SolveConfig(tol=args.tol)


def cmd_solve(args, out):
    reg, model, cfg = regularizer_from(args), model_from(args), config_from(args)
    table = Table(SOLUTION_COLUMNS, args.format)
    try:
        sol = solve_saddle(model, reg, cfg=cfg)
    except LeftPhysicalRegion as exc:
        table.status = {"status": "left_physical_region", "message": str(exc)}
        out(table)
        return EXIT_UNPHYSICAL
    except NoConvergence as exc:
        table.status = {"status": "no_convergence", "message": str(exc)}
        out(table)
        return EXIT_NO_CONVERGENCE
    table.add(solution_record(sol))
    out(table)
    return EXIT_OK


def cmd_sweep(args, out):
    reg, model, cfg = regularizer_from(args), model_from(args), config_from(args)
    if args.steps < 1:
        raise ConfigError("--steps must be >= 1")
    if args.param == "r":
        start, stop = args.r_min, args.r_max
        if not 0 < start <= stop:
            raise ConfigError(f"--r-min/--r-max must satisfy 0 < r-min <= r-max, got {start}, {stop}")
    else:
        start, stop = args.alpha_min, args.alpha_max
        if not 0.5 < start <= stop < 1:
            raise ConfigError(f"--alpha-min/--alpha-max must satisfy 0.5 < min <= max < 1, got {start}, {stop}")
    result = sweep(model, reg, args.param, start, stop, args.steps, cfg)
    table = Table(SOLUTION_COLUMNS, args.format)
    for sol in result.solutions:
        table.add(solution_record(sol))
    if result.reason != "completed":
        table.status = {"status": result.reason, "failed_index": result.failed_index, "message": result.message}
    out(table)
    if result.reason == "convergence_failure":
        return EXIT_NO_CONVERGENCE
    if not result.solutions and result.reason == "boundary":
        return EXIT_UNPHYSICAL
    return EXIT_OK


def cmd_phase(args, out):
    reg, cfg = regularizer_from(args), config_from(args)
    model = model_from(args, r=0.1)
    if args.steps < 1 or not 0.5 < args.alpha_min <= args.alpha_max < 1:
        raise ConfigError("--alpha-min/--alpha-max/--steps must give a non-empty grid inside (0.5, 1)")
    grid = np.linspace(args.alpha_min, args.alpha_max, args.steps) if args.steps > 1 else np.array([args.alpha_min])
    trace = partial(_trace_one, reg=reg, cfg=cfg, groups=model.sigma_groups, line=args.line)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            points = list(pool.map(trace, grid))
    else:
        points = [trace(a) for a in grid]
    table = Table(("alpha", "r", "n0", "q0", "status"), args.format)
    for pt in points:
        table.add({"alpha": pt.alpha, "r": pt.r, "n0": pt.n0, "q0": pt.q0, "status": pt.status})
    out(table)
    return EXIT_OK if any(pt.status == "ok" for pt in points) else EXIT_NO_CONVERGENCE


def _trace_one(alpha, reg, cfg, groups, line):
    return trace_boundary(reg, [alpha], cfg, sigma_groups=groups, line=line)[0]


def cmd_map(args, out):
    reg, model, cfg = regularizer_from(args), model_from(args), config_from(args)
    if not model.unit_sigma:
        raise ConfigError("--sigma: the mapping is only available for unit volatilities")
    try:
        sol = solve_saddle(model, reg, cfg=cfg)
    except LeftPhysicalRegion as exc:
        raise _Exit(EXIT_UNPHYSICAL, str(exc)) from exc
    except NoConvergence as exc:
        raise _Exit(EXIT_NO_CONVERGENCE, str(exc)) from exc
    table = Table(("kind", "r") + PARAM_COLUMNS + ("residual_norm",), args.format)

    def row(kind, r, p: OrderParameters, norm):
        table.add({"kind": kind, "r": r, **p.as_dict(), "residual_norm": norm})

    row("original", model.r, sol.params, sol.residual_norm)
    try:
        eff = effective_solution(sol)
        row("effective", eff.model.r, eff.params, eff.residual_norm)
        back = map_from_effective(eff, reg, model.r)
        back_sol = solution_from_params(back, model, reg)
        row("roundtrip", model.r, back, back_sol.residual_norm)
    except (NoRoot, ValueError) as exc:
        table.status = {"status": "mapping_failed", "message": str(exc)}
        out(table)
        return EXIT_NO_CONVERGENCE
    out(table)
    return EXIT_OK if sol.physical else EXIT_UNPHYSICAL


def cmd_weights(args, out):
    reg, model, cfg = regularizer_from(args), model_from(args), config_from(args)
    if args.points < 2:
        raise ConfigError("--points must be >= 2")
    try:
        sol = solve_saddle(model, reg, cfg=cfg)
    except LeftPhysicalRegion as exc:
        raise _Exit(EXIT_UNPHYSICAL, str(exc)) from exc
    except NoConvergence as exc:
        raise _Exit(EXIT_NO_CONVERGENCE, str(exc)) from exc
    dist = weight_distribution(sol.params, model, reg)
    lo, hi = dist.support()
    table = Table(("w", "density", "n0"), args.format)
    # The continuous part jumps at w = 0, so each side's grid ends on its one-sided limit there.
    tiny = np.finfo(float).tiny
    if lo < 0:
        n_neg = min(args.points - 2, max(2, int(round(args.points * -lo / (hi - lo)))))
        neg = np.linspace(lo, 0.0, n_neg)
        pos = np.linspace(0.0, hi, args.points - n_neg)
        grid = np.concatenate([neg, pos])
        dens = np.concatenate([dist.density(np.append(neg[:-1], -tiny)), dist.density(np.insert(pos[1:], 0, tiny))])
    else:
        grid = np.linspace(0.0, hi, args.points)
        dens = dist.density(np.insert(grid[1:], 0, tiny))
    for w, d in zip(grid, dens):
        table.add({"w": w, "density": d, "n0": dist.n0})
    out(table)
    return EXIT_OK


def cmd_simulate(args, out):
    reg, cfg = regularizer_from(args), config_from(args)
    if args.input:
        try:
            sample = load_returns_csv(args.input)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"--input: {exc}") from exc
        table = Table(("n_assets", "horizon", "epsilon", "cost", "es_in", "q0_emp", "n0_emp", "certified"),
                      args.format)
        try:
            lp = optimize_es_lp(sample, args.alpha, reg)
        except Unbounded as exc:
            table.status = {"status": "unbounded", "message": str(exc)}
            out(table)
            return EXIT_UNBOUNDED
        q0, n0, es = empirical_order_params(lp)
        table.add({"n_assets": sample.n_assets, "horizon": sample.horizon, "epsilon": lp.epsilon_star,
                   "cost": lp.cost, "es_in": es, "q0_emp": q0, "n0_emp": n0, "certified": lp.certificate.ok()})
        out(table)
        return EXIT_OK
    if args.n < 1 or args.t < 1 or args.samples < 1:
        raise ConfigError("--n, --t and --samples must be >= 1")
    model = model_from(args, r=args.n / args.t)
    report = replica_vs_mc(model, reg, args.n, args.t, args.samples, args.seed, jobs=args.jobs, cfg=cfg)
    table = Table(("quantity", "mc_mean", "mc_stderr", "replica", "z_score", "relative_deviation"), args.format)
    for c in report.rows():
        table.add({"quantity": c.name, "mc_mean": c.mc_mean, "mc_stderr": c.mc_stderr, "replica": c.replica,
                   "z_score": c.z_score, "relative_deviation": c.relative_deviation})
    table.status = {"samples": report.n_samples, "solved": report.n_solved, "unbounded": report.n_unbounded,
                    "failed": report.n_failed, "certified": report.all_certified}
    out(table)
    if 2 * report.n_unbounded > report.n_samples:
        return EXIT_UNBOUNDED
    if report.n_failed:
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


COMMANDS = {
    "solve": cmd_solve, "sweep": cmd_sweep, "phase": cmd_phase,
    "map": cmd_map, "weights": cmd_weights, "simulate": cmd_simulate,
}


@contextmanager
def _sink(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    rendered: list[str] = []
    try:
        code = COMMANDS[args.command](args, lambda table: rendered.append(table.render()))
    except ConfigError as exc:
        print(f"esreplica {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Exit as exc:
        print(f"esreplica {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except LPError as exc:
        print(f"esreplica {args.command}: LP error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    try:
        with _sink(args.out) as fh:
            fh.write("".join(rendered))
    except OSError as exc:
        print(f"esreplica {args.command}: error: --out: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
