"""Command-line front end.

    misbounds lower --n 2 --k 25 --out lower.json
    misbounds upper --g lower.json --exact
    misbounds two-task --k 100 --exact --grid-out refined.json
    misbounds lower --n 2 --grid refined.json
    misbounds simulate --k 10 --points 200 --seed 1

Exit codes: 0 success, 2 solver failure, 3 bracket stall, 4 failed self-check.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .grid import FiniteCDF, GridSet, check_boundary, check_n_increasing, uniform_grid
from .lower_bound import BINDING_TOL, InvariantViolation, SolverError, get_solver, lower_bound
from .mechanism import (
    expected_ratio,
    load_distribution,
    load_time_matrix,
    monte_carlo_ratio,
    phi,
    worst_case_instance,
)
from .two_task import (
    STOP_TOL,
    BracketStall,
    certify_two_task,
    cutting_plane,
    discretize,
    refine_grid,
    require_two_tasks,
    two_task_report,
)
from .upper_bound import certify_exact, upper_bound

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_STALL = 3
EXIT_INVARIANT = 4


def artifact_version() -> str:
    """Package version, suffixed with the git commit when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    rev = out.stdout.strip()
    return f"{__version__}+{rev}" if out.returncode == 0 and rev else __version__


def parse_positive(raw: str) -> Fraction:
    q = Fraction(raw)
    if q <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {raw}")
    return q


def positive_float(raw: str) -> float:
    v = float(raw)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {raw}")
    return v


def load_grid(path: str | Path) -> GridSet:
    """Grid from a GridSet document, a report holding one, or a plain list."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        return GridSet.from_values(data)
    for key in ("refined_grid", "grid"):
        if isinstance(data.get(key), dict):
            return GridSet.from_json(data[key])
    return GridSet.from_json(data)


def load_cdf(path: str | Path) -> tuple[FiniteCDF, Fraction | None]:
    """FiniteCDF from its own document or a lower-bound report, plus any stored a."""
    data = json.loads(Path(path).read_text())
    doc = data.get("g", data)
    a = doc.get("a")
    return FiniteCDF.from_json(doc), None if a is None else Fraction(a)


class Run:
    """Collects the report document and writes it."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.start = time.perf_counter()
        config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
        self.doc = {"command": args.command, "config": config, "version": artifact_version()}

    def finish(self, status: str, code: int) -> int:
        self.doc["status"] = status
        self.doc["exit_code"] = code
        if not self.args.no_timing:
            self.doc["duration_seconds"] = time.perf_counter() - self.start
        if self.args.out:
            Path(self.args.out).write_text(json.dumps(self.doc, indent=1) + "\n")
        return code


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _grid_for(args) -> GridSet:
    if args.grid:
        return load_grid(args.grid)
    if args.k is None:
        raise SystemExit("one of --k or --grid is required")
    return uniform_grid(args.k)


def _self_check(g: FiniteCDF, tol: float = 1e-8) -> None:
    check = check_n_increasing(g, tol)
    if not check:
        raise InvariantViolation(f"optimal g not n-increasing at box {check.lower}..{check.upper}: {check.value}")
    if not check_boundary(g):
        raise InvariantViolation("optimal g violates boundary conditions")


def _print_bound(label: str, report) -> None:
    doc = report.to_json()
    line = f"{label}: {report.bound_float:.10f}  cell {tuple(report.argmax_cell)}"
    if report.bound_rational is not None:
        line += f"\n  rounded up {doc['bound_decimal_up']}\n  rational {doc['bound_rational']}"
    print(line)


def cmd_lower(args) -> int:
    run = Run(args)
    if args.n < 2:
        raise SystemExit("--n must be at least 2")
    grid = _grid_for(args)
    try:
        res = lower_bound(args.n, grid, get_solver(n=args.n), args.binding_tol)
        _self_check(res.g)
    except SolverError as exc:
        run.doc["error"] = str(exc)
        print(f"solver failure: {exc}", file=sys.stderr)
        return run.finish("solver_failure", EXIT_SOLVER)
    except InvariantViolation as exc:
        run.doc["error"] = str(exc)
        print(f"self-check failed: {exc}", file=sys.stderr)
        return run.finish("invariant_violation", EXIT_INVARIANT)
    a = args.a if args.a is not None else 2 * grid.points[-1]
    run.doc["result"] = res.to_json()
    run.doc["g"] = res.g.to_json(a)
    print(f"lower bound n={args.n} |S|={grid.size}: {res.bound:.10f}")
    print(f"  {res.num_vars} variables, {res.num_constraints} rows, {len(res.tight_pairs)} tight pairs")
    return run.finish("ok", EXIT_OK)


def cmd_upper(args) -> int:
    run = Run(args)
    a = args.a
    if args.g:
        g, stored_a = load_cdf(args.g)
        a = a if a is not None else stored_a
    else:
        if args.n < 2:
            raise SystemExit("--n must be at least 2")
        grid = _grid_for(args)
        try:
            res = lower_bound(args.n, grid, get_solver(n=args.n), args.binding_tol)
            _self_check(res.g)
        except SolverError as exc:
            run.doc["error"] = str(exc)
            print(f"solver failure: {exc}", file=sys.stderr)
            return run.finish("solver_failure", EXIT_SOLVER)
        except InvariantViolation as exc:
            run.doc["error"] = str(exc)
            print(f"self-check failed: {exc}", file=sys.stderr)
            return run.finish("invariant_violation", EXIT_INVARIANT)
        g = res.g
        run.doc["lower"] = res.to_json()
        print(f"lower bound: {res.bound:.10f}")
    report = upper_bound(g, a)
    run.doc["upper"] = report.to_json()
    _print_bound("upper bound", report)
    if args.exact:
        exact = certify_exact(g, a, round_values=args.round_values)
        run.doc["upper_exact"] = exact.to_json()
        _print_bound("exact upper bound", exact)
        if abs(exact.bound_float - report.bound_float) > 1e-7:
            print("  warning: exact and float bounds differ by more than 1e-7", file=sys.stderr)
    return run.finish("ok", EXIT_OK)


def cmd_two_task(args) -> int:
    run = Run(args)
    try:
        require_two_tasks(args.n)
    except ValueError as exc:
        raise SystemExit(str(exc))
    try:
        res = cutting_plane(args.k, args.stop_tol, args.max_iter, get_solver())
    except BracketStall as exc:
        run.doc["error"] = str(exc)
        print(f"bracket stall: {exc}", file=sys.stderr)
        return run.finish("stall", EXIT_STALL)
    except SolverError as exc:
        run.doc["error"] = str(exc)
        print(f"solver failure: {exc}", file=sys.stderr)
        return run.finish("solver_failure", EXIT_SOLVER)
    exact = certify_two_task(res.F) if args.exact else None
    report = two_task_report(res, exact)
    run.doc["upper"] = report.to_json()
    run.doc["t_lower"] = res.t_lower
    run.doc["iterations"] = res.iterations
    run.doc["cut_status"] = res.status
    run.doc["F"] = res.F.to_json()
    run.doc["trace"] = [{"t_lower": lo, "t_upper": hi} for lo, hi in res.trace]
    print(f"cutting plane k={args.k}: {res.iterations} iterations, status {res.status}")
    print(f"  bracket [{res.t_lower:.10f}, {res.t_upper:.10f}]")
    if exact is not None:
        _print_bound("exact upper bound", report)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "t_lower", "t_upper"])
            for it, (lo, hi) in enumerate(res.trace, 1):
                w.writerow([it, repr(lo), repr(hi)])
    code = EXIT_OK if res.status == "converged" else EXIT_STALL
    if not args.no_refine:
        grid = refine_grid(res, args.binding_tol)
        run.doc["refined_grid"] = grid.to_json()
        if args.grid_out:
            Path(args.grid_out).write_text(json.dumps(grid.to_json(), indent=1) + "\n")
        try:
            low = lower_bound(2, grid, get_solver(n=2), args.binding_tol)
        except SolverError as exc:
            run.doc["error"] = str(exc)
            print(f"solver failure on refined grid: {exc}", file=sys.stderr)
            return run.finish("solver_failure", EXIT_SOLVER)
        upper = float(exact.bound) if exact is not None else res.t_upper
        run.doc["refined"] = {
            "k": grid.k,
            "size": grid.size,
            "lower_bound": low.bound,
            "gap": upper - low.bound,
            "num_vars": low.num_vars,
        }
        print(f"refined grid k={grid.k}: lower bound {low.bound:.10f}")
        print(f"  R_2 in [{low.bound:.10f}, {upper:.10f}], width {upper - low.bound:.3e}")
    status = "ok" if code == EXIT_OK else "max_iter"
    return run.finish(status, code)


def _random_points(rng: np.random.Generator, count: int, spread: float) -> list[tuple[float, float]]:
    """Log-uniform (x, y) with max(y, 1/x) >= 1, where the ratio equals phi."""
    pts = []
    while len(pts) < count:
        x, y = np.exp(rng.uniform(-math.log(spread), math.log(spread), 2))
        if max(y, 1 / x) >= 1:
            pts.append((float(x), float(y)))
    return pts


def cmd_simulate(args) -> int:
    run = Run(args)
    if args.dist:
        dist = load_distribution(args.dist)
    elif args.k is not None:
        res = cutting_plane(args.k, STOP_TOL, 5000, get_solver())
        dist = discretize(res.F, args.atoms)
        run.doc["source"] = {"k": args.k, "t_upper": res.t_upper, "atoms": args.atoms}
    else:
        raise SystemExit("one of --dist or --k is required")
    cases = []
    if args.instance:
        cases.append((None, load_time_matrix(args.instance)))
    else:
        if dist.n != 2:
            raise SystemExit("random (x, y) points need a two-task distribution")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 0])))
        cases = [((x, y), worst_case_instance(x, y, 2)) for x, y in _random_points(rng, args.points, args.spread)]
    margins = dist.margins() if dist.n == 2 else None

    def one(idx: int):
        xy, T = cases[idx]
        analytic = expected_ratio(dist, T)
        seed = [args.seed, 1, idx]
        mean, se = monte_carlo_ratio(dist.sample, T, args.trials, seed)
        row = {"index": idx, "analytic": analytic, "mc_mean": mean, "mc_stderr": se}
        if xy is not None:
            row.update(x=xy[0], y=xy[1], phi=phi(margins, *xy))
        diff = abs(mean - analytic)
        # a floor absorbs float noise when every draw has the same makespan
        row["ok"] = bool(diff <= max(args.sigma * se, 1e-12))
        if xy is not None:
            row["ok"] = row["ok"] and abs(row["phi"] - analytic) <= 1e-12
        return row

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = list(pool.map(one, range(len(cases))))
    bad = [r for r in rows if not r["ok"]]
    run.doc["rows"] = rows
    run.doc["violations"] = len(bad)
    if args.table:
        with open(args.table, "w", newline="") as fh:
            keys = list(rows[0].keys())
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
    print(f"simulated {len(rows)} instance(s), {args.trials} trials each: {len(bad)} outside {args.sigma} sigma")
    for r in rows[:5]:
        print(f"  analytic {r['analytic']:.6f}  monte carlo {r['mc_mean']:.6f} +- {r['mc_stderr']:.1e}")
    if bad:
        return run.finish("mismatch", EXIT_INVARIANT)
    return run.finish("ok", EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misbounds", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the JSON report here")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker cap")
    common.add_argument("--binding-tol", type=positive_float, default=BINDING_TOL)
    common.add_argument("--no-timing", action="store_true", help="omit the duration so reports are byte-stable")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lower", parents=[common], help="grid-restricted lower bound LP")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=int)
    p.add_argument("--grid", help="grid JSON (a grid document or a two-task report)")
    p.add_argument("--a", type=parse_positive, help="stand-in for infinity stored with g")
    p.set_defaults(func=cmd_lower)

    p = sub.add_parser("upper", parents=[common], help="upper bound of the piecewise-constant algorithm")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=int)
    p.add_argument("--grid")
    p.add_argument("--g", help="g from a lower-bound report or FiniteCDF JSON")
    p.add_argument("--a", type=parse_positive, help="stand-in for infinity (default 2 max S)")
    p.add_argument("--exact", action="store_true", help="also certify in rational arithmetic")
    p.add_argument("--round-values", type=int, help="round g to this many decimals before certifying")
    p.set_defaults(func=cmd_upper)

    p = sub.add_parser("two-task", parents=[common], help="cutting plane over piecewise rational margins")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--stop-tol", type=positive_float, default=STOP_TOL)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--no-refine", action="store_true", help="skip the refined-grid lower bound")
    p.add_argument("--grid-out", help="write the refined grid here")
    p.add_argument("--trace", help="write the bracket trace as CSV")
    p.set_defaults(func=cmd_two_task)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo against exact expectations")
    p.add_argument("--dist", help="threshold distribution JSON")
    p.add_argument("--k", type=int, help="use the discretized cutting-plane margin for this k")
    p.add_argument("--atoms", type=int, default=400)
    p.add_argument("--instance", help="time matrix CSV")
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--spread", type=positive_float, default=8.0, help="x, y drawn log-uniformly in [1/spread, spread]")
    p.add_argument("--trials", type=int, default=20000)
    p.add_argument("--sigma", type=positive_float, default=3.0)
    p.add_argument("--table", help="write the comparison table as CSV")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "k", None) is not None and args.k < 1:
        raise SystemExit("--k must be at least 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
