"""Epigraph LP for the grid-restricted lower bound.

Variables are the free orbits of a symmetric CDF on the extended grid
product plus the epigraph variable ``t``.  Rows are the restricted worst-case
constraints ``phi_g(x, y) <= t`` for every ordered pair of grid points, and
nonnegativity of the signed vertex sum on every elementary box (one row per
multiset of intervals, since permuted boxes give identical rows).
"""

from __future__ import annotations

import itertools
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .grid import FiniteCDF, GridSet, check_n_increasing, encode, orbit_keys

BINDING_TOL = 1e-7
AUDIT_TOL = 1e-8


class SolverError(RuntimeError):
    def __init__(self, status: int, message: str):
        super().__init__(f"LP solver failed (status {status}): {message}")
        self.status = status
        self.message = message


class InvariantViolation(AssertionError):
    pass


@dataclass(eq=False)
class LinearProgram:
    """min c @ v  s.t.  A_ub @ v <= b_ub,  lo <= v <= hi.

    The last variable is ``t``; the first ``len(phi_pairs)`` rows are the
    worst-case rows, ``phi_pairs[r]`` holding the (x, y) symbol indices.
    """

    n: int
    grid: GridSet
    keys: np.ndarray
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    phi_pairs: np.ndarray

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_constraints(self) -> int:
        return self.A_ub.shape[0]

    def variable_names(self) -> list[str]:
        names = ["g_" + "_".join(str(int(s)) for s in key) for key in self.keys]
        return names + ["t"]

    def write_lp(self, path: str | Path) -> None:
        """Export in CPLEX LP text format."""
        names = self.variable_names()
        A = self.A_ub.tocsr()
        lines = ["\\ grid-restricted lower bound LP", "Minimize", " obj: t", "Subject To"]
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            terms = " ".join(f"{v:+.17g} {names[j]}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
            lines.append(f" r{r}: {terms or '0 t'} <= {self.b_ub[r]:.17g}")
        lines.append("Bounds")
        for name, lo, hi in zip(names, self.lo, self.hi):
            if np.isinf(lo) and np.isinf(hi):
                lines.append(f" {name} free")
            else:
                lines.append(f" {lo:.17g} <= {name} <= {hi:.17g}")
        lines.append("End")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class LPSolution:
    status: int
    message: str
    x: np.ndarray | None
    fun: float
    slack: np.ndarray | None
    duals: np.ndarray | None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == 0


class LPSolver(Protocol):
    name: str

    def solve(self, c, A_ub, b_ub, lo, hi) -> LPSolution: ...


@dataclass
class HighsSolver:
    """scipy's HiGHS bridge; ``method`` is 'highs', 'highs-ds' or 'highs-ipm'."""

    method: str = "highs-ds"
    tol: float = 1e-10
    time_limit: float | None = None
    name: str = field(init=False, default="highs")

    def solve(self, c, A_ub, b_ub, lo, hi) -> LPSolution:
        options = {
            "primal_feasibility_tolerance": self.tol,
            "dual_feasibility_tolerance": self.tol,
        }
        if self.method == "highs-ipm":
            options["ipm_optimality_tolerance"] = 1e-10
        if self.time_limit is not None:
            options["time_limit"] = self.time_limit
        bounds = np.column_stack([np.where(np.isinf(lo), None, lo), np.where(np.isinf(hi), None, hi)])
        start = time.perf_counter()
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method=self.method, options=options)
        elapsed = time.perf_counter() - start
        if res.status != 0:
            return LPSolution(res.status, res.message, None, float("nan"), None, None, elapsed)
        return LPSolution(
            0,
            res.message,
            res.x,
            float(res.fun),
            res.ineqlin.residual,
            -res.ineqlin.marginals,
            elapsed,
        )


def get_solver(name: str | None = None, n: int | None = None) -> LPSolver:
    """Solver from a backend name or the SOLVER_BACKEND environment variable.

    'auto' (the default) uses interior point for the grid LP (``n`` given)
    and dual simplex otherwise.  The grid LP has a large optimal face;
    interior point lands near its center, which gives much smaller upper
    bounds than a simplex vertex, and for n >= 3 it is also far faster.
    """
    name = name or os.environ.get("SOLVER_BACKEND", "auto")
    if name == "auto":
        name = "highs-ds" if n is None else "highs-ipm"
    if name in ("highs", "highs-ds", "highs-ipm"):
        return HighsSolver(method=name)
    raise ValueError(f"unknown LP backend {name!r}")


def phi_on_grid(g: FiniteCDF) -> np.ndarray:
    """phi_g(x, y) for every ordered pair of grid points, from g's margins."""
    F, H = g.margin_arrays()
    s = g.grid.values
    x = s[:, None]
    y = s[None, :]
    Fx = F[1:-1][:, None]
    Fy = F[1:-1][None, :]
    Hxy = H[1:-1, 1:-1]
    return 1 + y - np.minimum(1, 1 - 1 / x + y) * Fx - y * Fy + np.minimum(1 + 1 / x, 1 + y) * Hxy


def build_lp(n: int, S: GridSet) -> LinearProgram:
    if n < 2:
        raise ValueError("the worst-case formulation needs n >= 2")
    m = S.size
    inf = m + 1
    keys = orbit_keys(n, m)
    codes = encode(keys, m)
    nv = keys.shape[0] + 1
    t_col = nv - 1
    pad = [inf] * (n - 2)

    # worst-case rows
    s = S.values
    xi, yi = np.meshgrid(np.arange(1, m + 1), np.arange(1, m + 1), indexing="ij")
    xi, yi = xi.ravel(), yi.ravel()
    x, y = s[xi - 1], s[yi - 1]
    P = xi.size

    def col(symbols):
        return np.searchsorted(codes, encode(np.sort(symbols, axis=-1), m))

    fx = col(np.column_stack([xi] + [np.full(P, inf)] * (n - 1)))
    fy = col(np.column_stack([yi] + [np.full(P, inf)] * (n - 1)))
    hxy = col(np.column_stack([xi, yi] + [np.full(P, inf)] * len(pad)))
    rows = np.arange(P)
    r_parts = [rows, rows, rows, rows]
    c_parts = [fx, fy, hxy, np.full(P, t_col)]
    v_parts = [
        -np.minimum(1, 1 - 1 / x + y),
        -y,
        np.minimum(1 + 1 / x, 1 + y),
        -np.ones(P),
    ]
    b_parts = [-(1 + y)]

    # elementary-box rows: interval i covers symbols (i - 1, i)
    boxes = np.array(list(itertools.combinations_with_replacement(range(1, m + 2), n)), dtype=np.int64)
    B = boxes.shape[0]
    box_rows = P + np.arange(B)
    rhs = np.zeros(B)
    for pattern in itertools.product((0, 1), repeat=n):
        # pattern[j] == 1 picks the lower end of side j
        sign = -1.0 if sum(pattern) % 2 else 1.0
        V = np.sort(boxes - np.array(pattern), axis=1)
        zero = (V == 0).any(axis=1)
        top = (V == inf).all(axis=1)
        free = ~zero & ~top
        # sum(sign * g(v)) >= 0  ->  -sum(sign * g(v)) <= sign * [v is all-inf]
        rhs[top] += sign
        r_parts.append(box_rows[free])
        c_parts.append(np.searchsorted(codes, encode(V[free], m)))
        v_parts.append(np.full(int(free.sum()), -sign))
    b_parts.append(rhs)

    A = sp.coo_matrix(
        (np.concatenate(v_parts), (np.concatenate(r_parts), np.concatenate(c_parts))),
        shape=(P + B, nv),
    ).tocsr()
    A.sum_duplicates()
    c = np.zeros(nv)
    c[t_col] = 1.0
    lo = np.zeros(nv)
    hi = np.ones(nv)
    lo[t_col], hi[t_col] = -np.inf, np.inf
    return LinearProgram(
        n=n,
        grid=S,
        keys=keys,
        c=c,
        A_ub=A,
        b_ub=np.concatenate(b_parts),
        lo=lo,
        hi=hi,
        phi_pairs=np.column_stack([xi, yi]),
    )


@dataclass
class LowerBoundResult:
    bound: float
    g: FiniteCDF
    grid: GridSet
    status: int
    message: str
    tight_pairs: list[tuple[float, float]]
    num_vars: int
    num_constraints: int
    seconds: float

    def to_json(self) -> dict:
        return {
            "n": self.g.n,
            "k": self.grid.k if self.grid.symmetric else None,
            "grid": self.grid.to_json(),
            "bound": self.bound,
            "status": self.status,
            "message": self.message,
            "tight_pairs": [list(p) for p in self.tight_pairs],
            "num_vars": self.num_vars,
            "num_constraints": self.num_constraints,
            "seconds": self.seconds,
        }


def solve_lp(lp: LinearProgram, solver: LPSolver | None = None, binding_tol: float = BINDING_TOL) -> LowerBoundResult:
    solver = solver or get_solver(n=lp.n)
    sol = solver.solve(lp.c, lp.A_ub, lp.b_ub, lp.lo, lp.hi)
    if not sol.ok:
        raise SolverError(sol.status, sol.message)
    values = np.clip(sol.x[:-1], 0.0, 1.0)
    g = FiniteCDF(lp.n, lp.grid, values, lp.keys)
    P = lp.phi_pairs.shape[0]
    tight = np.flatnonzero(sol.slack[:P] <= binding_tol)
    s = lp.grid.values
    pairs = [(float(s[lp.phi_pairs[r, 0] - 1]), float(s[lp.phi_pairs[r, 1] - 1])) for r in tight]
    return LowerBoundResult(
        bound=float(sol.x[-1]),
        g=g,
        grid=lp.grid,
        status=sol.status,
        message=sol.message,
        tight_pairs=pairs,
        num_vars=lp.num_vars,
        num_constraints=lp.num_constraints,
        seconds=sol.seconds,
    )


def lower_bound(
    n: int,
    S: GridSet,
    solver: LPSolver | None = None,
    binding_tol: float = BINDING_TOL,
    audit_tol: float = AUDIT_TOL,
) -> LowerBoundResult:
    """Grid-restricted lower bound, audited against the returned CDF."""
    result = solve_lp(build_lp(n, S), solver, binding_tol)
    worst = float(phi_on_grid(result.g).max())
    if worst > result.bound + audit_tol:
        raise InvariantViolation(f"audit: phi_g reaches {worst!r} above bound {result.bound!r}")
    return result


def validate_lower_bound_cdf(g: FiniteCDF, tol: float = 1e-8) -> bool:
    return bool(check_n_increasing(g, tol))


def save_result(result: LowerBoundResult, path: str | Path) -> None:
    doc = result.to_json()
    doc["g"] = result.g.to_json()
    Path(path).write_text(json.dumps(doc, indent=1))
