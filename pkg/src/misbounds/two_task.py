"""Two-task refinement: piecewise rational margins and a Kelley loop.

With two tasks the lower Frechet copula ``H = max(0, F(x) + F(y) - 1)`` is
optimal for a given margin ``F``, and for margins symmetric under
``x -> 1/x`` the worst case reduces to

    phi_F(x, y) = y - 1/x + (1 + 1/x - y) F(y) + F(x) / x,   x y >= 1.

Margins are piecewise on the intervals ``I_1, ..., I_2k`` cut by a symmetric
grid ``S_k = {r_1, ..., r_{k-1}, 1, 1/r_{k-1}, ..., 1/r_1}``:

    F(x) = c0_i + c1_i / x          on I_i = [r_{i-1}, r_i),  i <= k
    F(x) = 1 - c0_i - c1_i * x      on I_{2k+1-i}

so ``F(x) + F(1/x) = 1`` away from breakpoints.  ``c0_1 = c1_1 = 0``,
``c1_i <= 0`` (F nondecreasing inside pieces), pieces chain upward at each
``r_i`` and the left limit at 1 is at most 1/2.

Inside a cell ``I_i x I_j`` it is convenient to work in ``p = 1/x``: there
``F(x) / x = g0 + g1 p + g2 p**2`` and ``F(y)`` is affine in ``y`` (upper
piece) or in ``1/y`` (lower piece), so the cell maximum is found by
enumerating corners, edge and interior stationary points, and points on
the curve ``y = p``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exact import round_decimal, sqrt_extremum_upper
from .grid import GridSet, symmetric_grid, uniform_grid
from .lower_bound import BINDING_TOL, LPSolver, SolverError, get_solver
from .mechanism import MarginPair
from .upper_bound import BoundReport

STOP_TOL = 1e-8
MAX_ITER = 5000
DIV_GUARD = 1e-14
FEAS_TOL = 1e-12


class BracketStall(RuntimeError):
    pass


class DomainError(ValueError):
    pass


def require_two_tasks(n: int) -> None:
    """The lower Frechet bound of three or more margins is not a CDF, so
    the copula construction only exists for two tasks."""
    if n != 2:
        raise ValueError(
            f"the copula construction needs n = 2 (got n = {n}): "
            "the lower Frechet bound for n >= 3 is not a CDF"
        )


def copula_lower_frechet(F) -> MarginPair:
    """Margins (F, max(0, F(x) + F(y) - 1))."""

    def H(x, y):
        return max(0, F(x) + F(y) - 1)

    return MarginPair(F, H)


@dataclass(frozen=True, eq=False)
class PiecewiseRationalCDF:
    grid: GridSet
    c0: np.ndarray
    c1: np.ndarray

    def __post_init__(self):
        if not self.grid.symmetric:
            raise ValueError("piecewise rational margins need a symmetric grid")
        k = self.grid.k
        c0 = np.asarray(self.c0, dtype=float).reshape(-1)
        c1 = np.asarray(self.c1, dtype=float).reshape(-1)
        if c0.size != k or c1.size != k:
            raise ValueError(f"expected {k} coefficient pairs")
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "c1", c1)

    @property
    def k(self) -> int:
        return self.grid.k

    @property
    def lower_breaks(self) -> np.ndarray:
        """r_0 = 0, r_1, ..., r_{k-1}, r_k = 1."""
        return np.concatenate([[0.0], self.grid.values[: self.k]])

    @classmethod
    def heaviside(cls, grid: GridSet) -> "PiecewiseRationalCDF":
        """F = 1{x >= 1}; every piece is zero."""
        return cls(grid, np.zeros(grid.k), np.zeros(grid.k))

    def interval_index(self, x) -> np.ndarray:
        """1-based index of the interval containing x (inf lands in I_2k)."""
        return np.searchsorted(self.grid.values, np.asarray(x, dtype=float), side="right") + 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.k
        idx = self.interval_index(x)
        lower = idx <= k
        piece = np.where(lower, idx, 2 * k + 1 - idx) - 1
        c0, c1 = self.c0[piece], self.c1[piece]
        with np.errstate(divide="ignore", invalid="ignore"):
            low = c0 + np.where(c1 != 0, c1 / x, 0.0)
            up = 1 - c0 - np.where(c1 != 0, c1 * x, 0.0)
        out = np.where(lower, low, up)
        out = np.where(x <= 0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def violations(self, tol: float = 1e-9) -> list[str]:
        k = self.k
        r = self.lower_breaks
        out = []
        if abs(self.c0[0]) > tol or abs(self.c1[0]) > tol:
            out.append("first piece must vanish")
        for i in range(1, k):
            if self.c1[i] > tol:
                out.append(f"piece {i + 1} decreasing")
        for i in range(1, k):
            left = self.c0[i - 1] + self.c1[i - 1] / r[i]
            right = self.c0[i] + self.c1[i] / r[i]
            if left > right + tol:
                out.append(f"drop at r_{i}")
        if self.c0[k - 1] + self.c1[k - 1] > 0.5 + tol:
            out.append("left limit at 1 exceeds 1/2")
        return out

    def is_valid(self, tol: float = 1e-9) -> bool:
        return not self.violations(tol)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "grid": [float(p) for p in self.grid.points],
            "grid_rational": [str(p) for p in self.grid.points],
            "pieces": [{"c0": float(a), "c1": float(b)} for a, b in zip(self.c0, self.c1)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PiecewiseRationalCDF":
        grid = GridSet.from_values(data.get("grid_rational") or data["grid"], True)
        c0 = [p["c0"] for p in data["pieces"]]
        c1 = [p["c1"] for p in data["pieces"]]
        return cls(grid, np.array(c0), np.array(c1))


def phi_two(F, x: float, y: float) -> float:
    """Worst-case expected makespan for ratios with x y >= 1."""
    if x <= 0 or y <= 0:
        raise DomainError("x and y must be positive")
    if x * y < 1:
        raise DomainError(f"phi_two needs x*y >= 1, got x={x}, y={y}")
    p = 1.0 / x
    return y - p + (1 + p - y) * F(y) + p * F(x)


# -- cell geometry and coefficients ----------------------------------------


def admissible_cells(k: int) -> np.ndarray:
    """Cells (i, j), 1-based, with i + j >= 2k + 1, in lexicographic order."""
    ii, jj = np.meshgrid(np.arange(1, 2 * k + 1), np.arange(1, 2 * k + 1), indexing="ij")
    mask = ii + jj >= 2 * k + 1
    return np.column_stack([ii[mask], jj[mask]])


def _breaks(grid: GridSet) -> np.ndarray:
    return np.concatenate([[0.0], grid.values, [np.inf]])


def _cell_boxes(grid: GridSet, cells: np.ndarray):
    """(p_lo, p_hi, y_lo, y_hi) for each cell, in p = 1/x coordinates."""
    k = grid.k
    s = _breaks(grid)
    i, j = cells[:, 0], cells[:, 1]
    with np.errstate(divide="ignore"):
        p_lo = 1.0 / s[i]
        p_hi = 1.0 / s[i - 1]
    y_lo = s[j - 1]
    y_hi = s[j].copy()
    # F(y) = 1 on I_2k makes phi independent of y there
    top = j == 2 * k
    y_hi[top] = y_lo[top]
    # x in I_1 only pairs with y in I_2k, where phi = 1
    first = i == 1
    p_hi[first] = p_lo[first]
    return p_lo, p_hi, y_lo, y_hi


def _cell_coefficients(c0, c1, cells: np.ndarray, k: int):
    """Per-cell (g0, g1, g2) for F(x)/x in p and (a, b, y_upper) for F(y).

    F(y) = a + b*y on upper pieces, a + b/y on lower pieces.
    """
    i, j = cells[:, 0], cells[:, 1]
    x_low = i <= k
    qi = np.where(x_low, i, 2 * k + 1 - i) - 1
    g0 = np.where(x_low, 0.0, -c1[qi])
    g1 = np.where(x_low, c0[qi], 1 - c0[qi])
    g2 = np.where(x_low, c1[qi], 0.0)
    y_up = j > k
    qj = np.where(y_up, 2 * k + 1 - j, j) - 1
    a = np.where(y_up, 1 - c0[qj], c0[qj])
    b = np.where(y_up, -c1[qj], c1[qj])
    return g0, g1, g2, a, b, y_up


def _phi_cell(p, y, g0, g1, g2, a, b, y_up):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_y = np.where(y > 0, 1.0 / np.where(y > 0, y, 1.0), 0.0)
    Fy = a + b * np.where(y_up, y, inv_y)
    return y - p + (1 + p - y) * Fy + g0 + g1 * p + g2 * p * p


def _safe_div(num, den):
    ok = np.abs(den) > DIV_GUARD
    return np.where(ok, num / np.where(ok, den, 1.0), np.nan)


def _candidates(p_lo, p_hi, y_lo, y_hi, g0, g1, g2, a, b, y_up):
    """Candidate (p, y) arrays of shape (cells, 14); NaN marks absent ones."""
    P0, P1 = p_lo, p_hi

    def ystat(p):
        up = _safe_div(1 - a + b * (1 + p), 2 * b)
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = _safe_div(b * (1 + p), 1 - a)
            low = np.where(sq > 0, np.sqrt(np.where(sq > 0, sq, 0.0)), np.nan)
        return np.where(y_up, up, low)

    def pstat(y):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_y = np.where(y > 0, 1.0 / np.where(y > 0, y, 1.0), 0.0)
        Fy = a + b * np.where(y_up, y, inv_y)
        return _safe_div(1 - Fy - g1, 2 * g2)

    # interior: grad = 0 for upper y pieces (a linear system)
    det = -4 * g2 * b - b * b
    r1 = 1 - a - g1
    r2 = -(1 - a + b)
    p_int = _safe_div(r1 * (-2 * b) - b * r2, det)
    y_int = _safe_div(2 * g2 * r2 - b * r1, det)
    p_int = np.where(y_up, p_int, np.nan)
    y_int = np.where(y_up, y_int, np.nan)

    # stationary point along y = p
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = _safe_div(b, g1)
        line_low = np.where(ratio > 0, np.sqrt(np.where(ratio > 0, ratio, 0.0)), np.nan)
    line_up = _safe_div(-(b + g1), 2 * g2)
    p_line = np.where(y_up, line_up, np.where(np.abs(g2) > DIV_GUARD, np.nan, line_low))

    ps = [P0, P0, P1, P1, y_lo, y_hi, P0, P1, P0, P1, pstat(y_lo), pstat(y_hi), p_int, p_line]
    ys = [y_lo, y_hi, y_lo, y_hi, y_lo, y_hi, P0, P1, ystat(P0), ystat(P1), y_lo, y_hi, y_int, p_line]
    return np.column_stack(ps), np.column_stack(ys)


@dataclass(frozen=True)
class SweepResult:
    cells: np.ndarray
    values: np.ndarray
    points: np.ndarray  # (cells, 2) argmax (x, y) per cell
    best: int

    @property
    def t_upper(self) -> float:
        return float(self.values[self.best])

    @property
    def argmax_cell(self) -> tuple[int, int]:
        return tuple(int(v) for v in self.cells[self.best])

    @property
    def argmax_point(self) -> tuple[float, float]:
        return tuple(float(v) for v in self.points[self.best])


def sweep(F: PiecewiseRationalCDF, cells: np.ndarray | None = None) -> SweepResult:
    """Supremum of phi_F over every admissible cell (closure, x y >= 1)."""
    k = F.k
    cells = admissible_cells(k) if cells is None else np.atleast_2d(np.asarray(cells, dtype=np.int64))
    if np.any(cells.sum(axis=1) < 2 * k + 1):
        raise DomainError("cells must satisfy i + j >= 2k + 1")
    p_lo, p_hi, y_lo, y_hi = _cell_boxes(F.grid, cells)
    coeffs = _cell_coefficients(F.c0, F.c1, cells, k)
    P, Y = _candidates(p_lo, p_hi, y_lo, y_hi, *coeffs)
    lo_p, hi_p = p_lo[:, None], p_hi[:, None]
    lo_y, hi_y = y_lo[:, None], y_hi[:, None]
    scale = np.maximum(1.0, np.abs(np.nan_to_num(Y)))
    with np.errstate(invalid="ignore"):
        ok = (
            np.isfinite(P)
            & np.isfinite(Y)
            & (P >= lo_p - FEAS_TOL * scale)
            & (P <= hi_p + FEAS_TOL * scale)
            & (Y >= lo_y - FEAS_TOL * scale)
            & (Y <= hi_y + FEAS_TOL * scale)
            & (Y >= P - FEAS_TOL * scale)
        )
    P = np.clip(np.where(ok, P, lo_p), lo_p, hi_p)
    Y = np.clip(np.where(ok, Y, lo_y), lo_y, hi_y)
    Y = np.maximum(Y, np.minimum(P, hi_y))
    vals = _phi_cell(P, Y, *(c[:, None] for c in coeffs))
    vals = np.where(ok, vals, -np.inf)
    pick = np.argmax(vals, axis=1)
    rows = np.arange(cells.shape[0])
    values = vals[rows, pick]
    p_star, y_star = P[rows, pick], Y[rows, pick]
    with np.errstate(divide="ignore"):
        x_star = np.where(p_star > 0, 1.0 / np.where(p_star > 0, p_star, 1.0), np.inf)
    points = np.column_stack([x_star, y_star])
    return SweepResult(cells, values, points, int(np.argmax(values)))


def inner_max(F: PiecewiseRationalCDF, i: int, j: int) -> tuple[float, tuple[float, float]]:
    """Supremum of phi_F over cl(I_i x I_j) intersected with x y >= 1."""
    res = sweep(F, np.array([[i, j]]))
    return res.t_upper, res.argmax_point


# -- master LP ---------------------------------------------------------------


@dataclass
class CutSet:
    """Cut points (x, y), x y >= 1, each tagged with the cell whose piece
    formulas define its constraint (limits at cell boundaries)."""

    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    cell_i: list = field(default_factory=list)
    cell_j: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.x)

    def add(self, x: float, y: float, i: int, j: int) -> None:
        self.x.append(float(x))
        self.y.append(float(y))
        self.cell_i.append(int(i))
        self.cell_j.append(int(j))

    def contains(self, x: float, y: float, i: int, j: int, tol: float = 1e-12) -> bool:
        for xx, yy, ii, jj in zip(self.x, self.y, self.cell_i, self.cell_j):
            if ii == i and jj == j and abs(yy - y) <= tol and (xx == x or abs(1 / xx - 1 / x) <= tol):
                return True
        return False

    @classmethod
    def from_points(cls, points, grid: GridSet) -> "CutSet":
        """Cuts at arbitrary points, tagged with the cell containing them."""
        out = cls()
        vals = grid.values
        for x, y in points:
            x, y = float(x), float(y)
            if x * y < 1:
                raise DomainError(f"cut ({x}, {y}) violates x y >= 1")
            i = int(np.searchsorted(vals, x, side="right")) + 1
            j = int(np.searchsorted(vals, y, side="right")) + 1
            out.add(x, y, i, j)
        return out

    @classmethod
    def grid_pairs(cls, grid: GridSet) -> "CutSet":
        """All (x, y) with x, y in the grid and x y >= 1."""
        out = cls()
        pts = grid.points
        vals = grid.values
        for a, (qa, xa) in enumerate(zip(pts, vals)):
            for b, (qb, yb) in enumerate(zip(pts, vals)):
                if qa * qb >= 1:
                    out.add(xa, yb, a + 2, b + 2)
        return out

    def to_json(self) -> list:
        return [
            {"x": None if math.isinf(x) else x, "y": y, "cell": [i, j]}
            for x, y, i, j in zip(self.x, self.y, self.cell_i, self.cell_j)
        ]


def _cut_rows(cuts: CutSet, k: int):
    """phi at each cut as const + coef @ [c0..., c1...] (sparse coef)."""
    x = np.asarray(cuts.x, dtype=float)
    y = np.asarray(cuts.y, dtype=float)
    i = np.asarray(cuts.cell_i)
    j = np.asarray(cuts.cell_j)
    with np.errstate(divide="ignore"):
        p = np.where(np.isinf(x), 0.0, 1.0 / x)
    n = x.size
    rows = np.arange(n)
    x_low = i <= k
    qi = np.where(x_low, i, 2 * k + 1 - i) - 1
    y_up = j > k
    qj = np.where(y_up, 2 * k + 1 - j, j) - 1
    w = 1 + p - y
    # F(x)/x: lower p*c0 + p^2*c1 ; upper p - p*c0 - c1
    const = y - p + np.where(x_low, 0.0, p) + np.where(y_up, w, 0.0)
    r = [rows, rows, rows, rows]
    c = [qi, k + qi, qj, k + qj]
    v = [
        np.where(x_low, p, -p),
        np.where(x_low, p * p, -1.0),
        np.where(y_up, -w, w),
        np.where(y_up, -w * y, w / y),
    ]
    A = sp.coo_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, 2 * k)).tocsr()
    A.sum_duplicates()
    return const, A


def _family_rows(grid: GridSet):
    k = grid.k
    r = np.concatenate([[0.0], grid.values[:k]])
    rows, cols, vals, rhs = [], [], [], []
    for i in range(1, k):
        # f_i(1/r_i) <= f_{i+1}(1/r_i)
        row = len(rhs)
        rows += [row] * 4
        cols += [i - 1, k + i - 1, i, k + i]
        vals += [1.0, 1.0 / r[i], -1.0, -1.0 / r[i]]
        rhs.append(0.0)
    row = len(rhs)
    rows += [row, row]
    cols += [k - 1, 2 * k - 1]
    vals += [1.0, 1.0]
    rhs.append(0.5)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(len(rhs), 2 * k)).tocsr()
    return A, np.array(rhs)


@dataclass
class MasterSolution:
    F: PiecewiseRationalCDF
    t_lower: float
    slack: np.ndarray  # per cut


def master_lp(cuts: CutSet, grid: GridSet, solver: LPSolver | None = None) -> MasterSolution:
    """min t over the family subject to phi_F <= t at every cut."""
    if len(cuts) == 0:
        raise ValueError("cut set must be nonempty")
    solver = solver or get_solver()
    k = grid.k
    const, A_cut = _cut_rows(cuts, k)
    A_fam, b_fam = _family_rows(grid)
    n_cut = A_cut.shape[0]
    # variables: [c0 (k), c1 (k), t]
    A = sp.vstack(
        [
            sp.hstack([A_cut, -np.ones((n_cut, 1))]),
            sp.hstack([A_fam, sp.csr_matrix((A_fam.shape[0], 1))]),
        ]
    ).tocsr()
    b = np.concatenate([-const, b_fam])
    lo = np.full(2 * k + 1, -np.inf)
    hi = np.full(2 * k + 1, np.inf)
    lo[0] = hi[0] = 0.0
    lo[k] = hi[k] = 0.0
    hi[k + 1 : 2 * k] = 0.0
    c = np.zeros(2 * k + 1)
    c[-1] = 1.0
    sol = solver.solve(c, A, b, lo, hi)
    if not sol.ok:
        raise SolverError(sol.status, sol.message)
    F = PiecewiseRationalCDF(grid, sol.x[:k], sol.x[k : 2 * k])
    t = float(sol.x[-1])
    slack = t - (const + A_cut @ sol.x[: 2 * k])
    return MasterSolution(F, t, slack)


@dataclass
class RefineResult:
    F: PiecewiseRationalCDF
    t_lower: float
    t_upper: float
    cuts: CutSet
    iterations: int
    trace: list
    status: str
    argmax_cell: tuple[int, int]
    slack: np.ndarray
    seconds: float = 0.0

    @property
    def gap(self) -> float:
        return self.t_upper - self.t_lower

    def to_json(self) -> dict:
        return {
            "k": self.F.k,
            "t_lower": self.t_lower,
            "t_upper": self.t_upper,
            "iterations": self.iterations,
            "status": self.status,
            "argmax_cell": list(self.argmax_cell),
            "F": self.F.to_json(),
            "trace": [{"t_lower": a, "t_upper": b} for a, b in self.trace],
            "cuts": self.cuts.to_json(),
            "seconds": self.seconds,
        }


def cutting_plane(
    grid: GridSet | int,
    stop_tol: float = STOP_TOL,
    max_iter: int = MAX_ITER,
    solver: LPSolver | None = None,
    callback=None,
) -> RefineResult:
    """Kelley's loop: master LP on the cuts, then a full cell sweep.

    Stops when t_upper - t_lower <= stop_tol.  Raises BracketStall if the
    sweep proposes a cut that is already present; running out of
    iterations returns with status 'max_iter'.
    """
    if isinstance(grid, int):
        grid = uniform_grid(grid)
    if not grid.symmetric:
        raise ValueError("cutting plane needs a symmetric grid")
    solver = solver or get_solver()
    start = time.perf_counter()
    cuts = CutSet.grid_pairs(grid)
    cells = admissible_cells(grid.k)
    trace = []
    status = "max_iter"
    for it in range(1, max_iter + 1):
        master = master_lp(cuts, grid, solver)
        sw = sweep(master.F, cells)
        trace.append((master.t_lower, sw.t_upper))
        if callback is not None:
            callback(it, master.t_lower, sw.t_upper)
        if sw.t_upper - master.t_lower <= stop_tol:
            status = "converged"
            break
        x, y = sw.argmax_point
        i, j = sw.argmax_cell
        if cuts.contains(x, y, i, j):
            raise BracketStall(
                f"iteration {it}: repeated cut at ({x!r}, {y!r}) in cell {(i, j)}; "
                f"bracket [{master.t_lower!r}, {sw.t_upper!r}]"
            )
        cuts.add(x, y, i, j)
    return RefineResult(
        F=master.F,
        t_lower=master.t_lower,
        t_upper=sw.t_upper,
        cuts=cuts,
        iterations=it,
        trace=trace,
        status=status,
        argmax_cell=sw.argmax_cell,
        slack=master.slack,
        seconds=time.perf_counter() - start,
    )


def binding_points(result: RefineResult, binding_tol: float = BINDING_TOL) -> list[tuple[float, float]]:
    tight = np.flatnonzero(result.slack <= binding_tol)
    return [(result.cuts.x[r], result.cuts.y[r]) for r in tight]


def refine_grid(result: RefineResult, binding_tol: float = BINDING_TOL, digits: int = 8) -> GridSet:
    """Symmetric grid from the coordinates of binding cuts.

    Coordinates and reciprocals below 1 are rounded to ``digits`` decimals;
    the points above 1 are their exact reciprocals.
    """
    pairs = binding_points(result, binding_tol)
    if not pairs:
        raise ValueError("no binding constraints")
    ratios = set()
    for v in (c for pair in pairs for c in pair):
        if not math.isfinite(v) or v <= 0:
            continue
        r = v if v < 1 else 1.0 / v
        q = round_decimal(r, digits)
        if 0 < q < 1:
            ratios.add(q)
    return symmetric_grid(ratios)


# -- exact certification ---------------------------------------------------


def exact_coefficients(F: PiecewiseRationalCDF) -> tuple[list[Fraction], list[Fraction], bool]:
    """Exact copies of the coefficients, nudged into the family if needed.

    Slopes are clipped to <= 0, each piece is raised to meet the previous one
    at its breakpoint, and the lower half is scaled so the left limit at 1 is
    at most 1/2.  Returns (c0, c1, repaired).
    """
    k = F.k
    r = [Fraction(0)] + list(F.grid.points[:k])
    c0 = [Fraction(float(v)) for v in F.c0]
    c1 = [Fraction(float(v)) for v in F.c1]
    repaired = False
    if c0[0] != 0 or c1[0] != 0:
        c0[0] = c1[0] = Fraction(0)
        repaired = True
    for i in range(1, k):
        if c1[i] > 0:
            c1[i] = Fraction(0)
            repaired = True
        left = c0[i - 1] + c1[i - 1] / r[i]
        right = c0[i] + c1[i] / r[i]
        if right < left:
            c0[i] += left - right
            repaired = True
    top = c0[k - 1] + c1[k - 1]
    if top > Fraction(1, 2):
        lam = Fraction(1, 2) / top
        c0 = [lam * v for v in c0]
        c1 = [lam * v for v in c1]
        repaired = True
    return c0, c1, repaired


def _exact_cell_sup(box, coeffs) -> Fraction:
    """Rigorous rational upper bound on the cell supremum (exact if no
    stationary point is irrational)."""
    P0, P1, Y0, Y1 = box
    g0, g1, g2, a, b, y_up = coeffs

    def Fy(y):
        if y_up:
            return a + b * y
        return a + (b / y if b != 0 else 0)

    def phi(p, y):
        return y - p + (1 + p - y) * Fy(y) + g0 + g1 * p + g2 * p * p

    def feasible(p, y):
        return P0 <= p <= P1 and Y0 <= y <= Y1 and y >= p

    best = None

    def consider(value):
        nonlocal best
        if best is None or value > best:
            best = value

    cands = [(P0, Y0), (P0, Y1), (P1, Y0), (P1, Y1), (Y0, Y0), (Y1, Y1), (P0, P0), (P1, P1)]
    for p in (P0, P1):
        if y_up:
            if b != 0:
                cands.append((p, (1 - a + b * (1 + p)) / (2 * b)))
        elif a != 1:
            # along x = const: phi = (1-a) y + b(1+p)/y + const
            c1, c2 = 1 - a, b * (1 + p)
            if c1 * c2 > 0:
                sq = c2 / c1
                if Y0 * Y0 <= sq <= Y1 * Y1 and sq >= p * p:
                    const = -p + (1 + p) * a - b + g0 + g1 * p + g2 * p * p
                    consider(const + sqrt_extremum_upper(c1, c2))
    for y in (Y0, Y1):
        if g2 != 0:
            cands.append(((1 - Fy(y) - g1) / (2 * g2), y))
    if y_up:
        det = -4 * g2 * b - b * b
        if det != 0:
            r1, r2 = 1 - a - g1, -(1 - a + b)
            cands.append(((r1 * (-2 * b) - b * r2) / det, (2 * g2 * r2 - b * r1) / det))
        if g2 != 0:
            p = -(b + g1) / (2 * g2)
            cands.append((p, p))
    elif g2 == 0 and g1 != 0:
        # along y = p: phi = a + g0 + g1 p + b / p
        if g1 * b > 0:
            sq = b / g1
            lo, hi = max(P0, Y0), min(P1, Y1)
            if lo * lo <= sq <= hi * hi:
                consider(a + g0 + sqrt_extremum_upper(g1, b))
    for p, y in cands:
        if feasible(p, y):
            consider(phi(p, y))
    return best


@dataclass
class ExactSweep:
    bound: Fraction
    argmax_cell: tuple[int, int]
    repaired: bool


def certify_two_task(F: PiecewiseRationalCDF) -> ExactSweep:
    """Exact-rational supremum of phi_F over all admissible cells."""
    k = F.k
    c0, c1, repaired = exact_coefficients(F)
    pts = [Fraction(0)] + list(F.grid.points) + [None]
    best, where = None, None
    for i, j in admissible_cells(k):
        i, j = int(i), int(j)
        p_lo = Fraction(0) if pts[i] is None else 1 / pts[i]
        p_hi = None if i == 1 else 1 / pts[i - 1]
        y_lo = pts[j - 1]
        y_hi = pts[j]
        if j == 2 * k:
            y_hi = y_lo
        if i == 1:
            p_hi = p_lo
        x_low = i <= k
        qi = (i if x_low else 2 * k + 1 - i) - 1
        g = (Fraction(0), c0[qi], c1[qi]) if x_low else (-c1[qi], 1 - c0[qi], Fraction(0))
        y_up = j > k
        qj = (2 * k + 1 - j if y_up else j) - 1
        ab = (1 - c0[qj], -c1[qj]) if y_up else (c0[qj], c1[qj])
        value = _exact_cell_sup((p_lo, p_hi, y_lo, y_hi), (*g, *ab, y_up))
        if best is None or value > best:
            best, where = value, (i, j)
    return ExactSweep(best, where, repaired)


def two_task_report(result: RefineResult, exact: ExactSweep | None = None) -> BoundReport:
    report = BoundReport(
        n=2,
        k=result.F.k,
        a=None,
        bound_float=result.t_upper,
        argmax_cell=result.argmax_cell,
    )
    if exact is not None:
        report.mode = "exact"
        report.bound_rational = exact.bound
        report.argmax_cell = exact.argmax_cell
        report.extra["repaired"] = exact.repaired
    return report


# -- simulation helpers ------------------------------------------------------


def quantile(F: PiecewiseRationalCDF, u, lo: float = 1e-12, hi: float = 1e12, iters: int = 200) -> np.ndarray:
    """Generalized inverse inf{x : F(x) >= u} by bisection in log x."""
    u = np.asarray(u, dtype=float)
    a = np.full(u.shape, math.log(lo))
    b = np.full(u.shape, math.log(hi))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        above = F(np.exp(mid)) >= u
        b = np.where(above, mid, b)
        a = np.where(above, a, mid)
    return np.exp(b)


def countermonotone_sampler(F: PiecewiseRationalCDF):
    """Sampler of (Q(U), Q(1 - U)), whose joint CDF is the lower Frechet copula of F."""

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        return np.column_stack([quantile(F, u), quantile(F, 1 - u)])

    return sample


def discretize(F: PiecewiseRationalCDF, atoms: int = 400):
    """Symmetric discrete law with countermonotone coupling of F's quantiles."""
    from .mechanism import DiscreteThresholdDistribution

    u = (np.arange(atoms) + 0.5) / atoms
    z = np.column_stack([quantile(F, u), quantile(F, 1 - u)])
    return DiscreteThresholdDistribution(z, np.full(atoms, 1.0 / atoms))


def save_refine(result: RefineResult, path: str | Path, exact: ExactSweep | None = None) -> None:
    doc = result.to_json()
    doc["report"] = two_task_report(result, exact).to_json()
    Path(path).write_text(json.dumps(doc, indent=1))
