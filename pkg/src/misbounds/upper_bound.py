"""Worst-case ratio of the piecewise-constant threshold law built from g.

The intervals are ``I_1 = [0, s_1), ..., I_{m+1} = [s_m, a), I_{m+2} = [a, inf)``
with ``a`` standing in for infinity.  The margins of the extension are
constant on every cell ``I_i x I_j``, and with constant margins

    phi = max(b1, b2),
    b1 = 1 + y - F_x - y F_y + (1 + 1/x) H        (x y >= 1 branch)
    b2 = 1 + y - (1 - 1/x + y) F_x - y F_y + (1 + y) H

because ``b1 - b2 = (y - 1/x)(F_x - H)`` and ``H <= F_x``.  Both branches
are nonincreasing in x and nondecreasing in y, so each cell supremum is the
limit at the corner ``(x_lo, y_hi)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exact import format_up, round_decimal
from .grid import ExtendedGrid, FiniteCDF, box_masses
from .mechanism import (
    DiscreteThresholdDistribution,
    _makespans,
    optimal_makespan,
    worst_case_instance,
)

EXACT_DIGITS = 8
SCREEN_TOL = 1e-9
DYADIC_FLOOR = 200  # exact mode drops box masses below 2**-200


@dataclass
class BoundReport:
    n: int
    k: int | None
    a: float | None
    bound_float: float
    argmax_cell: tuple[int, int]
    mode: str = "float"
    bound_rational: Fraction | None = None
    limit_point: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def bound(self) -> float:
        return self.bound_float

    def to_json(self) -> dict:
        doc = {
            "n": self.n,
            "k": self.k,
            "a": self.a,
            "bound_float": self.bound_float,
            "bound_rational": None,
            "argmax_cell": list(self.argmax_cell),
            "mode": self.mode,
        }
        if self.bound_rational is not None:
            q = self.bound_rational
            doc["bound_rational"] = f"{q.numerator}/{q.denominator}"
            doc["bound_decimal_up"] = format_up(q, 10)
        if self.limit_point is not None:
            doc["limit_point"] = [_json_float(v) for v in self.limit_point]
        doc.update(self.extra)
        return doc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _json_float(v: float):
    return "inf" if math.isinf(v) else float(v)


def _extended(g: FiniteCDF, a) -> ExtendedGrid:
    return ExtendedGrid.default(g.grid) if a is None else ExtendedGrid(g.grid, a)


def cell_suprema(F: np.ndarray, H: np.ndarray, breaks: np.ndarray) -> np.ndarray:
    """Float cell suprema, shape (m+2, m+2); entry [i-1, j-1] is cell (i, j).

    ``F`` and ``H`` are indexed by symbol (0 .. m+1) and ``breaks`` is
    ``[0, s_1, ..., s_m, a]``.
    """
    size = F.size
    x = breaks[:, None]  # x_lo of interval i is breaks[i - 1]
    y = np.append(breaks[1:], np.inf)[None, :]  # y_hi of interval j
    Fx = F[:, None]
    Fy = F[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_x = np.where(x > 0, 1.0 / np.where(x > 0, x, 1.0), 0.0)
        b1 = 1 + y - Fx - y * Fy + (1 + inv_x) * H
        b2 = 1 + y - (1 - inv_x + y) * Fx - y * Fy + (1 + y) * H
        out = np.maximum(b1, b2)
        # I_1: F_x = H = 0
        out[0, :] = (1 + y - y * Fy)[0]
    # I_{m+2} = [a, inf): F_y = 1, H = F_x
    out[:, -1] = 1 + F * inv_x[:, 0]
    out[0, -1] = 1.0
    assert out.shape == (size, size)
    return out


def _exact_cell(Fx, Fy, H, x_lo, y_hi, first_x: bool, last_y: bool) -> Fraction:
    if last_y:
        return Fraction(1) if first_x else 1 + Fx / x_lo
    if first_x:
        return 1 + y_hi - y_hi * Fy
    inv_x = 1 / x_lo
    b1 = 1 + y_hi - Fx - y_hi * Fy + (1 + inv_x) * H
    b2 = 1 + y_hi - (1 - inv_x + y_hi) * Fx - y_hi * Fy + (1 + y_hi) * H
    return max(b1, b2)


def _check_grid(g: FiniteCDF) -> None:
    if not g.grid.symmetric:
        raise ValueError("upper bounds need a reciprocal-closed grid containing 1")
    if g.n < 2:
        raise ValueError("upper bounds need n >= 2")


def upper_bound(g: FiniteCDF, a=None) -> BoundReport:
    """Float supremum of phi over all cells for the extension of g."""
    _check_grid(g)
    ext = _extended(g, a)
    F, H = g.margin_arrays()
    sup = cell_suprema(F, H, ext.breakpoints)
    flat = int(np.argmax(sup))  # first maximum: smallest (i, j)
    i, j = np.unravel_index(flat, sup.shape)
    y_hi = np.append(ext.breakpoints[1:], np.inf)
    return BoundReport(
        n=g.n,
        k=g.grid.k,
        a=float(ext.a),
        bound_float=float(sup[i, j]),
        argmax_cell=(int(i) + 1, int(j) + 1),
        limit_point=(float(ext.breakpoints[i]), float(y_hi[j])),
    )


@dataclass(frozen=True)
class RationalMargins:
    """Integer-scaled margins of a repaired rational CDF: F = F_int / total."""

    breaks: tuple[Fraction, ...]
    F: np.ndarray  # object array of int
    H: np.ndarray
    total: int
    repaired_mass: int


def _exact_masses(g: FiniteCDF, round_values: int | None) -> tuple[np.ndarray, int]:
    """Nonnegative integer box masses on a common scale, plus the scale.

    With ``round_values`` set, g is rounded to that many decimals first and
    the masses are integer differences at scale 10**digits.  Otherwise the
    float box masses are taken exactly as dyadic rationals at scale
    2**(DYADIC_FLOOR + 53).
    """
    if round_values is not None:
        scale = 10**round_values
        dense = np.rint(g.dense() * scale).astype(np.int64)
        return box_masses(dense).astype(object), scale
    masses = box_masses(g.dense())
    masses = np.where(masses >= 2.0**-DYADIC_FLOOR, masses, 0.0)
    shift = DYADIC_FLOOR + 53
    ints = np.array([int(v) for v in np.ldexp(masses, shift).ravel()], dtype=object)
    return ints.reshape(masses.shape), 1 << shift


def rational_margins(
    g: FiniteCDF, a=None, digits: int = EXACT_DIGITS, round_values: int | None = None
) -> RationalMargins:
    """Exact margins of a valid law close to the extension of g.

    Grid points and a are rounded to ``digits`` decimals.  Box masses are
    made exact (see _exact_masses), negative ones are clipped to zero and the
    rest renormalized, so F and H come from a genuine probability law on the
    rounded breakpoints.
    """
    ext = _extended(g, a)
    pts = [round_decimal(p, digits) for p in g.grid.points]
    a_q = round_decimal(ext.a, digits)
    breaks = (Fraction(0), *pts, a_q)
    if any(b <= a for a, b in zip(breaks, breaks[1:])):
        raise ValueError(f"grid points collide after rounding to {digits} digits")
    masses, scale = _exact_masses(g, round_values)
    negative = masses < 0
    repaired = int(-masses[negative].sum()) if negative.any() else 0
    masses = np.where(negative, 0, masses)
    total = int(masses.sum())
    if total <= 0:
        raise ValueError("no probability mass left after rounding")
    n = g.n
    m1 = masses.sum(axis=tuple(range(1, n))) if n > 1 else masses
    m2 = masses.sum(axis=tuple(range(2, n))) if n > 2 else masses
    F = np.concatenate([[0], np.cumsum(m1)]).astype(object)
    H = np.zeros((m2.shape[0] + 1,) * 2, dtype=object)
    H[1:, 1:] = np.cumsum(np.cumsum(m2, axis=0), axis=1)
    return RationalMargins(breaks, F, H, total, repaired)


def certify_exact(
    g: FiniteCDF, a=None, digits: int = EXACT_DIGITS, round_values: int | None = None
) -> BoundReport:
    """Exact rational upper bound for the rounded and repaired extension.

    Cells are screened in floats; every cell within SCREEN_TOL of the float
    maximum is then evaluated in rational arithmetic.
    """
    _check_grid(g)
    rm = rational_margins(g, a, digits, round_values)
    T = rm.total
    Ff = np.array([float(Fraction(int(v), T)) for v in rm.F])
    Hf = np.vectorize(lambda v: float(Fraction(int(v), T)))(rm.H)
    breaks_f = np.array([float(b) for b in rm.breaks])
    sup = cell_suprema(Ff, Hf, breaks_f)
    cutoff = sup.max() - SCREEN_TOL
    size = Ff.size
    best, where = None, None
    for i, j in np.argwhere(sup >= cutoff):  # row-major, so ties keep the smallest cell
        i, j = int(i), int(j)
        last_y = j == size - 1
        value = _exact_cell(
            Fraction(int(rm.F[i]), T),
            Fraction(int(rm.F[j]), T),
            Fraction(int(rm.H[i, j]), T),
            rm.breaks[i],
            None if last_y else rm.breaks[j + 1],
            i == 0,
            last_y,
        )
        if best is None or value > best:
            best, where = value, (i + 1, j + 1)
    y_hi = rm.breaks[where[1]] if where[1] < size else None
    return BoundReport(
        n=g.n,
        k=g.grid.k,
        a=float(rm.breaks[-1]),
        bound_float=float(best),
        argmax_cell=where,
        mode="exact",
        bound_rational=best,
        limit_point=(float(rm.breaks[where[0] - 1]), math.inf if y_hi is None else float(y_hi)),
        extra={
            "digits": digits,
            "round_values": round_values,
            "repaired_mass": float(Fraction(rm.repaired_mass, T)),
        },
    )


# -- sampling the induced algorithm --------------------------------------------


def threshold_distribution(g: FiniteCDF, a=None) -> DiscreteThresholdDistribution:
    """The finite law whose CDF is the extension of g.

    The box with sides ``[symbol i - 1, symbol i]`` puts its mass on the
    breakpoint of symbol i, with symbol m+1 sitting at ``a``.
    """
    ext = _extended(g, a)
    masses = np.maximum(box_masses(g.dense()), 0.0)
    idx = np.argwhere(masses > 0)
    weights = masses[tuple(idx.T)]
    atoms = ext.breakpoints[idx + 1]
    return DiscreteThresholdDistribution(atoms, weights / weights.sum())


@dataclass
class SpotCheck:
    cell: tuple[int, int]
    cell_sup: float
    max_makespan: float
    max_ratio: float
    samples: int
    ok: bool


def ratio_spot_check(
    g: FiniteCDF,
    a=None,
    cell: tuple[int, int] = (1, 1),
    trials: int = 100,
    seed: int = 0,
    eps: float = 1e-6,
    dist: DiscreteThresholdDistribution | None = None,
) -> SpotCheck:
    """Sample (x, y) in a cell and compare exact expected makespans with the
    cell supremum.

    The expected makespan on the padded instance is at most the two-task
    value plus (n - 2) eps, and the two-task value is at most the cell
    supremum; the ratio equals the makespan wherever max(y, 1/x) >= 1.
    """
    _check_grid(g)
    ext = _extended(g, a)
    size = g.m + 2
    i, j = cell
    if not (1 <= i <= size and 1 <= j <= size):
        raise ValueError(f"cell {cell} outside 1..{size}")
    F, H = g.margin_arrays()
    sup = float(cell_suprema(F, H, ext.breakpoints)[i - 1, j - 1])
    dist = dist or threshold_distribution(g, ext.a)
    rng = np.random.Generator(np.random.Philox(seed))
    edges = np.append(ext.breakpoints, np.inf)

    def draw(k: int, count: int) -> np.ndarray:
        lo, hi = edges[k - 1], edges[k]
        if math.isinf(hi):
            return lo * np.exp(rng.exponential(1.0, count))
        return lo + (hi - lo) * rng.random(count)

    xs = draw(i, trials)
    ys = draw(j, trials)
    xs = np.where(xs > 0, xs, edges[i] * 0.5)
    ys = np.where(ys > 0, ys, edges[j] * 0.5)
    worst_mk, worst_ratio = -np.inf, -np.inf
    for x, y in zip(xs, ys):
        T = worst_case_instance(float(x), float(y), g.n, eps if g.n > 2 else 0.0)
        mk = float(dist.weights @ _makespans(dist.atoms, T))
        worst_mk = max(worst_mk, mk)
        worst_ratio = max(worst_ratio, mk / optimal_makespan(T))
    slack = (g.n - 2) * eps + 1e-12
    return SpotCheck(cell, sup, worst_mk, worst_ratio, trials, bool(worst_mk <= sup + slack))
