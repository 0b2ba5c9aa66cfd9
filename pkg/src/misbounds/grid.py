"""Finite grids and CDFs sampled on them.

A grid ``S = {s_1 < ... < s_m}`` is extended by the sentinels 0 and infinity.
Functions on the extended product are addressed by *symbol indices*:
0 stands for the point 0, ``1..m`` for the grid points and ``m + 1`` for
infinity.  Symmetric functions are stored once per permutation orbit, keyed
by the sorted symbol tuple.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

INF_TOKEN = "inf"


def as_fraction(value) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings and floats."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return Fraction(float(value))


@dataclass(frozen=True)
class GridSet:
    """Strictly increasing positive breakpoints, held as exact rationals."""

    points: tuple[Fraction, ...]
    symmetric: bool = False

    def __post_init__(self):
        pts = tuple(as_fraction(p) for p in self.points)
        if not pts:
            raise ValueError("grid must be nonempty")
        if pts[0] <= 0 or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be positive and strictly increasing")
        object.__setattr__(self, "points", pts)
        if self.symmetric and not _reciprocal_closed(pts):
            raise ValueError("symmetric grid must contain 1 and be closed under reciprocals")

    @classmethod
    def from_values(cls, values: Iterable, symmetric: bool | None = None) -> "GridSet":
        pts = tuple(sorted(as_fraction(v) for v in values))
        if symmetric is None:
            symmetric = _reciprocal_closed(pts)
        return cls(pts, symmetric)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def k(self) -> int:
        """Number of pieces per half for a symmetric grid of 2k - 1 points."""
        return (self.size + 1) // 2

    @property
    def values(self) -> np.ndarray:
        return np.array([float(p) for p in self.points])

    def is_subset_of(self, other: "GridSet") -> bool:
        return set(self.points) <= set(other.points)

    def to_json(self) -> dict:
        return {
            "points": [float(p) for p in self.points],
            "rational": [str(p) for p in self.points],
            "symmetric": self.symmetric,
        }

    @classmethod
    def from_json(cls, data) -> "GridSet":
        if isinstance(data, list):
            return cls.from_values(data)
        values = data.get("rational") or data["points"]
        return cls.from_values(values, data.get("symmetric"))


def _reciprocal_closed(pts: Sequence[Fraction]) -> bool:
    m = len(pts)
    if m % 2 == 0 or pts[m // 2] != 1:
        return False
    return all(pts[i] * pts[m - 1 - i] == 1 for i in range(m // 2))


def uniform_grid(k: int) -> GridSet:
    """The set {1/k, ..., (k-1)/k, 1, k/(k-1), ..., k}."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lower = [Fraction(i, k) for i in range(1, k)]
    return GridSet(tuple(lower + [Fraction(1)] + [1 / r for r in reversed(lower)]), symmetric=True)


def symmetric_grid(lower: Iterable) -> GridSet:
    """Grid {r_1, ..., r_{k-1}, 1, 1/r_{k-1}, ..., 1/r_1} from ratios below 1."""
    rs = sorted(set(as_fraction(r) for r in lower))
    if rs and (rs[0] <= 0 or rs[-1] >= 1):
        raise ValueError("ratios must lie in (0, 1)")
    return GridSet(tuple(rs + [Fraction(1)] + [1 / r for r in reversed(rs)]), symmetric=True)


@dataclass(frozen=True)
class ExtendedGrid:
    """Grid plus a finite stand-in ``a`` for infinity, with ``a > max(S)``."""

    base: GridSet
    a: Fraction

    def __post_init__(self):
        a = as_fraction(self.a)
        if a <= self.base.points[-1]:
            raise ValueError(f"a={a} must exceed max grid point {self.base.points[-1]}")
        object.__setattr__(self, "a", a)

    @classmethod
    def default(cls, base: GridSet) -> "ExtendedGrid":
        return cls(base, 2 * base.points[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        """[0, s_1, ..., s_m, a] as floats; index = symbol index."""
        return np.concatenate([[0.0], self.base.values, [float(self.a)]])


def interval_cover(grid: GridSet | ExtendedGrid) -> list[tuple[float, float]]:
    """Half-open intervals [lo, hi) partitioning [0, inf) at the breakpoints."""
    if isinstance(grid, ExtendedGrid):
        cuts = list(grid.breakpoints)
    else:
        cuts = [0.0] + list(grid.values)
    return list(zip(cuts, cuts[1:] + [math.inf]))


# -- orbit bookkeeping -------------------------------------------------------


def orbit_keys(n: int, m: int) -> np.ndarray:
    """Sorted symbol tuples over 1..m+1 for the free orbits, lexicographic.

    Orbits touching symbol 0 (value 0) and the all-infinity orbit (value 1)
    are fixed and omitted.
    """
    inf = m + 1
    keys = [c for c in itertools.combinations_with_replacement(range(1, inf + 1), n) if c[0] != inf]
    return np.array(keys, dtype=np.int64).reshape(-1, n)


def encode(tuples: np.ndarray, m: int) -> np.ndarray:
    """Integer code of sorted symbol tuples, monotone in lexicographic order."""
    base = m + 2
    code = np.zeros(tuples.shape[:-1], dtype=np.int64)
    for j in range(tuples.shape[-1]):
        code = code * base + tuples[..., j]
    return code


@dataclass(frozen=True, eq=False)
class FiniteCDF:
    """A permutation-symmetric function on the extended grid product.

    ``keys`` holds the free orbits as sorted symbol tuples and ``values``
    the function value on each.
    """

    n: int
    grid: GridSet
    values: np.ndarray
    keys: np.ndarray = field(default=None)
    _codes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        m = self.grid.size
        keys = orbit_keys(self.n, m) if self.keys is None else np.asarray(self.keys, dtype=np.int64)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if keys.shape[0] != values.size:
            raise ValueError(f"{values.size} values for {keys.shape[0]} orbits")
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_codes", encode(keys, m))

    @property
    def m(self) -> int:
        return self.grid.size

    @property
    def inf(self) -> int:
        return self.grid.size + 1

    @classmethod
    def from_function(cls, n: int, grid: GridSet, fn) -> "FiniteCDF":
        """Tabulate ``fn(symbol_tuple)`` on every free orbit."""
        keys = orbit_keys(n, grid.size)
        return cls(n, grid, np.array([fn(tuple(int(s) for s in key)) for key in keys]), keys)

    def lookup(self, symbols: np.ndarray) -> np.ndarray:
        """Vectorized value at symbol tuples (last axis of length n)."""
        symbols = np.sort(np.asarray(symbols, dtype=np.int64), axis=-1)
        out = np.zeros(symbols.shape[:-1])
        zero = (symbols == 0).any(axis=-1)
        top = (symbols == self.inf).all(axis=-1)
        free = ~zero & ~top
        pos = np.searchsorted(self._codes, encode(symbols[free], self.m))
        out[free] = self.values[pos]
        out[top] = 1.0
        return out

    def value(self, symbols: Sequence[int]) -> float:
        return float(self.lookup(np.asarray(symbols)[None, :])[0])

    def symbol_of(self, x) -> int:
        """Symbol index of 0, a grid point, or infinity."""
        if x == 0:
            return 0
        if x == math.inf or x == INF_TOKEN:
            return self.inf
        q = as_fraction(x)
        try:
            return self.grid.points.index(q) + 1
        except ValueError:
            vals = self.grid.values
            hit = np.flatnonzero(vals == float(x))
            if hit.size:
                return int(hit[0]) + 1
            raise KeyError(f"{x} is not a grid point") from None

    def at(self, coords: Sequence) -> float:
        return self.value([self.symbol_of(c) for c in coords])

    def dense(self) -> np.ndarray:
        """Full array over the (m + 2)^n extended product."""
        size = self.m + 2
        grids = np.indices((size,) * self.n).reshape(self.n, -1).T
        return self.lookup(grids).reshape((size,) * self.n)

    def margin_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """F[s] = g(s, inf, ...) and H[s, t] = g(s, t, inf, ...) over symbols."""
        size = self.m + 2
        idx = np.arange(size)
        pad = [self.inf] * (self.n - 1)
        F = self.lookup(np.array([[s] + pad for s in idx]))
        if self.n == 1:
            return F, np.minimum.outer(F, F)
        pad = [self.inf] * (self.n - 2)
        pairs = np.array([[s, t] + pad for s in idx for t in idx])
        H = self.lookup(pairs).reshape(size, size)
        return F, H

    def to_json(self, a=None) -> dict:
        def sym(s):
            if s == self.inf:
                return INF_TOKEN
            return float(self.grid.points[s - 1])

        return {
            "n": self.n,
            "grid": [float(p) for p in self.grid.points],
            "grid_rational": [str(p) for p in self.grid.points],
            "symmetric": self.grid.symmetric,
            "a": None if a is None else float(a),
            "orbits": [
                {"key": [sym(int(s)) for s in key], "value": float(v)}
                for key, v in zip(self.keys, self.values)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FiniteCDF":
        values = data.get("grid_rational") or data["grid"]
        grid = GridSet.from_values(values, data.get("symmetric"))
        n = int(data["n"])
        lookup = {float(p): i + 1 for i, p in enumerate(grid.points)}
        inf = grid.size + 1
        table = {}
        for orbit in data["orbits"]:
            key = tuple(sorted(inf if s == INF_TOKEN else lookup[float(s)] for s in orbit["key"]))
            table[key] = float(orbit["value"])
        keys = orbit_keys(n, grid.size)
        vals = np.array([table.get(tuple(int(s) for s in key), np.nan) for key in keys])
        if np.isnan(vals).any():
            raise ValueError("missing orbit values in FiniteCDF document")
        return cls(n, grid, vals, keys)

    def save(self, path: str | Path, a=None) -> None:
        Path(path).write_text(json.dumps(self.to_json(a), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "FiniteCDF":
        return cls.from_json(json.loads(Path(path).read_text()))


def box_masses(dense: np.ndarray) -> np.ndarray:
    """Signed vertex sums over all elementary boxes.

    Entry ``[i_1 - 1, ..., i_n - 1]`` is the sum for the box with sides
    ``[symbol i_j - 1, symbol i_j]``.  Works on float, integer or object
    (Fraction) arrays.
    """
    out = dense
    for axis in range(dense.ndim):
        out = np.diff(out, axis=axis)
    return out


@dataclass(frozen=True)
class NIncreasingCheck:
    ok: bool
    lower: tuple[int, ...] | None = None
    upper: tuple[int, ...] | None = None
    value: float | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_n_increasing(g: FiniteCDF, tol: float = 1e-10) -> NIncreasingCheck:
    """Signed vertex sums on every elementary box must be >= -tol.

    The first violated box is reported by its lower and upper symbol tuples.
    """
    masses = box_masses(g.dense())
    bad = np.argwhere(masses < -tol)
    if bad.size == 0:
        return NIncreasingCheck(True)
    first = tuple(int(i) for i in bad[0])
    return NIncreasingCheck(
        False,
        lower=first,
        upper=tuple(i + 1 for i in first),
        value=float(masses[first]),
    )


def check_boundary(g: FiniteCDF) -> bool:
    """Zero on any 0 coordinate, one at (inf, ..., inf), values in [0, 1]."""
    d = g.dense()
    zero_faces = all(np.all(np.take(d, 0, axis=ax) == 0) for ax in range(g.n))
    return bool(zero_faces and d[(g.inf,) * g.n] == 1.0)


@dataclass(frozen=True)
class PiecewiseConstantCDF:
    """Right-continuous step extension of a FiniteCDF to the whole orthant.

    A point is mapped coordinatewise to the largest breakpoint of
    ``[0, s_1, ..., s_m, a]`` not exceeding it; ``a`` then plays the role of
    infinity in the source lookup.
    """

    source: FiniteCDF
    extended: ExtendedGrid

    def _symbols(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("CDF arguments must be nonnegative")
        # symbol m + 1 is both "a" in the extension and infinity in the source
        return np.searchsorted(self.extended.breakpoints, z, side="right") - 1

    def __call__(self, *z) -> float:
        if len(z) != self.source.n:
            raise ValueError(f"expected {self.source.n} coordinates")
        return self.source.value(self._symbols(z))

    def F(self, x) -> float:
        return self(x, *([math.inf] * (self.source.n - 1)))

    def H(self, x, y) -> float:
        return self(x, y, *([math.inf] * (self.source.n - 2)))

    def margins(self):
        from .mechanism import MarginPair

        return MarginPair(self.F, self.H)


def extend(g: FiniteCDF, a=None) -> PiecewiseConstantCDF:
    ext = ExtendedGrid.default(g.grid) if a is None else ExtendedGrid(g.grid, a)
    return PiecewiseConstantCDF(g, ext)
