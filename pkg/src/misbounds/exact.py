"""Small helpers for rational certification."""

from __future__ import annotations

import math
from fractions import Fraction

SQRT_DIGITS = 30


def round_decimal(value, digits: int = 8) -> Fraction:
    """Round half-even to ``digits`` decimals, returned exactly."""
    q = Fraction(value) if not isinstance(value, float) else Fraction(repr(value))
    scale = 10**digits
    return Fraction(round(q * scale), scale)


def ceil_decimal(q: Fraction, digits: int) -> Fraction:
    scale = 10**digits
    return Fraction(-((-q.numerator * scale) // q.denominator), scale)


def format_up(q: Fraction, digits: int = 10) -> str:
    """Decimal string of ``q`` rounded up at ``digits`` places."""
    return f"{float(ceil_decimal(q, digits)):.{digits}f}"


def sqrt_bounds(q: Fraction, digits: int = SQRT_DIGITS) -> tuple[Fraction, Fraction]:
    """Rationals lo <= sqrt(q) <= hi with hi - lo <= 10**-digits."""
    if q < 0:
        raise ValueError("negative radicand")
    scale = 10**digits
    n, d = q.numerator, q.denominator
    root = math.isqrt(n * d * scale * scale)
    lo = Fraction(root, d * scale)
    hi = lo if root * root == n * d * scale * scale else Fraction(root + 1, d * scale)
    return lo, hi


def sqrt_extremum_upper(c1: Fraction, c2: Fraction) -> Fraction:
    """Upper bound on c1*u + c2/u at its stationary point u = sqrt(c2/c1).

    Requires c1 * c2 > 0; the stationary value is sign(c1) * 2 * sqrt(c1 * c2).
    """
    lo, hi = sqrt_bounds(c1 * c2)
    return 2 * hi if c1 > 0 else -2 * lo
