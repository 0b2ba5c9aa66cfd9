import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from misbounds.grid import (
    ExtendedGrid,
    FiniteCDF,
    GridSet,
    box_masses,
    check_boundary,
    check_n_increasing,
    extend,
    interval_cover,
    orbit_keys,
    symmetric_grid,
    uniform_grid,
)

FIG_GRID = GridSet.from_values(["1/3", "2/3", "1", "3/2", "3"])
FIG_VALUES = [0.25, 0.45, 0.55, 0.75, 0.9]


def test_uniform_grid_examples():
    assert uniform_grid(3).points == tuple(Fraction(v) for v in ("1/3", "2/3", "1", "3/2", "3"))
    assert uniform_grid(1).points == (Fraction(1),)
    assert uniform_grid(2).points == (Fraction(1, 2), Fraction(1), Fraction(2))
    assert uniform_grid(7).size == 13 and uniform_grid(7).k == 7
    assert uniform_grid(3).symmetric


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSet((Fraction(1), Fraction(1)))
    with pytest.raises(ValueError):
        GridSet((Fraction(-1), Fraction(1)))
    with pytest.raises(ValueError):
        GridSet((Fraction(1, 2), Fraction(1)), symmetric=True)
    with pytest.raises(ValueError):
        ExtendedGrid(uniform_grid(3), 3)


def test_symmetric_grid_closed():
    g = symmetric_grid([Fraction(1, 7), Fraction(2, 5)])
    assert g.symmetric and g.k == 3
    assert all(1 / p in g.points for p in g.points)


def test_interval_cover_examples():
    assert interval_cover(ExtendedGrid(GridSet.from_values([1]), 2)) == [(0, 1), (1, 2), (2, math.inf)]
    cover = interval_cover(ExtendedGrid(FIG_GRID, Fraction(7, 2)))
    assert len(cover) == 7 and cover[-1] == (3.5, math.inf)
    assert len(interval_cover(uniform_grid(6))) == 12


def test_orbit_count():
    # symbols {1, inf} -> multisets {1,1}, {1,inf}; {inf,inf} is fixed
    assert orbit_keys(2, 1).shape[0] == 2
    # |S| = 5: C(7, 2) multisets over 6 nonzero symbols, minus the all-inf orbit
    assert orbit_keys(2, 5).shape[0] == 20
    assert orbit_keys(3, 4).shape[0] == math.comb(5 + 2, 3) - 1


def figure_cdf():
    return FiniteCDF(1, FIG_GRID, np.array(FIG_VALUES))


def test_extend_figure_example():
    G = extend(figure_cdf(), Fraction(7, 2))
    assert G(2.9) == 0.75
    assert G(3) == 0.9
    assert G(3.5) == 1.0
    assert G(0.2) == 0.0
    for p, v in zip(FIG_GRID.values, FIG_VALUES):
        assert G(p) == v


def test_extend_rejects_small_a():
    with pytest.raises(ValueError):
        extend(figure_cdf(), 2)


def product_cdf(n, grid, F):
    """g(z) = prod F(z_j) over symbols, F indexed by symbol."""
    return FiniteCDF.from_function(n, grid, lambda key: float(np.prod([F[s] for s in key])))


def test_check_n_increasing_examples():
    assert check_n_increasing(figure_cdf())
    F = np.array([0, 0.2, 0.5, 0.7, 0.9, 0.95, 1.0])
    assert check_n_increasing(product_cdf(2, FIG_GRID, F))
    # g(1,1)=0.9, g(1,inf)=0.5: box [0,1]x[1,inf] sums to 0.5 - 0.9 = -0.4
    bad = FiniteCDF(2, GridSet.from_values([1]), np.array([0.9, 0.5]))
    res = check_n_increasing(bad)
    assert not res
    assert res.value == pytest.approx(-0.4)
    assert sorted([res.lower, res.upper]) == [(0, 1), (1, 2)]


def test_boundary_and_symmetry():
    F = np.array([0, 0.2, 0.5, 0.7, 0.9, 0.95, 1.0])
    g = product_cdf(3, FIG_GRID, F)
    assert check_boundary(g)
    for key in itertools.product(range(7), repeat=3):
        vals = {g.value(list(p)) for p in itertools.permutations(key)}
        assert len(vals) == 1


def test_margins_frechet_band():
    F = np.array([0, 0.2, 0.5, 0.7, 0.9, 0.95, 1.0])
    g = product_cdf(2, FIG_GRID, F)
    G = extend(g)
    for x in [0.1, 0.4, 1.0, 2.2, 5.0, 7.0]:
        for y in [0.2, 0.7, 1.5, 3.1, 6.5]:
            assert G.F(x) + G.F(y) - 1 - 1e-15 <= G.H(x, y) <= min(G.F(x), G.F(y)) + 1e-15


@st.composite
def small_cdfs(draw):
    """Random 2-dim symmetric CDFs on a 3-point grid from random masses."""
    m = 3
    w = np.array(draw(st.lists(st.floats(0, 1), min_size=(m + 1) ** 2, max_size=(m + 1) ** 2)))
    w = w.reshape(m + 1, m + 1) + 1e-3
    w = w + w.T
    w /= w.sum()
    dense = np.zeros((m + 2, m + 2))
    dense[1:, 1:] = np.cumsum(np.cumsum(w, 0), 1)
    grid = GridSet.from_values([Fraction(1, 2), 1, 2])
    return FiniteCDF.from_function(2, grid, lambda key: dense[key])


@given(small_cdfs())
def test_elementary_boxes_imply_all_boxes(g):
    assert check_n_increasing(g)
    d = g.dense()
    size = d.shape[0]
    for a1, b1 in itertools.combinations(range(size), 2):
        for a2, b2 in itertools.combinations(range(size), 2):
            assert d[b1, b2] - d[a1, b2] - d[b1, a2] + d[a1, a2] >= -1e-12


@given(small_cdfs(), st.floats(0.01, 10), st.floats(0.01, 10))
def test_extension_restricts_and_bands(g, x, y):
    G = extend(g)
    for i, p in enumerate(g.grid.values, 1):
        for j, q in enumerate(g.grid.values, 1):
            assert G(p, q) == g.value([i, j])
    assert G.F(x) + G.F(y) - 1 - 1e-12 <= G.H(x, y) <= min(G.F(x), G.F(y)) + 1e-12


def test_box_masses_fraction_arrays():
    d = np.array([[Fraction(0), Fraction(0)], [Fraction(0), Fraction(1, 3)]], dtype=object)
    assert box_masses(d)[0, 0] == Fraction(1, 3)


def test_json_round_trip(tmp_path):
    F = np.array([0, 1 / 3, 0.5, 0.7, 0.9, 0.95, 1.0])
    g = product_cdf(2, FIG_GRID, F)
    g.save(tmp_path / "g.json", a=7)
    doc = json.loads((tmp_path / "g.json").read_text())
    assert doc["a"] == 7.0 and any("inf" in o["key"] for o in doc["orbits"])
    h = FiniteCDF.load(tmp_path / "g.json")
    assert np.array_equal(h.values, g.values)
    assert h.grid == g.grid
    gs = uniform_grid(4)
    assert GridSet.from_json(json.loads(json.dumps(gs.to_json()))) == gs
