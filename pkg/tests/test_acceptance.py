"""Acceptance criteria 1-8; a PASS/FAIL line per criterion is printed at the end of the run.

Run alone with ``python3 tests/test_acceptance.py`` or ``pytest tests/test_acceptance.py``.
"""

import numpy as np
import pytest

from conftest import cached_cut, cached_lower
from families import random_family, scan_cell
from misbounds.grid import check_boundary, check_n_increasing, uniform_grid
from misbounds.lower_bound import lower_bound
from misbounds.mechanism import DiscreteThresholdDistribution, expected_ratio, phi, worst_case_instance
from misbounds.two_task import admissible_cells, certify_two_task, inner_max, refine_grid
from misbounds.upper_bound import certify_exact, upper_bound

KNOWN_UPPER = 1.5059964
KNOWN_LOWER = 1.5059953


def criterion(number, title):
    return pytest.mark.criterion(number, title)


@criterion(1, "cutting-plane upper bounds for k = 5, 10, 16")
@pytest.mark.parametrize("k, target", [(5, 1.5174), (10, 1.5096), (16, 1.5066)])
def test_cutting_plane_small_k(k, target):
    res = cached_cut(k)
    print(f"k={k}: upper {res.t_upper:.10f} (target {target} + 1e-4), {res.iterations} iterations")
    assert res.status == "converged"
    assert res.t_upper <= target + 1e-4
    # a valid upper bound cannot fall below a certified lower bound
    assert res.t_upper >= KNOWN_LOWER - 1e-6


@criterion(2, "k = 100 upper bound with exact certificate")
def test_cutting_plane_k100():
    res = cached_cut(100)
    ex = certify_two_task(res.F)
    print(f"k=100: float {res.t_upper:.10f}, exact {float(ex.bound):.12f}, {res.iterations} iterations")
    assert res.status == "converged"
    assert res.t_upper <= KNOWN_UPPER + 1e-6
    assert abs(float(ex.bound) - res.t_upper) <= 1e-9


@criterion(3, "refined grid from the k = 100 run closes the bracket")
def test_refined_closure():
    res = cached_cut(100)
    grid = refine_grid(res)
    low = lower_bound(2, grid)
    gap = res.t_upper - low.bound
    print(f"refined k={grid.k}: lower {low.bound:.10f}, upper {res.t_upper:.10f}, gap {gap:.2e}")
    assert low.bound >= KNOWN_LOWER - 1e-6
    assert gap <= 1.2e-6
    assert abs(low.bound - 1.505996) <= 1e-6 and abs(res.t_upper - 1.505996) <= 1e-6


@criterion(4, "grid bounds for n = 2 at k = 10, 25, 50")
def test_grid_bounds_n2():
    lows, ups = [], []
    for k in (10, 25, 50):
        res = cached_lower(2, k)
        up = upper_bound(res.g)
        lows.append(res.bound)
        ups.append(up.bound_float)
        print(f"k={k}: lower {res.bound:.10f}, upper {up.bound_float:.10f}")
        assert res.bound <= up.bound_float + 1e-9
        assert float(certify_exact(res.g).bound_rational) >= res.bound - 1e-9
    assert lows[0] <= lows[1] + 1e-9 <= lows[2] + 2e-9
    assert max(lows) <= KNOWN_UPPER


@criterion(5, "lower bounds nondecreasing in n on uniform_grid(10)")
def test_task_monotonicity():
    b = [cached_lower(n, 10).bound for n in (2, 3, 4)]
    print("n=2,3,4: " + ", ".join(f"{v:.10f}" for v in b))
    assert b[0] <= b[1] + 1e-8 and b[1] <= b[2] + 1e-8


def random_symmetric(rng, n, support):
    atoms = rng.choice(support, size=(int(rng.integers(1, 7)), n))
    weights = rng.dirichlet(np.ones(len(atoms)))
    return DiscreteThresholdDistribution(atoms, weights).symmetrized()


def random_point(rng, support):
    while True:
        # hit atom values half the time so ties between ratios and thresholds occur
        x, y = (rng.choice(support) if rng.random() < 0.5 else np.exp(rng.uniform(-2, 2)) for _ in range(2))
        if max(y, 1 / x) >= 1:
            return float(x), float(y)


@criterion(6, "expected ratio on worst-case instances equals phi")
def test_oracle_equivalence():
    rng = np.random.default_rng(2024)
    support = np.array([0.25, 0.5, 0.8, 1.0, 1.25, 2.0, 4.0])
    worst = 0.0
    for _ in range(100):
        P = random_symmetric(rng, 2, support)
        x, y = random_point(rng, support)
        diff = abs(expected_ratio(P, worst_case_instance(x, y, 2)) - phi(P.margins(), x, y))
        worst = max(worst, diff)
    print(f"n=2: max |expected_ratio - phi| = {worst:.1e} over 100 distributions")
    assert worst <= 1e-12
    for _ in range(20):
        P = random_symmetric(rng, 3, support)
        x, y = random_point(rng, support)
        base = phi(P.margins(), x, y)
        prev = np.inf
        for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-6):
            delta = abs(expected_ratio(P, worst_case_instance(x, y, 3, eps)) - base)
            # padding moves every makespan and the optimum by at most (n - 2) eps
            assert delta <= (3 - 2) * eps * max(1.0, base) + 1e-12
            assert delta <= prev + 1e-12
            prev = delta


@criterion(7, "inner_max dominates a 200 x 200 scan on 500 random k = 8 families")
def test_inner_max_soundness():
    rng = np.random.default_rng(7)
    cells = admissible_cells(8)
    worst = -np.inf
    for _ in range(500):
        F = random_family(8, rng)
        i, j = (int(v) for v in cells[rng.integers(len(cells))])
        value, _ = inner_max(F, i, j)
        scan = scan_cell(F, i, j, points=200)
        worst = max(worst, scan - value)
        assert value >= scan - 1e-9, (i, j, value, scan)
    print(f"max(scan - inner_max) = {worst:.2e}")


@criterion(8, "every LP-optimal g and every family member is a valid CDF")
@pytest.mark.parametrize("n, k", [(2, 10), (2, 25), (3, 10), (4, 5)])
def test_grid_cdf_validity(n, k):
    g = cached_lower(n, k).g
    assert check_n_increasing(g, 1e-10)
    assert check_boundary(g)
    D = g.dense()
    for axes in [(1, 0) + tuple(range(2, n)), tuple(range(1, n)) + (0,)]:
        assert np.array_equal(D, D.transpose(axes))
    F, H = g.margin_arrays()
    assert np.all(H >= np.maximum(0.0, F[:, None] + F[None, :] - 1) - 1e-9)
    assert np.all(H <= np.minimum(F[:, None], F[None, :]) + 1e-9)


@criterion(8, "every LP-optimal g and every family member is a valid CDF")
def test_family_validity():
    for k in (5, 10, 16, 100):
        F = cached_cut(k).F
        assert F.is_valid(), F.violations()
        rng = np.random.default_rng(k)
        x = np.exp(rng.uniform(-4, 4, 2000))
        x = x[np.min(np.abs(np.log(x)[:, None] - np.log(F.grid.values)[None, :]), axis=1) > 1e-9]
        assert np.max(np.abs(F(x) + F(1 / x) - 1)) <= 1e-12
        fx = F(np.sort(x))
        assert np.all(np.diff(fx) >= -1e-12) and fx.min() >= -1e-12 and fx.max() <= 1 + 1e-12


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s", "-p", "no:cacheprovider"]))
