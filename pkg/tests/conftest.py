import functools

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def cached_lower(n: int, k: int):
    from misbounds.grid import uniform_grid
    from misbounds.lower_bound import lower_bound

    return lower_bound(n, uniform_grid(k))


@functools.lru_cache(maxsize=None)
def cached_cut(k: int):
    from misbounds.two_task import cutting_plane

    return cutting_plane(k)


@pytest.fixture
def lower():
    return cached_lower


@pytest.fixture
def cut():
    return cached_cut


ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    ok = report.passed if report.when == "call" else not report.failed
    if report.when == "call" or report.failed:
        prev = ACCEPTANCE.get(number, (title, True))[1]
        ACCEPTANCE[number] = (title, prev and ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
