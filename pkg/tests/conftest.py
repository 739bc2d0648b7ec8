import functools

import numpy as np
import pytest

from sbdnet import ClassProfile, PathLoss, SimConfig, TorusDomain, critical_rate, simulate

DOM = TorusDomain(10.0)
PL = PathLoss.power_law(4)
PROFILE = ClassProfile(2, [0.4, 0.4, 0.2], [1.0, 1.0, 2.0])


@pytest.fixture(scope="session")
def dom():
    return DOM


@pytest.fixture(scope="session")
def pl():
    return PL


@pytest.fixture(scope="session")
def profile():
    return PROFILE


@pytest.fixture(scope="session")
def lam_c():
    return critical_rate(PROFILE, DOM, PL)


@functools.lru_cache(maxsize=None)
def two_band_run(rel: float, seed: int, events: int = 100_000):
    """Cached run of the two-band scenario at ``rel * lambda_c``."""
    lam = rel * critical_rate(PROFILE, DOM, PL)
    return simulate(SimConfig(DOM, PL, PROFILE, lam, seed=seed, max_events=events))


def random_symmetric_profile(rng, K, p_zero=0.0):
    p = rng.random(K)
    p[rng.random(K) < p_zero] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    from sbdnet import SymmetricProfile
    return SymmetricProfile(K, p / p.sum(), rng.uniform(0.5, 3.0, K)).expand()


# --- acceptance report ----------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line each in the terminal summary.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    number, title = mark.args
    if call.excinfo is None:
        outcome = "PASS (unexpected, strict xfail)" if item.get_closest_marker("xfail") else "PASS"
    elif call.excinfo.errisinstance(pytest.xfail.Exception) or item.get_closest_marker("xfail"):
        outcome = "FAIL (expected, see xfail reason)"
    else:
        outcome = "FAIL"
    _CRITERIA.setdefault(number, []).append((item.name, title, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        for name, title, outcome in _CRITERIA[number]:
            terminalreporter.write_line(f"criterion {number} [{title}] {name}: {outcome}")
