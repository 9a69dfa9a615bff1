import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lidarpcc.synthetic import synthetic_scan

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_scan():
    """16 lasers at 1 degree azimuth steps, a few thousand points."""
    return synthetic_scan(n_lasers=16, phi_ar=1.0, elevation_range=(-15.0, 15.0), seed=11)


@pytest.fixture(scope="session")
def tiny_scan():
    return synthetic_scan(n_lasers=4, phi_ar=6.0, elevation_range=(-10.0, 5.0), seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one pass/fail line; the lines are repeated in the terminal summary."""

    def _report(number, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number:>2}: {status}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
