import numpy as np
import pytest

from ergodic_lab.domain import make_domain
from ergodic_lab.model import make_model


@pytest.fixture(scope="session")
def ou():
    return make_model("reflected_ou")


@pytest.fixture(scope="session")
def unit_box():
    return make_domain("box", lo=[-1.0], hi=[1.0])


@pytest.fixture
def rs():
    return np.random.default_rng(12345)


# (criterion, ok, detail) tuples appended by the acceptance suite
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted({c for c, _, _ in ACCEPTANCE}):
        parts = [(ok, detail) for c, ok, detail in ACCEPTANCE if c == n]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  " + "; ".join(d for _, d in parts))
