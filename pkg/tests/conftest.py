import numpy as np
import pytest

from dualmaxwell import cavity as cv
from dualmaxwell.fields import GridSpec, Medium

ANISO = np.diag([1.0, 1.3, 1.7])


def aniso_medium(n, omega_sq=0.0):
    eps = np.broadcast_to(ANISO, (n, n, n, 3, 3)).copy()
    return Medium(eps_field=eps, omega_sq=omega_sq)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cavity4():
    """Neumann cube, 4 cells per axis, anisotropic eps, no frequency."""
    return cv.build_cavity(GridSpec(4, 1.0, "cavity"), "neumann", aniso_medium(4))


@pytest.fixture(scope="session")
def cavity4_case1(cavity4):
    ev = cavity4.eigvals
    return cv.build_cavity(GridSpec(4, 1.0, "cavity"), "neumann", aniso_medium(4, 0.5 * (ev[0] + ev[1])))


ACCEPTANCE = []


@pytest.fixture
def record():
    """Record one acceptance line ``(criterion, passed, message)``."""
    def _record(k, passed, message):
        ACCEPTANCE.append((k, bool(passed), message))
        print(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {message}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, msg in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")
