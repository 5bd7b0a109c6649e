import numpy as np
import pytest

from reebflow.coeffs import Quadrature2D, build_tables, build_weight
from reebflow.graphgen import discretize
from reebflow.hamiltonian import find_critical_points, make_hamiltonian
from reebflow.reeb import build_reeb


class World:
    def __init__(self, name, z_max, resolution=400, **params):
        self.H = make_hamiltonian(name, **params)
        self.cps = find_critical_points(self.H, 128)
        self.graph, self.atlas = build_reeb(self.H, self.cps, z_max, resolution)
        self.tables = build_tables(self.H, self.graph, self.atlas)
        self.weight = build_weight(self.graph, 1.0)
        self._G = {}
        self._quad = None

    def G(self, h=0.02):
        if h not in self._G:
            self._G[h] = discretize(self.graph, self.tables, h)
        return self._G[h]

    @property
    def quad(self):
        if self._quad is None:
            self._quad = Quadrature2D.build(self.H, self.atlas, 600)
        return self._quad


@pytest.fixture(scope="session")
def twowell():
    return World("twowell", 8.0)


@pytest.fixture(scope="session")
def radial():
    return World("radial", 6.0)


@pytest.fixture(scope="session")
def anisotropic():
    return World("anisotropic", 6.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the end-of-run acceptance table."""
    def record(n, passed, detail):
        ACCEPTANCE[n] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
