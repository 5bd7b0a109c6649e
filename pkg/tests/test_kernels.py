import numpy as np
import pytest

from reebflow import kernels
from reebflow.hamiltonian import make_hamiltonian

needs_compiled = pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")


def test_fallback_always_available():
    assert "python" in kernels.available()
    with pytest.raises(ValueError):
        kernels.get("fortran")


def test_env_override(monkeypatch):
    monkeypatch.setenv("REEBFLOW_BACKEND", "python")
    assert kernels.default_name() == "python"


@needs_compiled
@pytest.mark.parametrize("name", ["radial", "anisotropic", "twowell"])
def test_poly2d_backends_agree(name, rng):
    H = make_hamiltonian(name)
    x, y = rng.uniform(-3, 3, size=(2, 300))
    a = kernels.get("compiled").poly2d(np.ascontiguousarray(H.coeffs), x, y)
    b = kernels.get("python").poly2d(np.ascontiguousarray(H.coeffs), x, y)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    assert np.allclose(a, H.h(np.stack([x, y], -1)), rtol=1e-12, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("name", ["radial", "anisotropic", "twowell"])
def test_advect_rk4_bit_identical(name, rng):
    H = make_hamiltonian(name)
    x = rng.normal(size=(400, 2))
    nsub = rng.integers(1, 40, 400).astype(np.int64)
    h = rng.uniform(0, 0.002, 400)  # keeps h * |D^2 H| below 0.03
    out = []
    for be in ("compiled", "python"):
        y = x.copy()
        kernels.get(be).advect_rk4(np.ascontiguousarray(H._dx), np.ascontiguousarray(H._dy), y, nsub, h)
        out.append(y)
    assert np.array_equal(out[0], out[1])
    assert np.abs(H.h(out[0]) - H.h(x)).max() < 1e-10
