import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reebflow.errors import DomainError, GenericityError, ParameterError
from reebflow.hamiltonian import CriticalKind, find_critical_points, make_hamiltonian, validate_generic

coord = st.floats(-3.0, 3.0, allow_nan=False)


@pytest.mark.parametrize("name", ["radial", "anisotropic", "twowell"])
def test_derivatives_match_finite_differences(name, rng):
    H = make_hamiltonian(name)
    x = rng.uniform(-2, 2, size=(20, 2))
    d = 1e-6
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = d
        fd = (H.h(x + e) - H.h(x - e)) / (2 * d)
        assert np.allclose(H.grad(x)[:, axis], fd, atol=1e-6)
    lap = np.trace(H.hessian(x), axis1=-2, axis2=-1)
    assert np.allclose(H.laplacian(x), lap)


@given(coord, coord)
@settings(max_examples=50, deadline=None)
def test_skew_gradient_is_orthogonal_to_gradient(a, b):
    H = make_hamiltonian("twowell")
    x = np.array([a, b])
    assert abs(np.dot(H.grad(x), H.skew_grad(x))) < 1e-9 * (1 + np.dot(H.grad(x), H.grad(x)))


def test_twowell_critical_points():
    H = make_hamiltonian("twowell")
    cps = find_critical_points(H, 128)
    kinds = sorted(c.kind.value for c in cps)
    assert kinds == ["Min", "Min", "Saddle"]
    assert min(c.value for c in cps) == pytest.approx(0.0, abs=1e-12)
    sad = next(c for c in cps if c.kind is CriticalKind.SADDLE)
    assert sad.hess_det < 0
    # cubic x^3 - x + tilt = 0 near zero
    assert sad.location[0] == pytest.approx(0.1, abs=0.02)
    rep = validate_generic(H, cps)
    for name in ("nondegenerate", "distinct_values", "min_zero"):
        assert rep.clauses[name].status == "pass"
    g = rep.clauses["growth"].values
    assert g["a1"] > 0 and g["a2"] > 0
    # lap H = 3 x^2 + stiffness - 1 vanishes on x = 0 when stiffness = 1
    assert g["a3"] == pytest.approx(0.0, abs=1e-9)
    assert rep.clauses["growth"].status == "fail"


def test_stiffer_twowell_meets_growth_clause():
    H = make_hamiltonian("twowell", stiffness=1.5)
    rep = validate_generic(H, find_critical_points(H, 128))
    assert rep.passed
    assert rep.clauses["growth"].values["a3"] == pytest.approx(0.5, rel=1e-6)


def test_radial_single_minimum():
    H = make_hamiltonian("radial")
    cps = find_critical_points(H, 128)
    assert len(cps) == 1 and cps[0].kind is CriticalKind.MIN
    assert np.allclose(cps[0].location, 0, atol=1e-10)


def test_degenerate_critical_point_rejected():
    H = make_hamiltonian("polynomial", coeffs={(4, 0): 1.0, (0, 2): 1.0}, shift_min=False)
    with pytest.raises(GenericityError):
        find_critical_points(H, 128)


def test_unknown_family():
    with pytest.raises(ParameterError):
        make_hamiltonian("nope")


def test_domain_check():
    H = make_hamiltonian("radial", r_max=2.0)
    assert H.in_domain(np.array([1.0, 1.0]))
    assert not H.in_domain(np.array([3.0, 0.0]))
    with pytest.raises(DomainError):
        H.evaluate(np.array([3.0, 0.0]))
