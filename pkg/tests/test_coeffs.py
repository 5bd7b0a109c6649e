import numpy as np
import pytest

from reebflow.coeffs import (GraphFunction, area_derivative_check, average, divergence_check, hbar_inner,
                             hbar_norm, hgamma_inner, hgamma_norm, lift)
from reebflow.contour import compute_T, extract_level_curve
from reebflow.errors import ParameterError
from reebflow.reeb import VertexKind


def test_radial_closed_forms(radial):
    t = radial.tables[0]
    assert np.allclose(t.T, 2 * np.pi, rtol=1e-3)
    assert np.allclose(t.alpha, 4 * np.pi * t.z, rtol=1e-3)
    assert np.allclose(t.S, 2 * np.pi * t.z, rtol=1e-3)


def test_anisotropic_period(anisotropic):
    # H = (x^2 + 4 y^2)/2: linear flow with frequency sqrt(det) = 2
    assert np.allclose(anisotropic.tables[0].T, np.pi, rtol=1e-3)


def test_twowell_vertex_period_limits(twowell):
    g = twowell.graph
    for t in twowell.tables.edges:
        for v, (side, Tlim) in t.T_end.items():
            cp = g.vertices[v]
            assert cp.kind is VertexKind.EXTREMUM
            near = np.argsort(np.abs(t.z - cp.z))[:3]
            assert np.allclose(t.T[near], Tlim, rtol=0.01)


def test_saddle_log_fit(twowell):
    fits = [f for t in twowell.tables.edges for f in t.fits.values()]
    assert len(fits) == 3
    for f in fits:
        assert f.c1 > 0 and f.residual < 0.05


def test_periods_grow_toward_saddle(twowell):
    zs = twowell.graph.saddles()[0].z
    for t in twowell.tables.edges:
        if zs in (t.z_lo, t.z_hi) and t.fits:
            near = np.argmin(np.abs(t.z - zs))
            assert t.T[near] > 1.5 * np.median(t.T)


@pytest.mark.parametrize("world", ["radial", "anisotropic", "twowell"])
def test_area_and_divergence_identities(world, request):
    w = request.getfixturevalue(world)
    assert max(r["rel_err"] for r in area_derivative_check(w.tables)) <= 0.01
    assert max(r["rel_err"] for r in divergence_check(w.tables)) <= 0.01


def test_table_T_matches_direct_contour(twowell):
    t = twowell.tables.edges[0]
    z = float(t.z[len(t.z) // 2])
    c = extract_level_curve(twowell.H, twowell.atlas, z, t.k)
    assert compute_T(twowell.H, c) == pytest.approx(float(t.T_at(z)), rel=1e-3)


def test_average_of_function_of_H(twowell):
    t = twowell.tables.edges[1]
    z = float(t.z[5])
    assert average(twowell.tables, lambda x: np.cos(twowell.H.h(x)), z, t.k) == pytest.approx(np.cos(z), abs=1e-9)
    assert average(twowell.tables, lambda x: np.ones(x.shape[:-1]), z, t.k) == pytest.approx(1.0)


def test_average_of_linear_function_in_radial(radial):
    # circles centred at the origin average x1 to zero
    t = radial.tables[0]
    for z in t.z[::10]:
        assert abs(average(radial.tables, lambda x: x[..., 0], float(z), 0)) < 1e-8


def test_weight_profile(twowell):
    w = twowell.weight
    z = np.linspace(0, 30, 400)
    h = w.h(z)
    assert np.all(h > 0) and np.all(np.diff(h) <= 1e-12)
    assert np.allclose(w.h(np.array([0.0, 0.5 * w.z0])), 1.0)
    # C1 across both joins
    for zj in (w.z0, 2 * w.z0):
        d = 1e-6
        assert w.h(zj + d) == pytest.approx(w.h(zj - d), abs=1e-5)
        assert w.h(zj + d, 1) == pytest.approx(w.h(zj - d, 1), abs=1e-4)


def test_hbar_and_hgamma_agree_on_lifts(twowell):
    tb, w, q = twowell.tables, twowell.weight, twowell.quad
    f = GraphFunction.from_callable(tb, lambda z, k: np.cos(z) + 0.1 * k, lambda v: np.cos(v.z))
    assert hgamma_norm(q, w, f) == pytest.approx(hbar_norm(tb, w, f), rel=0.01)


def test_duality_with_averaging(twowell):
    tb, w, q = twowell.tables, twowell.weight, twowell.quad
    u = lambda x: np.sin(x[..., 0] + 0.3 * x[..., 1])
    f = GraphFunction.from_callable(tb, lambda z, k: 1 + 0.2 * z, lambda v: 1 + 0.2 * v.z)
    lhs = hbar_inner(tb, w, tb.average_table(u), f)
    rhs = hgamma_inner(q, w, u, f)
    assert lhs == pytest.approx(rhs, rel=0.01, abs=1e-3 * hbar_norm(tb, w, f))


def test_graph_function_algebra(twowell):
    tb = twowell.tables
    a = GraphFunction.from_callable(tb, lambda z, k: z, lambda v: v.z)
    b = GraphFunction.constant(tb, 2.0)
    assert (a * b).max_abs_diff(a + a) < 1e-14
    assert (a - a).max_abs_diff(GraphFunction.constant(tb, 0.0)) < 1e-14


def test_weight_rejects_bad_lambda(twowell):
    from reebflow.coeffs import build_weight
    with pytest.raises(ParameterError):
        build_weight(twowell.graph, lam=-1.0)
