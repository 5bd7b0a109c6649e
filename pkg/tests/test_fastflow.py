import numpy as np
import pytest

from reebflow import kernels
from reebflow.errors import ConfigError, PreconditionError
from reebflow.fastflow import (FastFlowConfig, RotationBudget, averaging_probe, estimate_semigroup,
                               martingale_check, simulate, step_paths)
from reebflow.hamiltonian import make_hamiltonian


def _flow_only(H, x, t, eps, backend=None):
    """Deterministic flow over time t (noise switched off by zero normals)."""
    cfg = FastFlowConfig(eps=eps, n_paths=len(x), backend=backend)
    budget = RotationBudget(H)
    n = 50
    for _ in range(n):
        step_paths(H, x, np.ones(len(x), bool), cfg, t / n, np.zeros((len(x), 4)), budget)
    return x


@pytest.mark.parametrize("backend", kernels.available())
def test_energy_conserved_per_period(backend, twowell):
    H = twowell.H
    x0 = np.array([[-1.0, 0.3], [1.0, 0.4], [0.0, 1.2], [-0.2, 0.45]])
    T = np.array([float(twowell.tables.edges[0].T_at(H.h(x0[0]))),
                  float(twowell.tables.edges[1].T_at(H.h(x0[1])))])
    # one period of the fast flow takes eps * T units of time
    x = _flow_only(H, x0.copy(), 1.0 * T.max(), 1.0, backend)
    assert np.abs(H.h(x) - H.h(x0)).max() <= 1e-8 * (1 + np.abs(H.h(x0)).max())


def test_radial_period_is_two_pi_eps():
    H = make_hamiltonian("radial")
    eps = 0.05
    x0 = np.array([[1.0, 0.0], [0.3, -0.7]])
    # RK4 phase error is O(theta^4) per unit angle, far above the energy error
    x = _flow_only(H, x0.copy(), 2 * np.pi * eps, eps)
    assert np.allclose(x, x0, atol=1e-6)
    x = _flow_only(H, x0.copy(), np.pi * eps, eps)
    assert np.allclose(x, -x0, atol=1e-6)


def test_pure_diffusion_limit():
    # no advection: planar Brownian motion, E|X - x|^2 = 2t
    H = make_hamiltonian("radial")
    cfg = FastFlowConfig(eps=1.0, n_paths=40000, seed=3, advect=False, dt_noise=0.05)
    r = simulate(H, [0.5, 0.0], [0.5, 1.0], cfg)
    d2 = np.sum((r.positions - np.array([0.5, 0.0])) ** 2, -1)
    for j, t in enumerate([0.5, 1.0]):
        se = d2[j].std(ddof=1) / np.sqrt(d2.shape[1])
        assert abs(d2[j].mean() - 2 * t) <= 4 * se


def test_advection_leaves_radial_law_unchanged():
    # the rotation commutes with the radial diffusion: E|X|^2 = |x|^2 + 2t at any eps
    H = make_hamiltonian("radial")
    r = simulate(H, [1.0, 0.0], [0.5], FastFlowConfig(eps=0.05, n_paths=20000, seed=9))
    v = np.sum(r.positions[0] ** 2, -1)
    assert abs(v.mean() - 2.0) <= 4 * v.std(ddof=1) / np.sqrt(len(v))


def test_deterministic_given_seed(twowell):
    cfg = FastFlowConfig(eps=0.1, n_paths=500, seed=42)
    a = simulate(twowell.H, [-1.0, 0.3], [0.2, 0.4], cfg)
    b = simulate(twowell.H, [-1.0, 0.3], [0.2, 0.4], cfg)
    assert np.array_equal(a.positions, b.positions)
    c = simulate(twowell.H, [-1.0, 0.3], [0.2, 0.4], FastFlowConfig(eps=0.1, n_paths=500, seed=43))
    assert not np.array_equal(a.positions, c.positions)


@pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")
def test_backends_give_identical_paths(twowell):
    out = [simulate(twowell.H, [-1.0, 0.3], [0.3], FastFlowConfig(eps=0.1, n_paths=300, seed=1, backend=b))
           for b in ("compiled", "python")]
    assert np.array_equal(out[0].positions, out[1].positions)


def test_paths_freeze_at_cap():
    H = make_hamiltonian("radial")
    cfg = FastFlowConfig(eps=0.2, n_paths=2000, seed=2, z_max=1.0)
    with pytest.warns(Warning):
        r = simulate(H, [1.2, 0.0], [2.0], cfg)
    assert r.stopped.any()
    z = H.h(r.positions[0][r.stopped])
    assert np.all(z >= 1.0 - 1e-12)


def test_dt_guard():
    cfg = FastFlowConfig(eps=0.01, dt_noise=0.1)
    with pytest.raises(ConfigError):
        cfg.resolved_dt(2 * np.pi)
    assert FastFlowConfig(eps=0.01).resolved_dt(2 * np.pi) == pytest.approx(0.005)
    with pytest.raises(ConfigError):
        FastFlowConfig(eps=0.0)


def test_martingale_small(twowell):
    r = martingale_check(twowell.H, [-1.0, 0.3], 0.5, FastFlowConfig(eps=0.1, n_paths=4000, seed=5, z_max=8.0))
    assert abs(r["mean"]) <= 4 * r["se"]


def test_semigroup_of_H_function(radial):
    # E H(X_t) = H(x) + t for radial H = |x|^2 / 2
    r = estimate_semigroup(radial.H, radial.H.h, [1.0, 0.0], [0.5], FastFlowConfig(eps=0.05, n_paths=20000, seed=4))
    assert abs(r["mean"][0] - 1.0) <= 4 * r["se"][0]


def test_probe_preconditions(twowell):
    u = lambda x: x[..., 0]
    with pytest.raises(PreconditionError):
        averaging_probe(twowell.H, twowell.atlas, twowell.tables, u, [-1.0, 0.3], 0.1, alpha_exp=0.8)
    sad = twowell.graph.saddles()[0]
    sloc = next(c.location for c in twowell.cps if c.kind.value == "Saddle")
    with pytest.raises(PreconditionError):
        averaging_probe(twowell.H, twowell.atlas, twowell.tables, u, sloc, 0.1)
