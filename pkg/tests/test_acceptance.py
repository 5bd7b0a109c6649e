"""
Acceptance suite: one test per numbered criterion.

Each test records ``(passed, detail)`` through the ``criterion`` fixture so the
terminal summary prints one line per criterion, then asserts.  Runtime limits
are checked inside the tests that state one.
"""
import time

import numpy as np
import pytest

from conftest import World
from reebflow.coeffs import (GraphFunction, area_derivative_check, divergence_check, hbar_inner, hbar_norm,
                             hgamma_inner, hgamma_norm, lift)
from reebflow.config import ExperimentConfig
from reebflow.fastflow import FastFlowConfig, RotationBudget, martingale_check, min_period
from reebflow.graphgen import apply_semigroup, sample_paths
from reebflow.hamiltonian import CriticalKind
from reebflow.harness import (run_noise_check, run_probe_averaging, run_scalar_reduction,
                              run_spde_convergence, run_weak_convergence)
from reebflow.reeb import VertexKind, project

K_SE = 3.0
WORLDS = [("radial", 6.0), ("anisotropic", 6.0), ("twowell", 8.0)]


def _finish(criterion, n, ok, detail, elapsed, limit):
    in_time = elapsed < limit
    detail = f"{detail}; {elapsed:.1f}s (limit {limit:.0f}s)"
    criterion(n, ok and in_time, detail)
    assert ok, detail
    assert in_time, detail


# -- 1-4: coefficient tables --------------------------------------------------

def test_c01_vertex_period_limit(criterion):
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for name, zmax in (("anisotropic", 6.0), ("twowell", 8.0)):
        w = World(name, zmax)
        for cp in w.cps:
            if cp.kind is CriticalKind.SADDLE:
                continue
            # independent limit from the critical-point Hessian
            limit = 2 * np.pi / np.sqrt(cp.hess_det)
            v = min(w.graph.vertices, key=lambda v: abs(v.z - cp.value) + 1e9 * (v.kind is not VertexKind.EXTREMUM))
            for t in w.tables.edges:
                e = w.graph.edges[t.k]
                if v.id not in (e.v_lo, e.v_hi):
                    continue
                near = np.argsort(np.abs(t.z - v.z))[:3]
                worst = max(worst, float(np.max(np.abs(t.T[near] / limit - 1))))
                count += 1
    ok = count >= 3 and worst <= 0.01
    _finish(criterion, 1, ok, f"{count} extremum endpoints, max rel err {worst:.2e}", time.perf_counter() - t0, 30)


def test_c02_area_identity(criterion):
    t0 = time.perf_counter()
    errs, n = [], 0
    for name, zmax in WORLDS:
        rows = area_derivative_check(World(name, zmax).tables)
        n += len(rows)
        errs.append(max(r["rel_err"] for r in rows))
    ok = max(errs) <= 0.01
    _finish(criterion, 2, ok, f"{n} core samples, max rel err {max(errs):.2e}", time.perf_counter() - t0, 60)


def test_c03_divergence_identity(criterion):
    t0 = time.perf_counter()
    errs, n = [], 0
    for name, zmax in WORLDS:
        rows = divergence_check(World(name, zmax).tables)
        n += len(rows)
        errs.append(max(r["rel_err"] for r in rows))
    ok = max(errs) <= 0.01
    _finish(criterion, 3, ok, f"{n} core samples, max rel err {max(errs):.2e}", time.perf_counter() - t0, 60)


def test_c04_saddle_asymptotics(criterion, twowell):
    fits = [f for t in twowell.tables.edges for f in t.fits.values()]
    ok = len(fits) > 0 and all(f.residual < 0.05 and f.c1 > 0 for f in fits)
    detail = ", ".join(f"c1={f.c1:.3f} res={f.residual:.3f}" for f in fits)
    criterion(4, ok, f"{len(fits)} saddle fits: {detail}")
    assert ok, detail


# -- 5: averaging operator ----------------------------------------------------

def test_c05_averaging_identities(criterion, twowell):
    t0 = time.perf_counter()
    tb, w, q, g = twowell.tables, twowell.weight, twowell.quad, twowell.graph
    rng = np.random.default_rng(2024)

    def rand_u():
        A = rng.normal(size=4)
        W = rng.normal(size=(4, 2))
        P = rng.uniform(0, 2 * np.pi, 4)
        return lambda x: sum(A[j] * np.cos(x[..., 0] * W[j, 0] + x[..., 1] * W[j, 1] + P[j]) for j in range(4))

    def rand_f():
        c = rng.normal(size=3)
        b = rng.normal(size=len(g.edges))
        base = lambda z: c[0] + c[1] * np.cos(z) + c[2] * np.sin(0.5 * z)

        def fn(z, k):
            e = g.edges[k]
            return base(z) + b[k] * (z - e.z_lo) * (e.z_hi - z) / (e.z_hi - e.z_lo) ** 2
        # vertex values follow from continuity of the base part
        return GraphFunction.from_callable(tb, fn, lambda v: base(v.z))

    pts = tb._flat_nodes()[0]
    contraction, isometry, duality, mult = [], [], [], []
    n = 100
    for _ in range(n):
        u, f = rand_u(), rand_f()
        ua = tb.average_table(u)
        nu, nf = hgamma_norm(q, w, u), hbar_norm(tb, w, f)
        contraction.append(hbar_norm(tb, w, ua) / nu - 1)
        isometry.append(abs(hgamma_norm(q, w, f) / nf - 1))
        duality.append(abs(hbar_inner(tb, w, f, ua) - hgamma_inner(q, w, f, u)) / (nf * nu))
        lhs = tb.average_table(lambda x: lift(f, x) * u(x))
        upts = np.abs(u(pts)).max()
        fmax = max(np.abs(v).max() for v in f.values)
        mult.append(lhs.max_abs_diff(f * ua) / (fmax * upts))
    worst = {"contraction": max(contraction), "isometry": max(isometry), "duality": max(duality),
             "multiplicativity": max(mult)}
    ok = all(v <= 0.01 for v in worst.values())
    detail = f"{n} random pairs; " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    _finish(criterion, 5, ok, detail, time.perf_counter() - t0, 120)


# -- 6-7: graph generator and chain -------------------------------------------

def test_c06_generator_correctness(criterion, twowell):
    t0 = time.perf_counter()
    G = twowell.G(0.05)
    rowsum = float(np.abs(np.asarray(G.Q.sum(1)).ravel()).max())
    mq = float(np.abs(G.m @ G.Q).max())

    # gluing: at the saddle cell the discrete flux sum equals 2 m_s (Qu)_s and
    # the normalised imbalance shrinks with h
    ratios, glue = [], 0.0
    for h in (0.04, 0.02, 0.01):
        Gh = twowell.G(h)
        u = apply_semigroup(Gh, Gh.sample(lambda z, k: np.cos(z)), 0.2, 0.01, max_principle=False)
        Qu = Gh.Q @ u
        for v, r in Gh.gluing_residual(u).items():
            i = Gh.vertex_node[v]
            glue = max(glue, abs(r["flux_sum"] - 2 * Gh.m[i] * Qu[i]) / r["scale"])
            ratios.append(abs(r["flux_sum"]) / r["scale"])
    glue_ok = glue <= 1e-10 and ratios[2] < ratios[1] < ratios[0]

    # occupancy: stationary starts, fractions of [0, 1] aggregated per edge plus
    # one bin for vertex cells
    Go = twowell.G(0.1)
    pi = Go.stationary()
    n_chains = 2000
    starts = np.random.Generator(np.random.Philox(key=[3, 99])).choice(Go.n, size=n_chains, p=pi)
    r = sample_paths(Go, starts, [1.0], n_chains, 3, track_occupancy=True)
    bins = np.where(Go.edge >= 0, Go.edge, Go.edge.max() + 1)
    nb = int(bins.max()) + 1
    F = np.stack([r.occupancy[:, bins == b].sum(1) for b in range(nb)], 1)
    ex = np.array([pi[bins == b].sum() for b in range(nb)])
    zsc = (F.mean(0) - ex) / (F.std(0, ddof=1) / np.sqrt(n_chains))
    jumps = int(r.jumps.sum())
    occ_ok = jumps >= 1_000_000 and np.abs(zsc).max() <= K_SE

    ok = rowsum == 0.0 and mq <= 1e-10 and glue_ok and occ_ok
    detail = (f"row sums {rowsum:.1e}, |m^T Q| {mq:.1e}, gluing {glue:.1e} (imbalance "
              f"{ratios[0]:.1e}->{ratios[2]:.1e}), occupancy {jumps} jumps max |z| {np.abs(zsc).max():.2f}")
    _finish(criterion, 6, ok, detail, time.perf_counter() - t0, 120)


def test_c07_semigroup_agreement(criterion, twowell):
    t0 = time.perf_counter()
    G = twowell.G(0.1)
    start = project(twowell.atlas, twowell.H, [-1.0, 0.3])
    i0 = G.node_of(start)
    ts = [0.1, 0.5, 1.0]
    fs = [lambda z, k: np.cos(z),
          lambda z, k: np.exp(-0.5 * z) + 0.3 * k,
          lambda z, k: np.sin(2 * z) * (k == 0),
          lambda z, k: z / (1 + z),
          lambda z, k: (k == 1) * np.exp(-z)]
    F = np.stack([G.sample(f) for f in fs], 1)
    exact = apply_semigroup(G, F, ts[-1], 1e-3, times=ts, max_principle=False)
    r = sample_paths(G, start, ts, 100_000, 17)
    worst = 0.0
    for c in range(len(fs)):
        v = F[:, c][r.states]
        m = v.mean(0)
        se = v.std(0, ddof=1) / np.sqrt(v.shape[0])
        for j in range(len(ts)):
            worst = max(worst, abs(m[j] - exact[j][i0, c]) / se[j])
    ok = worst <= K_SE
    _finish(criterion, 7, ok, f"5 f x 3 t, max |z| {worst:.2f}", time.perf_counter() - t0, 120)


# -- 8: martingale ------------------------------------------------------------

def test_c08_martingale(criterion, twowell):
    t0 = time.perf_counter()
    cfg = FastFlowConfig(eps=0.05, n_paths=100_000, seed=1, z_max=8.0)
    r = martingale_check(twowell.H, [-1.0, 0.3], 1.0, cfg, t_min=min_period(twowell.tables),
                         budget=RotationBudget(twowell.H))
    ok = abs(r["mean"]) <= K_SE * r["se"]
    detail = f"mean {r['mean']:.2e} se {r['se']:.2e} (|z| {r['z_score']:.2f}), stopped {r['stopped']}"
    _finish(criterion, 8, ok, detail, time.perf_counter() - t0, 120)


# -- 9-13: experiment runners at default configuration ------------------------

@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig()


def _groups(rep, key):
    return "; ".join(f"x{g['start']} {g['u']} " + "/".join(f"{d:.4f}" for d in g[key])
                     + ("" if g["passed"] else " FAIL") for g in rep.summary["groups"])


def test_c09_probe_averaging(criterion, cfg):
    t0 = time.perf_counter()
    rep = run_probe_averaging(cfg)
    _finish(criterion, 9, rep.passed, "residuals " + _groups(rep, "residual"), time.perf_counter() - t0, 600)


def test_c10_weak_convergence(criterion, cfg):
    t0 = time.perf_counter()
    rep = run_weak_convergence(cfg)
    _finish(criterion, 10, rep.passed, "Delta " + _groups(rep, "delta"), time.perf_counter() - t0, 1800)


def test_c11_noise_covariance(criterion, cfg):
    t0 = time.perf_counter()
    rep = run_noise_check(cfg, n_pairs=10, n_samples=10_000)
    zmax = max(abs(r["z_score"]) for r in rep.rows)
    _finish(criterion, 11, rep.passed, f"10 pairs, max |z| {zmax:.2f}", time.perf_counter() - t0, 60)


def test_c12_scalar_reduction(criterion, cfg):
    t0 = time.perf_counter()
    rep = run_scalar_reduction(cfg)
    zs = ", ".join(f"{r['solver']} {r['statistic']} z={r['diff'] / r['se']:.2f}" for r in rep.rows)
    _finish(criterion, 12, rep.passed, zs, time.perf_counter() - t0, 300)


def test_c13_spde_smoke(criterion, cfg):
    t0 = time.perf_counter()
    rep = run_spde_convergence(cfg)
    s = rep.summary
    ok = rep.passed and s["label"] == "SMOKE"
    detail = "SMOKE mean sup " + "/".join(f"{m:.3f}" for m in s["mean_sup_sq"]) + \
             " ratios " + "/".join(f"{r:.2f}" for r in s["ratios"])
    _finish(criterion, 13, ok, detail, time.perf_counter() - t0, 3600)
