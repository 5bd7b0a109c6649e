"""
Convergence experiments and report emission.

Every runner takes an :class:`~reebflow.config.ExperimentConfig`, returns a
:class:`Report` (rows plus a summary with a ``passed`` flag) and carries an
error budget column next to every estimate.  Reports are written as CSV,
JSON and whitespace-separated ``.dat`` files; nothing time-dependent goes
into them, so identical configs give identical files.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .coeffs import (Quadrature2D, average, area_derivative_check, build_tables, build_weight,
                     divergence_check)
from .config import ExperimentConfig
from .errors import ConfigError, PreconditionError
from .fastflow import FastFlowConfig, RotationBudget, averaging_probe, min_period, simulate
from .graphgen import apply_semigroup, discretize
from .hamiltonian import CriticalKind, find_critical_points, make_hamiltonian
from .noise import SpectralMeasure, build_basis, empirical_covariance, graph_covariance
from .reeb import VertexKind, build_reeb, project_many
from .spde2d import Grid2D, SPDE2DConfig, spde2d_solve
from .spdegraph import GraphSPDEConfig, solve_mild

__all__ = [
    "Report",
    "TEST_FUNCTIONS",
    "test_function",
    "build_setup",
    "write_report",
    "run_coefficient_validation",
    "run_weak_convergence",
    "run_hgamma_convergence",
    "run_spde_convergence",
    "run_scalar_reduction",
    "run_noise_check",
    "run_probe_averaging",
]


# -- test functions -----------------------------------------------------------

def _mix(x):
    return np.cos(1.5 * x[..., 0]) + 0.5 * np.sin(2 * x[..., 1]) + 0.3 * x[..., 0]


def _bump(cx, cy, w=0.5):
    return lambda x: np.exp(-((x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2) / w)


TEST_FUNCTIONS = {
    "one": lambda H: (lambda x: np.ones(np.shape(x)[:-1])),
    "x1": lambda H: (lambda x: x[..., 0]),
    "x2": lambda H: (lambda x: x[..., 1]),
    "x1sq": lambda H: (lambda x: x[..., 0] ** 2),
    "H": lambda H: H.h,
    "expH": lambda H: (lambda x: np.exp(-H.h(x))),
    "cosH": lambda H: (lambda x: np.cos(3 * H.h(x))),
    "mix": lambda H: _mix,
    "wave": lambda H: (lambda x: np.sin(x[..., 0] + 0.5 * x[..., 1])),
    "bump_left": lambda H: _bump(-1.0, 0.0),
    "bump_right": lambda H: _bump(1.0, 0.0),
}


def test_function(name: str, H):
    try:
        return TEST_FUNCTIONS[name](H)
    except KeyError:
        raise ConfigError(f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}") from None


test_function.__test__ = False  # keep pytest from collecting it


# -- shared setup -------------------------------------------------------------

@dataclass
class Setup:
    H: object
    cps: list
    graph: object
    atlas: object
    tables: object
    G: object
    weight: object


@lru_cache(maxsize=8)
def _setup(name: str, params: str, z_max: float, resolution: int, h_target: float, lam: float) -> Setup:
    H = make_hamiltonian(name, **json.loads(params))
    cps = find_critical_points(H, 128)
    g, atlas = build_reeb(H, cps, z_max, resolution)
    tables = build_tables(H, g, atlas)
    G = discretize(g, tables, h_target)
    w = build_weight(g, lam)
    return Setup(H, cps, g, atlas, tables, G, w)


def build_setup(cfg: ExperimentConfig, z_max: float | None = None) -> Setup:
    """Hamiltonian, graph, atlas, tables, generator and weight (cached per parameters)."""
    return _setup(cfg.hamiltonian, json.dumps(cfg.hamiltonian_params, sort_keys=True),
                  float(cfg.z_max if z_max is None else z_max), int(cfg.atlas_resolution),
                  float(cfg.h_target), float(cfg.weight_lam))


# -- reports ------------------------------------------------------------------

@dataclass
class Report:
    name: str
    rows: list
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.summary.get("passed", False))


def _clean(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


def write_report(report: Report, out_dir, cfg: ExperimentConfig | None = None) -> dict:
    """Write ``<name>.csv``, ``<name>.dat`` and ``<name>.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if report.rows:
        keys = list(report.rows[0].keys())
        p = out / f"{report.name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
            w.writeheader()
            for r in report.rows:
                w.writerow({k: _clean(r.get(k)) for k in keys})
        paths["csv"] = str(p)
        p = out / f"{report.name}.dat"
        with open(p, "w") as fh:
            fh.write("# " + " ".join(keys) + "\n")
            for r in report.rows:
                fh.write(" ".join(str(_clean(r.get(k))) for k in keys) + "\n")
        paths["dat"] = str(p)
    p = out / f"{report.name}.json"
    body = {"name": report.name, "summary": _clean(report.summary)}
    if cfg is not None:
        body["config"] = _clean(cfg.to_dict())
    p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    paths["json"] = str(p)
    return paths


# -- coefficient cross-checks -------------------------------------------------

def run_coefficient_validation(cfg: ExperimentConfig) -> Report:
    """Period limits, area and divergence identities, saddle fits (and closed forms if radial)."""
    s = build_setup(cfg)
    tol = cfg.thr("coeff_rel_tol")
    rows = []

    def add(check, edge, z, value, ref, tol_):
        rel = abs(value - ref) / abs(ref) if ref != 0 else abs(value)
        rows.append({"check": check, "edge": edge, "z": z, "value": value, "reference": ref,
                     "rel_err": rel, "tolerance": tol_, "pass": bool(rel <= tol_)})

    for t in s.tables.edges:
        for v, (side, Tlim) in t.T_end.items():
            order = np.argsort(np.abs(t.z - s.graph.vertices[v].z))[:3]
            for i in sorted(order):
                add("vertex_period", t.k, t.z[i], t.T[i], Tlim, tol)
    for r in area_derivative_check(s.tables):
        add("area_identity", r["edge"], r["z"], r["T"], r["dSdz"], tol)
    for r in divergence_check(s.tables):
        add("divergence_identity", r["edge"], r["z"], r["alpha"], r["lap_integral"], tol)
    for t in s.tables.edges:
        for fit in t.fits.values():
            rows.append({"check": "saddle_logfit", "edge": t.k, "z": fit.z_v, "value": fit.c1,
                         "reference": 0.0, "rel_err": fit.residual, "tolerance": cfg.thr("logfit_residual"),
                         "pass": bool(fit.residual < cfg.thr("logfit_residual") and fit.c1 > 0)})
    if cfg.hamiltonian == "radial":
        for t in s.tables.edges:
            for z, T, A in zip(t.z, t.T, t.alpha):
                add("radial_T", t.k, z, T, 2 * np.pi, tol)
                add("radial_alpha", t.k, z, A, 4 * np.pi * z, tol)
    passed = all(r["pass"] for r in rows)
    by = {}
    for r in rows:
        b = by.setdefault(r["check"], {"n": 0, "failed": 0, "max_rel_err": 0.0})
        b["n"] += 1
        b["failed"] += int(not r["pass"])
        b["max_rel_err"] = max(b["max_rel_err"], r["rel_err"])
    return Report("coefficients", rows, {"passed": passed, "checks": by, "hamiltonian": cfg.hamiltonian})


# -- weak convergence ---------------------------------------------------------

def _monotone(values, ses, k):
    """No rung rises above its predecessor by more than ``k`` standard errors."""
    return all(b <= a + k * sb for a, b, sb in zip(values, values[1:], ses[1:]))


_REF_DT = 1e-3


def run_weak_convergence(cfg: ExperimentConfig, *, backend=None) -> Report:
    """``Delta(eps, t) = |E_x u(X_eps(t)) - (S(t) u^)(Pi x)|`` over the ladder.

    The graph side is the theta-scheme with an absorbing cap node, run at
    spacings ``h`` and ``h/2`` and combined by Richardson extrapolation (the
    scheme converges at first order in ``h``).  The discretization budget is
    ``|S_h - S_{h/2}|`` plus the configured quadrature allowance.

    Raises
    ------
    PreconditionError
        If the Hamiltonian has no saddle.
    """
    s = build_setup(cfg)
    if not any(c.kind is CriticalKind.SADDLE for c in s.cps):
        raise PreconditionError("weak convergence needs a Hamiltonian with a saddle")
    G2 = discretize(s.graph, s.tables, cfg.h_target / 2)
    ts = cfg.t_grid
    k_se = cfg.thr("se_mult")
    budget = RotationBudget(s.H)
    tmin = min_period(s.tables)
    us = {n: test_function(n, s.H) for n in cfg.test_functions}
    names = list(us)
    F1 = np.stack([s.G.from_graph_function(s.tables.average_table(us[n])) for n in names], 1)
    F2 = np.stack([G2.from_graph_function(s.tables.average_table(us[n])) for n in names], 1)
    # smooth data: plain Crank-Nicolson at a fine step is accurate and far
    # cheaper than the positivity-preserving substep at h/2
    kw = dict(times=ts, absorb_cap=True, max_principle=False)
    S1 = apply_semigroup(s.G, F1, ts[-1], _REF_DT, **kw)
    S2 = apply_semigroup(G2, F2, ts[-1], _REF_DT, **kw)
    rows, groups = [], {}
    for xi, x0 in enumerate(cfg.starts):
        x0 = np.asarray(x0, dtype=float)
        z0, k0, _ = project_many(s.atlas, s.H, x0[None])
        ref, disc = {}, {}
        for c, n in enumerate(names):
            a = np.array([s.G.evaluate(v[:, c], z0, k0)[0] for v in S1])
            b = np.array([G2.evaluate(v[:, c], z0, k0)[0] for v in S2])
            ref[n] = 2 * b - a
            disc[n] = np.abs(b - a) + cfg.thr("quad_budget")
        for eps in cfg.eps_ladder:
            fc = FastFlowConfig(eps=eps, n_paths=cfg.n_paths, seed=cfg.seed, z_max=cfg.z_max, backend=backend)
            r = simulate(s.H, x0, ts, fc, t_min=tmin, budget=budget)
            for n, u in us.items():
                vals = np.stack([u(r.positions[j]) for j in range(len(ts))])
                m = vals.mean(1)
                se = vals.std(1, ddof=1) / np.sqrt(vals.shape[1])
                d = np.abs(m - ref[n])
                for j, t in enumerate(ts):
                    rows.append({"start": xi, "x1": x0[0], "x2": x0[1], "z": float(z0[0]), "k": int(k0[0]),
                                 "u": n, "eps": eps, "t": t, "mc_mean": m[j], "mc_se": se[j],
                                 "graph": ref[n][j], "delta": d[j], "disc_budget": disc[n][j],
                                 "stopped_fraction": r.stopped_fraction})
                j = int(np.argmax(d))
                groups.setdefault((xi, n), []).append((eps, d[j], se[j], disc[n][j]))
    summary = {"groups": [], "passed": True}
    for (xi, n), lad in groups.items():
        D = [x[1] for x in lad]
        S = [x[2] for x in lad]
        mono = _monotone(D, S, k_se)
        strict = all(b < a for a, b in zip(D, D[1:]))
        final_ok = D[-1] <= k_se * S[-1] + lad[-1][3]
        ok = mono and final_ok
        summary["groups"].append({"start": xi, "u": n, "delta": D, "se": S, "disc_budget": lad[-1][3],
                                  "monotone": mono, "strictly_decreasing": strict, "final_within_budget": final_ok,
                                  "passed": ok})
        summary["passed"] &= ok
    return Report("weak_convergence", rows, summary)


# -- H_gamma convergence ------------------------------------------------------

def run_hgamma_convergence(cfg: ExperimentConfig, u_name: str | None = None, *, backend=None) -> Report:
    """``|S_eps(t) u - (S(t) u^)v|`` in the weighted norm from Monte Carlo at grid points.

    The squared norm is debiased by the Monte Carlo variance of each point
    estimate; its standard error comes from the same per-point variances.
    """
    s = build_setup(cfg)
    u = test_function(u_name or cfg.test_functions[0], s.H)
    n = cfg.hgamma_grid
    L = min(cfg.spde_half_width, s.H.r_max)
    c = -L + (np.arange(n) + 0.5) * (2 * L / n)
    X, Y = np.meshgrid(c, c, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], -1)
    z, k, _ = project_many(s.atlas, s.H, P)
    keep = (k >= 0) & (z < cfg.z_max)
    P, z, k = P[keep], z[keep], k[keep]
    area = (2 * L / n) ** 2
    wts = s.weight.h(z) * area
    ts = cfg.t_grid
    f = s.tables.average_table(u)
    graph = np.stack([s.G.evaluate(v, z, k) for v in apply_semigroup(s.G, f, ts[-1], cfg.spde_dt, times=ts,
                                                                      absorb_cap=True)])
    M = cfg.hgamma_paths
    budget = RotationBudget(s.H)
    tmin = min_period(s.tables)
    rows, sup = [], []
    for eps in cfg.eps_ladder:
        fc = FastFlowConfig(eps=eps, n_paths=len(P) * M, seed=cfg.seed, z_max=cfg.z_max, backend=backend)
        r = simulate(s.H, np.repeat(P, M, axis=0), ts, fc, t_min=tmin, budget=budget)
        best = (0.0, 0.0)
        for j, t in enumerate(ts):
            v = u(r.positions[j]).reshape(len(P), M)
            m = v.mean(1)
            var = v.var(1, ddof=1) / M
            d = m - graph[j]
            sq = float(np.sum(wts * (d ** 2 - var)))
            se = float(np.sqrt(np.sum(wts ** 2 * (4 * d ** 2 * var + 2 * var ** 2))))
            norm = float(np.sqrt(max(sq, 0.0)))
            rows.append({"eps": eps, "t": t, "norm_sq": sq, "norm": norm, "se_sq": se,
                         "points": len(P), "paths_per_point": M, "stopped_fraction": r.stopped_fraction})
            best = max(best, (sq, se))
        sup.append(best)
    vals = [a for a, _ in sup]
    ses = [b for _, b in sup]
    mono = _monotone(vals, ses, cfg.thr("se_mult"))
    return Report("hgamma_convergence", rows, {"sup_norm_sq": vals, "se": ses, "monotone": mono,
                                                 "passed": mono, "u": u_name or cfg.test_functions[0]})


# -- SPDE ---------------------------------------------------------------------

def _spde_parts(cfg: ExperimentConfig):
    if cfg.spde_grid ** 2 > cfg.cell_budget:
        raise ConfigError(f"grid of {cfg.spde_grid}^2 cells exceeds the budget {cfg.cell_budget}")
    if cfg.spde_z_max >= cfg.spde_half_width ** 2 * 10:
        raise ConfigError("spde_z_max too large for the box")
    s = build_setup(cfg, cfg.spde_z_max)
    mu = SpectralMeasure.from_config(cfg.spectral_measure)
    basis = build_basis(mu, s.tables)
    grid = Grid2D(cfg.spde_half_width, cfg.spde_grid)
    P = grid.points().reshape(-1, 2)
    Hb = s.H.h(np.concatenate([P[:cfg.spde_grid], P[-cfg.spde_grid:], P[::cfg.spde_grid], P[cfg.spde_grid - 1::cfg.spde_grid]]))
    if Hb.min() <= cfg.spde_z_max:
        raise ConfigError("the box must enclose {H <= spde_z_max}")
    return s, mu, basis, grid


def _spde_b(u):
    return -0.5 * u + 0.3 * np.sin(u)


def _spde_g(u):
    return 0.5 + 0.2 * np.cos(u)


def run_spde_convergence(cfg: ExperimentConfig, *, b=_spde_b, g=_spde_g, phi=None, backend=None) -> Report:
    """SMOKE: ``E sup_{t in [tau, T]} |u_eps(t) - u_bar(t)v|^2`` over replicas, per rung.

    Both solvers consume the same Gaussian draws.  The weighted norm is a
    midpoint sum over grid cells below the cap.
    """
    s, mu, basis, grid = _spde_parts(cfg)
    phi = phi or _mix
    R, dt = cfg.n_replicas, cfg.spde_dt
    gcfg = GraphSPDEConfig(dt=dt, t_end=cfg.t_end, b=b, g=g, n_replicas=R, seed=cfg.seed)
    gp = solve_mild(s.G, basis, gcfg, s.tables.average_table(phi))
    P = grid.points().reshape(-1, 2)
    z, k, _ = project_many(s.atlas, s.H, P)
    ok = (k >= 0) & (z < cfg.spde_z_max)
    zz, kk = np.where(ok, z, 0.0), np.where(ok, k, 0)
    wts = np.where(ok, s.weight.h(zz), 0.0) * grid.cell_area
    rows, means, ses = [], [], []
    for eps in cfg.eps_ladder:
        sc = SPDE2DConfig(eps=eps, dt=dt, t_end=cfg.t_end, b=b, g=g, n_replicas=R, seed=cfg.seed)
        fp = spde2d_solve(s.H, grid, sc, phi, basis, backend=backend)
        sup = np.zeros(R)
        for j, t in enumerate(fp.times):
            if t < cfg.tau - 1e-9:
                continue
            jj = int(np.argmin(np.abs(gp.times - t)))
            for r in range(R):
                lift = np.where(ok, s.G.evaluate(gp.values[jj, r], zz, kk), 0.0)
                sup[r] = max(sup[r], float(np.sum(wts * (fp.fields[j, r].ravel() - lift) ** 2)))
        m, se = float(sup.mean()), float(sup.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
        means.append(m)
        ses.append(se)
        rows.append({"eps": eps, "mean_sup_sq": m, "se": se, "replicas": R, "grid": cfg.spde_grid,
                     "dt": dt, "label": "SMOKE"})
    need = 1 - cfg.thr("smoke_decrease")
    ratios = [b_ / a_ if a_ > 0 else np.inf for a_, b_ in zip(means, means[1:])]
    passed = all(r <= need for r in ratios)
    return Report("spde_convergence", rows, {"label": "SMOKE", "mean_sup_sq": means, "se": ses,
                                               "ratios": ratios, "required_ratio": need, "passed": passed})


def run_scalar_reduction(cfg: ExperimentConfig, *, u0: float = 1.0, c0: float = 0.5, n_replicas: int = 4000,
                         grid_n: int = 24, fine: int = 64, b=_spde_b, g=_spde_g, backend=None) -> Report:
    """Constant data and a noise atom at the origin only: all three solvers obey
    ``du = b(u) dt + g(u) sqrt(c0) dbeta``.

    The reference is Euler-Maruyama with ``dt / fine`` on an independent stream.
    Compared statistics are the mean and second moment at ``t_end``.
    """
    s = build_setup(cfg, cfg.spde_z_max)
    mu = SpectralMeasure(np.zeros((1, 2)), np.array([c0]))
    basis = build_basis(mu, s.tables)
    dt, T = cfg.spde_dt, cfg.t_end
    R = n_replicas
    gp = solve_mild(s.G, basis, GraphSPDEConfig(dt=dt, t_end=T, b=b, g=g, n_replicas=R, seed=cfg.seed),
                    u0, record_times=[T])
    graph_vals = gp.values[-1][:, s.G.vertex_node[s.graph.infinity.id]]
    spread_graph = float(np.max(np.ptp(gp.values[-1], axis=1)))
    grid = Grid2D(cfg.spde_half_width, grid_n)
    eps = cfg.eps_ladder[-1]
    fp = spde2d_solve(s.H, grid, SPDE2DConfig(eps=eps, dt=dt, t_end=T, b=b, g=g, n_replicas=R, seed=cfg.seed),
                      np.full((grid_n, grid_n), u0), basis, record_times=[T], backend=backend)
    field_vals = fp.fields[-1][:, grid_n // 2, grid_n // 2]
    spread_2d = float(np.max(np.ptp(fp.fields[-1].reshape(R, -1), axis=1)))
    from .rng import normal_block
    ns = int(round(T / dt)) * fine
    h = T / ns
    v = np.full(R, u0)
    for n in range(ns):
        v = v + h * b(v) + g(v) * np.sqrt(c0 * h) * normal_block(cfg.seed + 1, "misc", n, R)
    rows = []
    ok = True
    k = cfg.thr("se_mult")
    for name, vals in (("graph", graph_vals), ("field2d", field_vals)):
        for stat, fn in (("mean", lambda a: a), ("second_moment", lambda a: a ** 2)):
            a, r_ = fn(vals), fn(v)
            diff = float(a.mean() - r_.mean())
            se = float(np.sqrt(a.var(ddof=1) / R + r_.var(ddof=1) / R))
            good = abs(diff) <= k * se
            ok &= good
            rows.append({"solver": name, "statistic": stat, "solver_value": float(a.mean()),
                         "reference": float(r_.mean()), "diff": diff, "se": se, "pass": good})
    return Report("scalar_reduction", rows, {"passed": ok, "spatial_spread_graph": spread_graph,
                                               "spatial_spread_2d": spread_2d, "replicas": R})


# -- noise and probe ----------------------------------------------------------

def run_noise_check(cfg: ExperimentConfig, n_pairs: int = 10, n_samples: int = 10000, t: float = 1.0) -> Report:
    """Empirical covariance of the graph noise against the averaged-exponential quadrature."""
    s = build_setup(cfg)
    mu = SpectralMeasure.from_config(cfg.spectral_measure)
    basis = build_basis(mu, s.tables)
    rng = np.random.default_rng(cfg.seed)
    zcap = min(cfg.z_max, 6.0)

    def point():
        k = int(rng.integers(len(s.graph.edges)))
        e = s.graph.edges[k]
        hi = min(e.z_hi, zcap)
        return float(e.z_lo + (hi - e.z_lo) * rng.uniform(0.1, 0.9)), k

    rows, ok = [], True
    for i in range(n_pairs):
        p1, p2 = point(), point()
        ref = graph_covariance(mu, s.tables, p1, p2, t)
        emp, se = empirical_covariance(basis, p1, p2, t, n_samples, cfg.seed + i)
        good = abs(emp - ref) <= cfg.thr("se_mult") * se
        ok &= good
        rows.append({"pair": i, "z1": p1[0], "k1": p1[1], "z2": p2[0], "k2": p2[1], "quadrature": ref,
                     "empirical": emp, "se": se, "z_score": (emp - ref) / se, "pass": good})
    return Report("noise_check", rows, {"passed": ok, "pairs": n_pairs, "samples": n_samples})


def run_probe_averaging(cfg: ExperimentConfig, starts=None, alpha_exp: float = 0.6, *, backend=None) -> Report:
    """``|E_x u(X_eps(eps^alpha)) - u^(Pi x)|`` per rung; requires a strict decrease and a final
    residual within ``se_mult`` SE plus twice the quadrature budget."""
    s = build_setup(cfg)
    starts = starts if starts is not None else cfg.probe_starts
    budget = RotationBudget(s.H)
    rows, summary = [], {"groups": [], "passed": True}
    for xi, x0 in enumerate(starts):
        x0 = np.asarray(x0, dtype=float)
        for n in cfg.test_functions:
            u = test_function(n, s.H)
            z, k, _ = project_many(s.atlas, s.H, x0[None])
            quad = abs(average(s.tables, u, float(z[0]), int(k[0])) - float(s.tables.average_table(u)(z, k)[0]))
            quad += cfg.thr("quad_budget")
            res = []
            for eps in cfg.eps_ladder:
                r = averaging_probe(s.H, s.atlas, s.tables, u, x0, eps, alpha_exp, n_paths=cfg.n_paths,
                                    seed=cfg.seed, z_max=cfg.z_max, budget=budget, backend=backend)
                rows.append({"start": xi, "x1": x0[0], "x2": x0[1], "u": n, **r, "quad_budget": quad})
                res.append((r["residual"], r["se"]))
            D = [a for a, _ in res]
            strict = all(b < a for a, b in zip(D, D[1:]))
            final_ok = D[-1] <= cfg.thr("se_mult") * res[-1][1] + 2 * quad
            summary["groups"].append({"start": xi, "u": n, "residual": D, "se": [b for _, b in res],
                                      "quad_budget": quad, "strictly_decreasing": strict,
                                      "final_within_budget": final_ok, "passed": strict and final_ok})
            summary["passed"] &= strict and final_ok
    return Report("probe_averaging", rows, summary)


def reeb_summary(cfg: ExperimentConfig) -> dict:
    s = build_setup(cfg)
    d = s.graph.to_dict()
    d["n_edges"] = len(s.graph.edges)
    d["n_vertices"] = len(s.graph.vertices)
    d["saddles"] = sum(v.kind is VertexKind.SADDLE for v in s.graph.vertices)
    return d
