"""
Monte Carlo for the fast-advection diffusion ``dX = (1/eps) skew_grad H dt + dw``.

One noise step of length ``dt`` is a Strang composition: half Brownian kick,
exact-to-RK4 Hamiltonian flow over ``dt/eps``, half kick.  The flow substep is
cut so that each RK4 step turns the local linearisation by at most
``theta_max`` radians; the per-path budget is looked up from the largest
Hessian norm on the sublevel set of the current energy.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .coeffs import CoefficientTables, average
from .errors import (CapTooLowWarning, ConfigError, PreconditionError, StepSizeError)
from .hamiltonian import HamiltonianField
from .reeb import OUTSIDE, RegionAtlas, project_many
from .rng import normal_block

__all__ = [
    "FastFlowConfig",
    "FlowResult",
    "RotationBudget",
    "simulate",
    "step_paths",
    "estimate_semigroup",
    "martingale_check",
    "averaging_probe",
    "min_period",
    "spde2d_solve",
    "Grid2D",
    "SPDE2DConfig",
]


@dataclass(frozen=True)
class FastFlowConfig:
    """Simulation parameters.

    ``dt_noise=None`` selects the largest step allowed by the splitting guard
    ``dt <= eps * T_min / (4 pi)``.
    """

    eps: float
    n_paths: int = 10000
    seed: int = 0
    z_max: float = np.inf
    dt_noise: float | None = None
    theta_max: float = 0.03
    drift_tol: float = 1e-6
    max_doublings: int = 4
    advect: bool = True
    backend: str | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.dt_noise is not None and not self.dt_noise > 0:
            raise ConfigError("dt_noise must be positive")

    def resolved_dt(self, t_min: float) -> float:
        guard = self.eps * t_min / (4 * np.pi)
        if self.dt_noise is None:
            return guard
        if self.advect and self.dt_noise > guard * (1 + 1e-12):
            raise ConfigError(f"dt_noise={self.dt_noise} exceeds eps*T_min/(4 pi)={guard:.4g}")
        return self.dt_noise

    def to_dict(self):
        d = asdict(self)
        d["z_max"] = None if not np.isfinite(self.z_max) else self.z_max
        return d


def min_period(tables: CoefficientTables) -> float:
    """Smallest sampled period over all edges (with extremum limits)."""
    vals = [float(t.T.min()) for t in tables.edges]
    vals += [float(v[1]) for t in tables.edges for v in t.T_end.values()]
    return min(vals)


class RotationBudget:
    """``omega(z)``: max spectral Hessian norm on ``{H <= z}`` from a grid scan."""

    def __init__(self, H: HamiltonianField, resolution: int = 400):
        r = H.r_max
        c = np.linspace(-r, r, resolution)
        X, Y = np.meshgrid(c, c, indexing="ij")
        P = np.stack([X.ravel(), Y.ravel()], -1)
        z = H.h(P)
        hs = np.linalg.norm(H.hessian(P), ord=2, axis=(-2, -1))
        order = np.argsort(z)
        self.z = z[order]
        self.w = np.maximum.accumulate(hs[order])

    def __call__(self, z):
        i = np.searchsorted(self.z, np.asarray(z) + 1e-12, side="right")
        i = np.clip(i, 0, len(self.w) - 1)
        return self.w[i]


@dataclass
class FlowResult:
    times: np.ndarray
    positions: np.ndarray        # (n_times, n_paths, 2)
    stopped: np.ndarray          # (n_paths,) reached the cap
    stop_time: np.ndarray
    lap_integral: np.ndarray | None = None   # (n_times, n_paths) int_0^t Laplacian H ds
    dt: float = 0.0
    substeps: int = 0

    @property
    def stopped_fraction(self) -> float:
        return float(np.mean(self.stopped))


def _poly_mats(H: HamiltonianField):
    return np.ascontiguousarray(H._dx, dtype=float), np.ascontiguousarray(H._dy, dtype=float)


def step_paths(H: HamiltonianField, x, live, cfg: FastFlowConfig, dt: float, xi, budget: RotationBudget,
               kern=None) -> int:
    """Advance ``x[live]`` by one Strang step in place; returns RK4 substeps used.

    ``xi`` holds standard normals ``(n_paths, 4)``: the first pair drives the
    opening half kick, the second pair the closing one.

    Raises
    ------
    StepSizeError
        If the energy drift of the flow substep stays above tolerance after
        ``cfg.max_doublings`` refinements.
    """
    kern = kern or kernels.get(cfg.backend)
    idx = np.flatnonzero(live)
    if len(idx) == 0:
        return 0
    s = np.sqrt(0.5 * dt)
    y = x[idx] + s * xi[idx, :2]
    used = 0
    if cfg.advect:
        Cx, Cy = _poly_mats(H)
        z0 = H.h(y)
        tau = dt / cfg.eps
        nsub = np.maximum(1, np.ceil(tau * budget(z0) / cfg.theta_max)).astype(np.int64)
        todo = np.arange(len(idx))
        out = y.copy()
        for attempt in range(cfg.max_doublings + 1):
            trial = np.ascontiguousarray(y[todo])
            ns = nsub[todo]
            kern.advect_rk4(Cx, Cy, trial, ns, tau / ns)
            used += int(ns.sum())
            drift = np.abs(H.h(trial) - z0[todo])
            bad = drift > cfg.drift_tol * (1 + np.abs(z0[todo]))
            out[todo[~bad]] = trial[~bad]
            if not np.any(bad):
                break
            todo = todo[bad]
            nsub[todo] *= 2
        else:
            raise StepSizeError(f"energy drift {drift.max():.3g} after {cfg.max_doublings} refinements")
        y = out
    x[idx] = y + s * xi[idx, 2:]
    return used


def simulate(H: HamiltonianField, x0, times, cfg: FastFlowConfig, *, t_min: float = 2 * np.pi,
             budget: RotationBudget | None = None, track_laplacian: bool = False) -> FlowResult:
    """Simulate ``cfg.n_paths`` paths from ``x0`` and record them at ``times``.

    Paths reaching ``H >= z_max`` are frozen there and flagged.  Normals for
    step ``n`` come from the counter-based stream ``(seed, fastflow, n)`` laid
    out path-major, so a path's noise does not depend on the path count.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ConfigError("observation times must be positive and increasing")
    dt = cfg.resolved_dt(t_min)
    budget = budget or RotationBudget(H)
    kern = kernels.get(cfg.backend)
    N = cfg.n_paths
    x = np.broadcast_to(np.asarray(x0, dtype=float), (N, 2)).copy()
    live = H.h(x) < cfg.z_max
    stop_time = np.where(live, np.inf, 0.0)
    pos = np.empty((len(times), N, 2))
    lap = np.zeros((len(times), N)) if track_laplacian else None
    acc = np.zeros(N)
    lap_prev = H.laplacian(x) if track_laplacian else None
    t = 0.0
    step = 0
    used = 0
    for j, target in enumerate(times):
        n = int(np.ceil((target - t) / dt - 1e-9))
        h = (target - t) / n if n > 0 else 0.0
        for _ in range(n):
            xi = normal_block(cfg.seed, "fastflow", step, (N, 4))
            used += step_paths(H, x, live, cfg, h, xi, budget, kern)
            step += 1
            t += h
            if track_laplacian:
                lap_now = H.laplacian(x)
                acc[live] += 0.5 * h * (lap_prev[live] + lap_now[live])
                lap_prev = lap_now
            hit = live & (H.h(x) >= cfg.z_max)
            if np.any(hit):
                live &= ~hit
                stop_time[hit] = t
        pos[j] = x
        if track_laplacian:
            lap[j] = acc
        t = target
    res = FlowResult(times, pos, ~np.isinf(stop_time), stop_time, lap, dt, used)
    if res.stopped_fraction > 0.1:
        warnings.warn(f"{100 * res.stopped_fraction:.1f}% of paths reached the cap", CapTooLowWarning)
    return res


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    return v.mean(-1), (v.std(-1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(v.shape[:-1]))


def estimate_semigroup(H: HamiltonianField, u, x, t, cfg: FastFlowConfig, *, t_min: float = 2 * np.pi,
                       budget=None) -> dict:
    """Monte Carlo ``E_x u(X_eps(t))`` at one or several times.

    Returns a dict with ``mean``, ``se``, ``stopped`` (count) and ``dt``.
    Paths stopped at the cap keep the value at their stopping point.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    r = simulate(H, x, ts, cfg, t_min=t_min, budget=budget)
    vals = np.stack([u(r.positions[j]) for j in range(len(ts))])
    m, se = _mean_se(vals)
    scalar = np.ndim(t) == 0
    return {"mean": float(m[0]) if scalar else m, "se": float(se[0]) if scalar else se,
            "stopped": int(r.stopped.sum()), "dt": r.dt, "n_paths": cfg.n_paths,
            "seed": cfg.seed, "values": vals}


def martingale_check(H: HamiltonianField, x, t: float, cfg: FastFlowConfig, *, t_min: float = 2 * np.pi,
                     budget=None) -> dict:
    """Mean of ``H(X_t) - H(x) - 1/2 int_0^t Laplacian H(X_s) ds`` with its standard error."""
    r = simulate(H, x, [t], cfg, t_min=t_min, budget=budget, track_laplacian=True)
    x0 = np.asarray(x, dtype=float)
    resid = H.h(r.positions[0]) - H.h(x0) - 0.5 * r.lap_integral[0]
    m, se = _mean_se(resid)
    return {"mean": float(m), "se": float(se), "z_score": float(abs(m) / se) if se > 0 else 0.0,
            "stopped": int(r.stopped.sum()), "dt": r.dt}


def averaging_probe(H: HamiltonianField, atlas: RegionAtlas, tables: CoefficientTables, u, x,
                    eps: float, alpha_exp: float = 0.6, *, n_paths: int = 10000, seed: int = 0,
                    z_max: float | None = None, budget=None, backend=None) -> dict:
    """``|E_x u(X_eps(eps^alpha)) - u^(Pi(x))|`` with its Monte Carlo error.

    Also reports ``graph_gap = |E_x u(X) - E_x u^(Pi X)|``, the part of the
    residual that is not explained by motion across levels.

    Raises
    ------
    PreconditionError
        If ``x`` lies in a saddle band of the atlas or ``alpha_exp`` is outside ``(4/7, 2/3)``.
    """
    if not (4 / 7 < alpha_exp < 2 / 3):
        raise PreconditionError("alpha_exp must lie in (4/7, 2/3)")
    lab = int(atlas.label_at(np.asarray(x, dtype=float)))
    if lab <= -2 or lab == OUTSIDE:
        raise PreconditionError("start point lies in a saddle band or above the cap")
    zx = float(H.h(np.asarray(x, dtype=float)))
    target = average(tables, u, zx, lab)
    t = eps ** alpha_exp
    cfg = FastFlowConfig(eps=eps, n_paths=n_paths, seed=seed,
                         z_max=atlas.graph.z_max if z_max is None else z_max, backend=backend)
    r = simulate(H, x, [t], cfg, t_min=min_period(tables), budget=budget)
    X = r.positions[0]
    uv = u(X)
    m, se = _mean_se(uv)
    ua = tables.average_table(u)
    z, k, _ = project_many(atlas, H, X)
    ok = k >= 0
    gvals = np.where(ok, ua(z, np.where(ok, k, 0)), uv)
    gap, gse = _mean_se(uv - gvals)
    return {"eps": eps, "t": t, "mean": float(m), "se": float(se), "target": target,
            "residual": float(abs(m - target)), "graph_gap": float(abs(gap)), "graph_gap_se": float(gse),
            "stopped": int(r.stopped.sum()), "dt": r.dt}


def dump_paths_csv(H: HamiltonianField, atlas: RegionAtlas, res: FlowResult, path, max_paths: int = 100):
    """CSV rows ``t, path, x1, x2, H, k``."""
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "path", "x1", "x2", "H", "k"])
        for j, t in enumerate(res.times):
            X = res.positions[j, :max_paths]
            z, k, _ = project_many(atlas, H, X)
            for p in range(len(X)):
                w.writerow([t, p, X[p, 0], X[p, 1], z[p], k[p]])


def to_json_record(result: dict, cfg: FastFlowConfig) -> str:
    rec = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in result.items() if k != "values"}
    rec["config"] = cfg.to_dict()
    return json.dumps(rec)


from .spde2d import Grid2D, SPDE2DConfig, spde2d_solve  # noqa: E402  (2D SPDE lives beside the path solver)
