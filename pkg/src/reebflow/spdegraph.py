"""
Mild solutions of the limiting stochastic equation on the graph.

``u_{n+1} = S(dt) [u_n + dt b(u_n) + g(u_n) dW_n]`` with ``S`` the
semigroup of the graph generator (exact on small graphs, Crank-Nicolson
otherwise) and ``dW_n`` the averaged noise increment on the generator nodes.  Replicas are advanced together as
columns of one array.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .coeffs import GraphFunction, Weight
from .errors import ConfigError, DivergenceError, StepWarning
from .graphgen import GeneratorMatrix, _CN, _stable_dt
from .noise import NoiseBasis
from .rng import normal_block

__all__ = ["GraphSPDEConfig", "GraphPath", "solve_mild", "stochastic_convolution",
           "lipschitz_stability", "moment_report"]


@dataclass(frozen=True)
class GraphSPDEConfig:
    """Solver settings.  ``b`` and ``g`` act elementwise on node arrays;
    ``lip_b`` and ``lip_g`` are their declared Lipschitz constants."""

    dt: float
    t_end: float
    b: object = None
    g: object = None
    lip_b: float = 1.0
    lip_g: float = 1.0
    n_replicas: int = 16
    seed: int = 0
    max_principle: bool = True
    blowup: float = 1e12

    def __post_init__(self):
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigError("dt and t_end must be positive")
        if not (self.lip_b > 0 and self.lip_g > 0):
            raise ConfigError("Lipschitz constants must be positive")
        if self.n_replicas < 1:
            raise ConfigError("n_replicas must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass
class GraphPath:
    times: np.ndarray
    values: np.ndarray       # (n_times, R, n_nodes)

    def to_csv(self, G: GeneratorMatrix, replica: int = 0, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["t", "edge", "z", "value"])
        for j, t in enumerate(self.times):
            for i in range(G.n):
                w.writerow([t, int(G.edge[i]), G.z[i], self.values[j, replica, i]])
        s = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


class _Transport:
    """``S(dt)`` on ``(n, R)`` arrays.

    Small graphs use the dense exponential ``expm(dt Q)``: it is the exact
    semigroup, a stochastic matrix, so the max principle holds without
    sub-stepping.  Larger graphs fall back to Crank-Nicolson, sub-stepped for
    the max principle when requested.
    """

    DENSE_LIMIT = 1500

    def __init__(self, G: GeneratorMatrix, dt: float, max_principle: bool = True):
        self.E = None
        if G.n <= self.DENSE_LIMIT:
            self.E = np.maximum(expm(dt * G.Q.toarray()), 0.0)
            return
        sub = _stable_dt(G, dt) if max_principle else dt
        self.ns = max(1, int(np.ceil(dt / sub - 1e-12)))
        self.cn = _CN(G.Q, dt / self.ns)

    def __call__(self, V):
        if self.E is not None:
            return self.E @ V
        for _ in range(self.ns):
            V = self.cn.step(V)
        return V


def _initial(G: GeneratorMatrix, phi) -> np.ndarray:
    if isinstance(phi, GraphFunction):
        return G.from_graph_function(phi)
    if callable(phi):
        return G.sample(phi)
    return np.broadcast_to(np.asarray(phi, dtype=float), (G.n,)).copy()


def solve_mild(G: GeneratorMatrix, basis: NoiseBasis | None, cfg: GraphSPDEConfig, phi, *,
               record_times=None, noise_scale: float = 1.0) -> GraphPath:
    """Exponential-Euler solution paths for ``cfg.n_replicas`` replicas.

    Step ``n`` uses ``normal_block(seed, "noise", n, (R, J))``, the same draws
    as :func:`reebflow.spde2d.spde2d_solve`, so both solvers share increments.

    Raises
    ------
    DivergenceError
        If any value exceeds ``cfg.blowup``.
    """
    ns = cfg.n_steps
    dt = cfg.t_end / ns
    if cfg.b is not None and dt * cfg.lip_b > 1:
        warnings.warn(f"dt * Lip(b) = {dt * cfg.lip_b:.3g} > 1", StepWarning)
    R = cfg.n_replicas
    U = np.repeat(_initial(G, phi)[:, None], R, axis=1)
    S = _Transport(G, dt, cfg.max_principle)
    Enodes = basis.node_matrix(G) if (basis is not None and cfg.g is not None) else None
    keep = set(range(ns + 1)) if record_times is None else {0} | {int(round(t / dt)) for t in record_times}
    times, out = [0.0], [U.T.copy()]
    for step in range(ns):
        V = U.copy()
        if cfg.b is not None:
            V += dt * cfg.b(U)
        if Enodes is not None:
            xi = normal_block(cfg.seed, "noise", step, (R, basis.size))
            dW = noise_scale * np.sqrt(dt) * (Enodes @ xi.T)
            V += cfg.g(U) * dW
        U = S(V)
        if not np.all(np.isfinite(U)) or np.max(np.abs(U)) > cfg.blowup:
            raise DivergenceError(f"graph solution blew up at step {step + 1}")
        if step + 1 in keep:
            times.append((step + 1) * dt)
            out.append(U.T.copy())
    return GraphPath(np.array(times), np.stack(out))


def stochastic_convolution(G: GeneratorMatrix, basis: NoiseBasis, cfg: GraphSPDEConfig, v1, v2) -> np.ndarray:
    """``Z_n = sum_{m<n} S(t_n - t_m) [g(v1_m) - g(v2_m)] dW_m`` for all replicas.

    ``v1, v2`` are node arrays of shape ``(n_steps + 1, n)`` (one path shared
    by every replica) or ``(n_steps + 1, R, n)``.  Returns ``(n_steps + 1, R, n)``.
    """
    ns = cfg.n_steps
    dt = cfg.t_end / ns
    R = cfg.n_replicas
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape or v1.shape[0] != ns + 1:
        raise ConfigError("driving paths must have n_steps + 1 rows and equal shapes")
    S = _Transport(G, dt, cfg.max_principle)
    Enodes = basis.node_matrix(G)
    Z = np.zeros((G.n, R))
    out = [Z.T.copy()]
    for step in range(ns):
        a, b = v1[step], v2[step]
        diff = cfg.g(a) - cfg.g(b)
        diff = diff[:, None] if diff.ndim == 1 else diff.T
        xi = normal_block(cfg.seed, "noise", step, (R, basis.size))
        Z = S(Z + diff * (np.sqrt(dt) * (Enodes @ xi.T)))
        out.append(Z.T.copy())
    return np.stack(out)


def _sup_sq(G: GeneratorMatrix, weight: Weight, paths) -> np.ndarray:
    """``sup_t |path(t)|^2`` in the mass-lumped weighted norm, per replica."""
    w = G.m * weight.h(G.z)
    return np.max(np.einsum("tri,i->tr", paths ** 2, w), axis=0)


def lipschitz_stability(G: GeneratorMatrix, basis: NoiseBasis, cfg: GraphSPDEConfig, weight: Weight,
                        v1, v2) -> dict:
    """Ratio ``E sup |Z|^2 / E sup |v1 - v2|^2`` over the replicas (0 if ``v1 == v2``)."""
    Z = stochastic_convolution(G, basis, cfg, v1, v2)
    lhs = _sup_sq(G, weight, Z)
    d = np.asarray(v1, dtype=float) - np.asarray(v2, dtype=float)
    if d.ndim == 2:
        d = d[:, None, :]
    rhs = _sup_sq(G, weight, d)
    num = float(lhs.mean())
    den = float(rhs.mean())
    return {"lhs": num, "lhs_se": float(lhs.std(ddof=1) / np.sqrt(len(lhs))) if len(lhs) > 1 else 0.0,
            "rhs": den, "ratio": num / den if den > 0 else 0.0}


def moment_report(G: GeneratorMatrix, weight: Weight, path: GraphPath, ps=(2, 4)) -> dict:
    """``E sup_t |u(t)|^p`` in the weighted graph norm with 95% intervals.

    Raises
    ------
    ConfigError
        With fewer than 10 replicas.
    """
    R = path.values.shape[1]
    if R < 10:
        raise ConfigError("moment statistics need at least 10 replicas")
    sup = np.sqrt(_sup_sq(G, weight, path.values))
    out = {"replicas": R}
    for p in ps:
        v = sup ** p
        m, se = float(v.mean()), float(v.std(ddof=1) / np.sqrt(R))
        out[f"p{p}"] = {"mean": m, "se": se, "ci95": [m - 1.96 * se, m + 1.96 * se]}
    return out


def report_json(report: dict, path=None) -> str:
    s = json.dumps(report, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(s)
    return s
