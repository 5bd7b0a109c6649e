"""
The 2D stochastic reaction-diffusion equation with fast advection on a box.

``du = [(1/eps) <skew_grad H, grad u> + 1/2 Lap u + b(u)] dt + g(u) dW``

on cell centres of a square box with homogeneous Neumann walls.  One step of
length ``dt`` applies the reaction and noise increment first, then the
transport ``exp(dt L_eps)`` as half diffusion, advection, half diffusion.
That is the same exponential-Euler layout as the graph solver, so the two can
be driven by identical Gaussian increments.

Advection is a fixed sparse matrix per step.  ``semilagrangian`` follows each cell
centre along the Hamiltonian flow for ``dt/eps`` (the transport semigroup is
``u(t + dt, x) = u(t, Phi_{dt/eps}(x))``) and interpolates with the Keys
cubic kernel; ``upwind`` is the explicit first-order donor-cell stencil and is
subject to an advective CFL bound.  Diffusion is exact for the discrete
Neumann Laplacian via the type-II cosine transform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.fft import dctn, idctn

from . import kernels
from .errors import ConfigError, DivergenceError
from .hamiltonian import HamiltonianField
from .noise import NoiseBasis
from .rng import normal_block

__all__ = ["Grid2D", "SPDE2DConfig", "FieldPath", "spde2d_solve", "advection_matrix"]


@dataclass(frozen=True)
class Grid2D:
    """``n x n`` cell centres on ``[-half_width, half_width]^2``."""

    half_width: float
    n: int

    @property
    def h(self) -> float:
        return 2 * self.half_width / self.n

    @property
    def centers(self) -> np.ndarray:
        return -self.half_width + (np.arange(self.n) + 0.5) * self.h

    def points(self) -> np.ndarray:
        c = self.centers
        X, Y = np.meshgrid(c, c, indexing="ij")
        return np.stack([X, Y], -1)

    @property
    def cell_area(self) -> float:
        return self.h * self.h


@dataclass(frozen=True)
class SPDE2DConfig:
    eps: float
    dt: float
    t_end: float
    b: object = None              # callable u -> reaction, None for 0
    g: object = None              # callable u -> noise amplitude, None for 0
    n_replicas: int = 8
    seed: int = 0
    scheme: str = "semilagrangian"
    theta_max: float = 0.03
    blowup: float = 1e12

    def __post_init__(self):
        if not (self.eps > 0 and self.dt > 0 and self.t_end > 0):
            raise ConfigError("eps, dt and t_end must be positive")
        if self.scheme not in ("semilagrangian", "upwind"):
            raise ConfigError(f"unknown advection scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass
class FieldPath:
    times: np.ndarray
    fields: np.ndarray           # (n_times, R, n, n)
    grid: Grid2D


def _keys(t):
    """Keys cubic convolution weights (a = -1/2) for the four taps around ``t`` in [0, 1)."""
    a = -0.5
    d = np.stack([1 + t, t, 1 - t, 2 - t], -1)
    w = np.where(d <= 1, (a + 2) * d ** 3 - (a + 3) * d ** 2 + 1,
                 a * d ** 3 - 5 * a * d ** 2 + 8 * a * d - 4 * a)
    return w


def _departure_points(H: HamiltonianField, grid: Grid2D, tau: float, theta_max: float, backend=None):
    P = grid.points().reshape(-1, 2).copy()
    Cx = np.ascontiguousarray(H._dx, dtype=float)
    Cy = np.ascontiguousarray(H._dy, dtype=float)
    hs = np.linalg.norm(H.hessian(P), ord=2, axis=(-2, -1))
    # the orbit can reach larger curvature than its start; use the box maximum
    nsub = np.full(len(P), max(1, int(np.ceil(tau * hs.max() / theta_max))), dtype=np.int64)
    kernels.get(backend).advect_rk4(Cx, Cy, P, nsub, np.full(len(P), tau / nsub[0]))
    return P


def advection_matrix(H: HamiltonianField, grid: Grid2D, eps: float, dt: float, scheme: str = "semilagrangian",
                     theta_max: float = 0.03, backend=None) -> sp.csr_matrix:
    """Sparse one-step transport matrix for ``u_t = (1/eps) <skew_grad H, grad u>``.

    Raises
    ------
    ConfigError
        For ``upwind`` when ``dt max|grad H| / (eps h) > 0.9``.
    """
    n, h = grid.n, grid.h
    N = n * n
    if scheme == "upwind":
        P = grid.points().reshape(-1, 2)
        # u_t = v . grad u, v = skew_grad H / eps: one-sided difference towards v
        v = H.skew_grad(P) / eps
        cfl = dt * np.max(np.abs(H.grad(P))) / (eps * h)
        if cfl > 0.9:
            raise ConfigError(f"advective CFL number {cfl:.3g} exceeds 0.9")
        I, J = np.divmod(np.arange(N), n)
        rows, cols, vals = [np.arange(N)], [np.arange(N)], [np.ones(N)]
        for ax, idx in ((0, I), (1, J)):
            c = v[:, ax] * dt / h
            fwd = np.minimum(idx + 1, n - 1)
            bwd = np.maximum(idx - 1, 0)
            nb = np.where(c > 0, fwd, bwd)
            tgt = nb * n + J if ax == 0 else I * n + nb
            rows += [np.arange(N), np.arange(N)]
            cols += [tgt, np.arange(N)]
            vals += [np.abs(c), -np.abs(c)]
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    D = _departure_points(H, grid, dt / eps, theta_max, backend)
    # fractional cell index; clamp to the box (Neumann-like extension)
    f = (D - grid.centers[0]) / h
    f = np.clip(f, 0, n - 1)
    i0 = np.floor(f).astype(np.int64)
    i0 = np.minimum(i0, n - 2)
    t = f - i0
    wx, wy = _keys(t[:, 0]), _keys(t[:, 1])
    rows, cols, vals = [], [], []
    for a in range(4):
        ia = np.clip(i0[:, 0] - 1 + a, 0, n - 1)
        for b in range(4):
            jb = np.clip(i0[:, 1] - 1 + b, 0, n - 1)
            rows.append(np.arange(N))
            cols.append(ia * n + jb)
            vals.append(wx[:, a] * wy[:, b])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


def _diffusion_symbol(grid: Grid2D, tau: float) -> np.ndarray:
    k = np.arange(grid.n)
    lam = (4 / grid.h ** 2) * np.sin(np.pi * k / (2 * grid.n)) ** 2
    return np.exp(-0.5 * tau * (lam[:, None] + lam[None, :]))


def spde2d_solve(H: HamiltonianField, grid: Grid2D, cfg: SPDE2DConfig, phi, basis: NoiseBasis | None = None,
                 *, record_times=None, backend=None) -> FieldPath:
    """Integrate ``cfg.n_replicas`` independent copies from ``phi``.

    The Gaussian draws of step ``n`` are ``normal_block(seed, "noise", n, (R, J))``,
    the stream consumed by :func:`reebflow.spdegraph.solve_mild`.

    Parameters
    ----------
    phi : callable or ndarray
        Initial field as a function of points ``(..., 2)`` or an ``(n, n)`` array.
    record_times : sequence of float, optional
        Times to keep; snapped to the step grid.  Default: every step.
    """
    n, R = grid.n, cfg.n_replicas
    ns = cfg.n_steps
    dt = cfg.t_end / ns
    pts = grid.points()
    u0 = phi(pts) if callable(phi) else np.asarray(phi, dtype=float)
    U = np.broadcast_to(u0, (R, n, n)).astype(float).copy()
    A = advection_matrix(H, grid, cfg.eps, dt, cfg.scheme, cfg.theta_max, backend)
    half = _diffusion_symbol(grid, dt / 2)
    E = basis.evaluate(pts) if (basis is not None and cfg.g is not None) else None
    if record_times is None:
        keep = set(range(ns + 1))
    else:
        keep = {int(round(t / dt)) for t in record_times}
        keep.add(0)
    times, out = [], []
    if 0 in keep:
        times.append(0.0)
        out.append(U.copy())

    def diffuse(V):
        return idctn(dctn(V, type=2, axes=(1, 2), norm="ortho") * half, type=2, axes=(1, 2), norm="ortho")

    for step in range(ns):
        V = U.copy()
        if cfg.b is not None:
            V += dt * cfg.b(U)
        if E is not None:
            xi = normal_block(cfg.seed, "noise", step, (R, basis.size))
            dW = np.sqrt(dt) * np.einsum("abj,rj->rab", E, xi)
            V += cfg.g(U) * dW
        V = diffuse(V)
        V = (A @ V.reshape(R, -1).T).T.reshape(R, n, n)
        U = diffuse(V)
        if not np.all(np.isfinite(U)) or np.max(np.abs(U)) > cfg.blowup:
            raise DivergenceError(f"2D field blew up at step {step + 1}")
        if step + 1 in keep:
            times.append((step + 1) * dt)
            out.append(U.copy())
    return FieldPath(np.array(times), np.stack(out), grid)
