"""
Per-edge coefficient tables, the averaging and lifting operators, the weight
function and the two weighted L2 structures.

Tables sample ``T_k``, ``alpha_k`` and ``S_k`` on a uniform core grid plus a
geometric refinement toward the endpoints.  ``T`` is interpolated as a monotone
cubic of the remainder ``T - sum_s c1_s |log|z - z_s||`` so the logarithmic
divergence at saddle endpoints is carried by the fitted closed form.

Integrals of graph functions against ``T dz`` are done interval by interval:
``int_I F T dz ~ mean(F at the ends) * int_I T dz`` where ``int_I T dz`` is
exact for the interpolant.  These cell masses are the same quantities the
generator uses, so graph-side quadrature and the generator share one measure.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .contour import (compute_alpha, compute_area, compute_T, enclosed_integral,
                      extract_level_curve, LevelCurve)
from .errors import (AsymptoticsWarning, NearSingularError, ParameterError,
                     PreconditionError, TableError)
from .hamiltonian import HamiltonianField
from .reeb import OUTSIDE, ReebGraph, RegionAtlas, VertexKind, project_many

__all__ = [
    "LogFit",
    "EdgeCoefficientTable",
    "CoefficientTables",
    "build_tables",
    "saddle_log_fit",
    "curvature_corrected_area",
    "GraphFunction",
    "Weight",
    "build_weight",
    "Quadrature2D",
    "average",
    "lift",
    "hbar_inner",
    "hbar_norm",
    "hgamma_inner",
    "hgamma_norm",
    "area_derivative_check",
    "divergence_check",
]


# -- small helpers ------------------------------------------------------------

def _abslog_integral(a, b):
    """``int_a^b |log u| du`` for ``0 <= a <= b``."""
    def G(u):
        # antiderivative of |log u|, continuous at u = 1
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ulog = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
        return np.where(u <= 1, u - ulog, ulog - u + 2.0)
    return G(b) - G(a)


def curvature_corrected_area(H: HamiltonianField, curve: LevelCurve) -> float:
    """Shoelace area plus the circular-segment correction ``chord^3 kappa / 12``.

    The correction lifts the inscribed polygon error from second to fourth
    order in the chord length, which keeps finite differences of the area
    meaningful at small level spacings.
    """
    p = curve.points
    q = np.roll(p, -1, axis=0)
    mid = 0.5 * (p + q)
    # pull chord midpoints onto the curve to evaluate curvature there
    g = H.grad(mid)
    g2 = np.sum(g * g, -1)
    mid = mid - ((H.h(mid) - curve.z) / g2)[:, None] * g
    g = H.grad(mid)
    hs = H.hessian(mid)
    hx, hy = g[:, 0], g[:, 1]
    num = hs[:, 1, 1] * hx**2 - 2 * hs[:, 0, 1] * hx * hy + hs[:, 0, 0] * hy**2
    kappa = num / np.maximum(np.hypot(hx, hy), 1e-300) ** 3
    chord = np.hypot(*(q - p).T)
    base = compute_area(curve)
    # H increases outward around minima; kappa > 0 means the curve bulges out
    outward = _outward_sign(H, curve)
    return base + outward * float(np.sum(chord**3 * kappa)) / 12.0


def _outward_sign(H, curve):
    """+1 if H increases out of the enclosed region, else -1."""
    p = curve.points
    c = p.mean(axis=0)
    g = H.grad(p)
    return 1.0 if np.mean(np.sum(g * (p - c), -1)) > 0 else -1.0


# -- log fit ------------------------------------------------------------------

@dataclass(frozen=True)
class LogFit:
    """``T(z) ~ c0 + c1 |log|z - z_v||`` near vertex ``v``."""

    vertex: int
    z_v: float
    c0: float
    c1: float
    residual: float
    n: int
    kind: str = "Saddle"

    def __call__(self, z):
        return self.c0 + self.c1 * np.abs(np.log(np.abs(np.asarray(z) - self.z_v)))

    def to_dict(self):
        return {"vertex": self.vertex, "z_v": self.z_v, "c0": self.c0, "c1": self.c1,
                "residual": self.residual, "n": self.n, "kind": self.kind}


def _fit_log(z, T, z_v):
    L = np.abs(np.log(np.abs(z - z_v)))
    A = np.stack([np.ones_like(L), L], -1)
    (c0, c1), *_ = np.linalg.lstsq(A, T, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([c0, c1]) - T) / np.abs(T)))
    return float(c0), float(c1), resid


# -- tables -------------------------------------------------------------------

@dataclass
class EdgeCoefficientTable:
    """Sampled coefficients on one edge.

    Attributes
    ----------
    z, T, alpha, S : ndarray
        Samples, ascending in ``z``, all strictly inside the edge.
    core : ndarray of bool
        True for samples on the uniform core grid.
    fits : dict
        ``vertex id -> LogFit`` for saddle endpoints.
    T_end : dict
        Endpoint limits of ``T`` for extremum endpoints (``2 pi / sqrt det``).
    """

    k: int
    z_lo: float
    z_hi: float
    z: np.ndarray
    T: np.ndarray
    alpha: np.ndarray
    S: np.ndarray
    core: np.ndarray
    dz_core: float
    fits: dict = field(default_factory=dict)
    T_end: dict = field(default_factory=dict)
    nodes: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._build_interp()

    # nodes (samples plus endpoints) used for every graph-side integral
    @property
    def znodes(self) -> np.ndarray:
        return np.concatenate([[self.z_lo], self.z, [self.z_hi]])

    def _log_part(self, z):
        out = np.zeros_like(np.asarray(z, dtype=float))
        for f in self.fits.values():
            with np.errstate(divide="ignore"):
                out = out + f.c1 * np.abs(np.log(np.abs(z - f.z_v)))
        return out

    def _build_interp(self):
        R = self.T - self._log_part(self.z)
        zz, RR = self.z, R
        lo_ext = [v for v, t in self.T_end.items() if t[0] == "lo"]
        hi_ext = [v for v, t in self.T_end.items() if t[0] == "hi"]
        if lo_ext:
            zz = np.concatenate([[self.z_lo], zz])
            RR = np.concatenate([[self.T_end[lo_ext[0]][1] - self._log_part(np.array([self.z_lo]))[0]], RR])
        if hi_ext:
            zz = np.concatenate([zz, [self.z_hi]])
            RR = np.concatenate([RR, [self.T_end[hi_ext[0]][1] - self._log_part(np.array([self.z_hi]))[0]]])
        self._R = PchipInterpolator(zz, RR, extrapolate=True)
        self._alpha = PchipInterpolator(self.z, self.alpha, extrapolate=True)
        self._S = PchipInterpolator(self.z, self.S, extrapolate=True)
        self._masses = None

    def T_at(self, z):
        z = np.asarray(z, dtype=float)
        return self._R(z) + self._log_part(z)

    def alpha_at(self, z):
        return np.maximum(self._alpha(np.asarray(z, dtype=float)), 0.0)

    def S_at(self, z):
        return self._S(np.asarray(z, dtype=float))

    def T_integral(self, a, b):
        """Exact integral of the ``T`` interpolant over ``[a, b]``."""
        val = float(self._R.integrate(a, b))
        for f in self.fits.values():
            lo, hi = sorted((abs(a - f.z_v), abs(b - f.z_v)))
            if (a - f.z_v) * (b - f.z_v) < 0:
                val += f.c1 * float(_abslog_integral(0, abs(a - f.z_v)) + _abslog_integral(0, abs(b - f.z_v)))
            else:
                val += f.c1 * float(_abslog_integral(lo, hi))
        return val

    def interval_masses(self) -> np.ndarray:
        """``int T dz`` over consecutive node intervals."""
        if self._masses is None:
            zn = self.znodes
            self._masses = np.array([self.T_integral(zn[i], zn[i + 1]) for i in range(len(zn) - 1)])
        return self._masses

    def node_weights(self) -> np.ndarray:
        """Trapezoid-style weights so that ``sum w_i F(z_i) ~ int F T dz``."""
        m = self.interval_masses()
        w = np.zeros(len(m) + 1)
        w[:-1] += 0.5 * m
        w[1:] += 0.5 * m
        return w

    def rows(self):
        for i in range(len(self.z)):
            yield {"edge": self.k, "z": float(self.z[i]), "T": float(self.T[i]),
                   "alpha": float(self.alpha[i]), "area": float(self.S[i])}


def _sample_grid(g: ReebGraph, k: int, n_core: int, saddle_levels: int, end_levels: int):
    e = g.edges[k]
    L = e.z_hi - e.z_lo
    dz = L / n_core
    core = e.z_lo + dz * np.arange(1, n_core)
    extra = []
    for v, side in ((e.v_lo, 1.0), (e.v_hi, -1.0)):
        zv = g.vertices[v].z
        kind = g.vertices[v].kind
        levels = saddle_levels if kind is VertexKind.SADDLE else end_levels
        extra += [zv + side * dz * 2.0 ** -j for j in range(1, levels + 1)]
    z = np.concatenate([core, extra])
    is_core = np.concatenate([np.ones(len(core), bool), np.zeros(len(extra), bool)])
    order = np.argsort(z)
    return z[order], is_core[order], dz


def saddle_log_fit(table: EdgeCoefficientTable, vertex: int, z_v: float, *, min_samples: int = 8,
                   warn_residual: float = 0.05, kind: str = "Saddle") -> LogFit:
    """Least-squares ``c0 + c1 |log|z - z_v||`` over the refinement zone of ``vertex``.

    Raises
    ------
    PreconditionError
        Fewer than ``min_samples`` samples inside the zone.
    """
    zone = (np.abs(table.z - z_v) < table.dz_core * (1 - 1e-9)) & ~table.core
    if zone.sum() < min_samples:
        raise PreconditionError(f"need >= {min_samples} samples near vertex {vertex}, have {zone.sum()}")
    c0, c1, resid = _fit_log(table.z[zone], table.T[zone], z_v)
    if resid > warn_residual:
        warnings.warn(f"log fit residual {resid:.3g} at vertex {vertex}", AsymptoticsWarning)
    return LogFit(vertex, float(z_v), c0, c1, resid, int(zone.sum()), kind)


@dataclass
class CoefficientTables:
    H: HamiltonianField
    graph: ReebGraph
    atlas: RegionAtlas
    edges: list
    params: dict = field(default_factory=dict)

    def __getitem__(self, k) -> EdgeCoefficientTable:
        return self.edges[k]

    def __len__(self):
        return len(self.edges)

    # cached concatenated quadrature nodes for batch averaging
    def _flat_nodes(self):
        if getattr(self, "_flat", None) is None:
            pts, q, owner = [], [], []
            j = 0
            for t in self.edges:
                for p, qq in t.nodes:
                    pts.append(p)
                    q.append(qq)
                    owner.append(np.full(len(p), j))
                    j += 1
            starts = np.cumsum([0] + [len(p) for p in pts[:-1]])
            self._flat = (np.concatenate(pts), np.concatenate(q), starts)
        return self._flat

    def average_table(self, u, vertex_values=None) -> "GraphFunction":
        """``u^`` at every table sample; ``u`` maps an ``(..., 2)`` array to values."""
        pts, q, starts = self._flat_nodes()
        vals = np.add.reduceat(q * u(pts), starts)
        out, j = [], 0
        for t in self.edges:
            n = len(t.z)
            out.append(vals[j:j + n] / t.T)
            j += n
        return GraphFunction(self, out, vertex_values or {})

    def admissibility(self, weight: "Weight") -> float:
        """``sum_k int gamma T_k dz`` on the truncated graph."""
        return hbar_inner(self, weight, GraphFunction.constant(self, 1.0), GraphFunction.constant(self, 1.0))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["edge", "z", "T", "alpha", "area"])
        w.writeheader()
        for t in self.edges:
            for row in t.rows():
                w.writerow(row)
        s = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(s)
        return s

    def to_dict(self):
        return {"params": self.params,
                "edges": [{"k": t.k, "z_lo": t.z_lo, "z_hi": t.z_hi, "dz_core": t.dz_core,
                           "z": t.z.tolist(), "T": t.T.tolist(), "alpha": t.alpha.tolist(),
                           "area": t.S.tolist(), "core": t.core.tolist(),
                           "fits": {str(v): f.to_dict() for v, f in t.fits.items()},
                           "T_end": {str(v): list(x) for v, x in t.T_end.items()}}
                          for t in self.edges]}

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def build_tables(H: HamiltonianField, graph: ReebGraph, atlas: RegionAtlas, *, n_core: int = 48,
                 saddle_levels: int = 12, end_levels: int = 4, resolution: int = 200,
                 densify: float = 0.1) -> CoefficientTables:
    """Sample ``T``, ``alpha``, ``S`` on every edge and fit the saddle asymptotics.

    Raises
    ------
    TableError
        If any sample is non-finite or non-positive.
    """
    tables = []
    for e in graph.edges:
        zs, is_core, dz = _sample_grid(graph, e.id, n_core, saddle_levels, end_levels)
        T, A, S, nodes = [], [], [], []
        for z in zs:
            c = extract_level_curve(H, atlas, float(z), e.id, resolution, densify=densify)
            w = c.trapezoid_weights()
            gn = H.grad_norm(c.points)
            q = w / gn
            T.append(float(q.sum()))
            A.append(float(np.sum(w * gn)))
            S.append(curvature_corrected_area(H, c))
            nodes.append((c.points, q))
        T, A, S = map(np.asarray, (T, A, S))
        if not (np.all(np.isfinite(T)) and np.all(T > 0) and np.all(A > 0)):
            raise TableError(f"non-finite or non-positive coefficients on edge {e.id}")
        T_end = {}
        for v, side in ((e.v_lo, "lo"), (e.v_hi, "hi")):
            vert = graph.vertices[v]
            if vert.kind is VertexKind.EXTREMUM:
                cp = graph.critical_points[vert.critical_index]
                T_end[v] = (side, 2 * np.pi / np.sqrt(abs(cp.hess_det)))
        t = EdgeCoefficientTable(e.id, e.z_lo, e.z_hi, zs, T, A, S, is_core, dz, {}, T_end, nodes)
        fits = {}
        for v in (e.v_lo, e.v_hi):
            vert = graph.vertices[v]
            if vert.kind is VertexKind.SADDLE:
                fits[v] = saddle_log_fit(t, v, vert.z)
        t.fits = fits
        t._build_interp()
        tables.append(t)
    params = {"n_core": n_core, "saddle_levels": saddle_levels, "end_levels": end_levels,
              "resolution": resolution, "densify": densify}
    return CoefficientTables(H, graph, atlas, tables, params)


# -- graph functions ----------------------------------------------------------

@dataclass
class GraphFunction:
    """Values on the table samples of every edge plus optional vertex values.

    ``vertex_values`` maps vertex id to a value.  When given, the value is used
    as the endpoint node on every incident edge (a continuous function); when
    absent, each edge extrapolates its own samples (the limits may differ).
    """

    tables: CoefficientTables
    values: list
    vertex_values: dict = field(default_factory=dict)

    @classmethod
    def from_callable(cls, tables, fn, vertex_fn=None):
        """Sample ``fn(z, k)`` on the table grids; ``vertex_fn(v)`` gives vertex values."""
        vals = [np.asarray(fn(t.z, t.k), dtype=float) * np.ones_like(t.z) for t in tables.edges]
        vv = {}
        if vertex_fn is not None:
            for v in tables.graph.vertices:
                vv[v.id] = float(vertex_fn(v))
        return cls(tables, vals, vv)

    @classmethod
    def constant(cls, tables, c):
        return cls.from_callable(tables, lambda z, k: np.full_like(z, c), lambda v: c)

    def node_values(self, k) -> np.ndarray:
        """Values on ``znodes`` of edge ``k`` (endpoints included)."""
        t = self.tables[k]
        e = self.tables.graph.edges[k]
        ends = []
        for v in (e.v_lo, e.v_hi):
            if v in self.vertex_values:
                ends.append(self.vertex_values[v])
            else:
                ends.append(None)
        interp = PchipInterpolator(t.z, self.values[k], extrapolate=True)
        lo = ends[0] if ends[0] is not None else float(interp(t.z_lo))
        hi = ends[1] if ends[1] is not None else float(interp(t.z_hi))
        return np.concatenate([[lo], self.values[k], [hi]])

    def interpolant(self, k):
        cache = self.__dict__.setdefault("_interp", {})
        if k not in cache:
            t = self.tables[k]
            cache[k] = PchipInterpolator(t.znodes, self.node_values(k), extrapolate=True)
        return cache[k]

    def __call__(self, z, k):
        z = np.asarray(z, dtype=float)
        k = np.broadcast_to(np.asarray(k), z.shape)
        out = np.full(z.shape, np.nan)
        for kk in np.unique(k):
            if kk < 0:
                continue
            m = k == kk
            e = self.tables.graph.edges[int(kk)]
            # no extrapolation past the endpoints (quadrature cells can poke above the cap)
            out[m] = self.interpolant(int(kk))(np.clip(z[m], e.z_lo, e.z_hi))
        return out

    def _combine(self, other, op):
        if isinstance(other, GraphFunction):
            vals = [op(a, b) for a, b in zip(self.values, other.values)]
            vv = {v: op(self.vertex_values[v], other.vertex_values[v])
                  for v in self.vertex_values if v in other.vertex_values}
        else:
            vals = [op(a, other) for a in self.values]
            vv = {v: op(x, other) for v, x in self.vertex_values.items()}
        return GraphFunction(self.tables, vals, vv)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def max_abs_diff(self, other) -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.values, other.values))


# -- weight -------------------------------------------------------------------

@dataclass(frozen=True)
class Weight:
    """``h(t)``: 1 on ``[0, z0]``, quintic blend on ``[z0, 2 z0]``,
    ``exp(-lam (sqrt t - sqrt(2 z0))) / 2`` beyond."""

    z0: float
    lam: float
    blend: tuple

    def _tail(self, t, d=0):
        t = np.asarray(t, dtype=float)
        s = np.sqrt(np.maximum(t, 1e-300))
        g = 0.5 * np.exp(-self.lam * (s - np.sqrt(2 * self.z0)))
        if d == 0:
            return g
        if d == 1:
            return -self.lam / (2 * s) * g
        return g * (self.lam**2 / (4 * t) + self.lam / (4 * t * s))

    def h(self, t, d: int = 0):
        t = np.asarray(t, dtype=float)
        z0 = self.z0
        u = (t - z0) / z0
        poly = np.polynomial.Polynomial(self.blend)
        mid = poly.deriv(d)(u) / z0**d if d else poly(u)
        flat = np.ones_like(t) if d == 0 else np.zeros_like(t)
        return np.where(t <= z0, flat, np.where(t < 2 * z0, mid, self._tail(t, d)))

    def __call__(self, z, k=None):
        return self.h(z)

    def lift_values(self, H: HamiltonianField, x):
        return self.h(H.h(x))

    def laplacian_ratio(self, H: HamiltonianField, x) -> float:
        """Fitted ``c`` with ``Laplacian(h(H)) <= c h(H)`` over the sample points."""
        t = H.h(x)
        lap = self.h(t, 2) * np.sum(H.grad(x) ** 2, -1) + self.h(t, 1) * H.laplacian(x)
        return float(np.max(lap / self.h(t)))

    def to_dict(self):
        return {"z0": self.z0, "lam": self.lam, "blend": list(self.blend)}


def build_weight(g: ReebGraph, lam: float = 1.0, z0: float | None = None, *,
                 check_points: int = 10000) -> Weight:
    """Quintic C2 blend between the flat part and the decaying tail.

    Raises
    ------
    ParameterError
        ``lam <= 0`` or the blend is not monotone.
    PreconditionError
        ``z0`` not above every critical value.
    """
    if not lam > 0:
        raise ParameterError("weight decay rate lam must be positive")
    zc = max(v.z for v in g.vertices if v.kind is not VertexKind.INFINITY)
    if z0 is None:
        z0 = zc + 1.0
    if z0 <= zc:
        raise PreconditionError(f"z0={z0} must exceed the largest critical value {zc}")
    tmp = Weight(float(z0), float(lam), (1.0,))
    t1 = 2 * z0
    # Hermite data in u = (t - z0)/z0 on [0, 1]
    v1 = float(tmp._tail(t1)), float(tmp._tail(t1, 1)) * z0, float(tmp._tail(t1, 2)) * z0**2
    A = np.zeros((6, 6))
    rhs = np.array([1.0, 0.0, 0.0, *v1])
    for j in range(6):
        A[0, j] = 1.0 if j == 0 else 0.0
        A[1, j] = 1.0 if j == 1 else 0.0
        A[2, j] = 2.0 if j == 2 else 0.0
        A[3, j] = 1.0
        A[4, j] = j
        A[5, j] = j * (j - 1)
    coef = np.linalg.solve(A, rhs)
    w = Weight(float(z0), float(lam), tuple(float(c) for c in coef))
    grid = np.linspace(0, max(4 * z0, g.z_max), check_points)
    if np.any(w.h(grid, 1) > 1e-12) or np.any(w.h(grid) <= 0):
        raise ParameterError("weight blend is not positive and decreasing; lower lam or raise z0")
    return w


# -- 2D quadrature ------------------------------------------------------------

@dataclass
class Quadrature2D:
    """Midpoint rule on a uniform grid over ``{H < z_max}``.

    Cells cut by the cap level get the fraction of their area below it,
    estimated from the local gradient, which keeps the rule second order.
    """

    points: np.ndarray
    weights: np.ndarray
    z: np.ndarray
    k: np.ndarray

    @classmethod
    def build(cls, H: HamiltonianField, atlas: RegionAtlas, resolution: int = 600):
        r = H.r_max
        h = 2 * r / resolution
        c = -r + (np.arange(resolution) + 0.5) * h
        X, Y = np.meshgrid(c, c, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], -1)
        zc = H.h(pts)
        zmax = atlas.graph.z_max
        g = H.grad(pts)
        gn = np.maximum(np.hypot(g[:, 0], g[:, 1]), 1e-300)
        spread = h * (np.abs(g[:, 0]) + np.abs(g[:, 1])) / gn
        frac = np.clip(0.5 + (zmax - zc) / gn / spread, 0.0, 1.0)
        keep = frac > 0
        pts, frac = pts[keep], frac[keep]
        above = H.h(pts) >= zmax
        z = np.empty(len(pts))
        k = np.empty(len(pts), dtype=np.int64)
        z[~above], k[~above], _ = project_many(atlas, H, pts[~above])
        # cells centred above the cap still reach below it; only the unbounded edge touches the cap
        g_ = atlas.graph
        z[above] = H.h(pts[above])
        k[above] = g_.incident(g_.infinity.id)[0][0]
        ok = k >= 0
        return cls(pts[ok], frac[ok] * h * h, z[ok], k[ok])

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))


# -- operators ----------------------------------------------------------------

def average(tables: CoefficientTables, u, z: float, k: int) -> float:
    """``u^(z, k) = (1/T) closed-integral u / |grad H| dl`` on a freshly extracted curve."""
    H = tables.H
    c = extract_level_curve(H, tables.atlas, z, k, tables.params.get("resolution", 200),
                            densify=tables.params.get("densify", 0.1))
    q = c.trapezoid_weights() / H.grad_norm(c.points)
    return float(np.sum(q * u(c.points)) / q.sum())


def lift(f: GraphFunction, x, *, atlas: RegionAtlas | None = None, H: HamiltonianField | None = None):
    """``f^v(x) = f(Pi(x))``; NaN above the cap."""
    tables = f.tables
    atlas = atlas or tables.atlas
    H = H or tables.H
    z, k, _ = project_many(atlas, H, x)
    return f(z, k)


def hbar_inner(tables: CoefficientTables, weight: Weight, f: GraphFunction, g: GraphFunction) -> float:
    """``sum_k int f g gamma T_k dz``."""
    total = 0.0
    for t in tables.edges:
        zn = t.znodes
        F = f.node_values(t.k) * g.node_values(t.k) * weight(zn)
        if not np.all(np.isfinite(F)):
            raise TableError(f"non-finite integrand on edge {t.k}")
        total += float(np.sum(t.node_weights() * F))
    return total


def hbar_norm(tables, weight, f) -> float:
    return float(np.sqrt(hbar_inner(tables, weight, f, f)))


def _field_values(quad: Quadrature2D, u):
    if isinstance(u, GraphFunction):
        return u(quad.z, quad.k)
    if callable(u):
        return u(quad.points)
    return np.asarray(u)


def hgamma_inner(quad: Quadrature2D, weight: Weight, u, v) -> float:
    """``int u v gamma(H) dx``; ``u, v`` are callables, arrays on the quadrature
    points, or graph functions (which are lifted)."""
    a = _field_values(quad, u)
    b = _field_values(quad, v)
    vals = a * b * weight.h(quad.z)
    if not np.all(np.isfinite(vals)):
        raise TableError("non-finite integrand in H_gamma quadrature")
    return quad.integrate(vals)


def hgamma_norm(quad, weight, u) -> float:
    return float(np.sqrt(hgamma_inner(quad, weight, u, u)))


# -- cross-checks -------------------------------------------------------------

def area_derivative_check(tables: CoefficientTables, rel_step: float = 0.25) -> list[dict]:
    """Compare ``T`` with a central difference of the enclosed area at every core sample.

    The step is ``rel_step`` times the smaller of the core spacing and the
    distance to the nearest saddle endpoint, so the difference stays clear of
    the logarithmic peak.
    """
    H, g = tables.H, tables.graph
    res, dens = tables.params["resolution"], tables.params["densify"]
    out = []
    for t in tables.edges:
        e = g.edges[t.k]
        zs = [g.vertices[v].z for v in (e.v_lo, e.v_hi) if g.vertices[v].kind is VertexKind.SADDLE]
        for z, T, core in zip(t.z, t.T, t.core):
            if not core:
                continue
            dist = min([abs(z - s) for s in zs] + [z - e.z_lo, e.z_hi - z, t.dz_core])
            d = rel_step * dist
            Sp = curvature_corrected_area(H, extract_level_curve(H, tables.atlas, z + d, t.k, res, densify=dens))
            Sm = curvature_corrected_area(H, extract_level_curve(H, tables.atlas, z - d, t.k, res, densify=dens))
            dS = (Sp - Sm) / (2 * d)
            out.append({"edge": t.k, "z": float(z), "T": float(T), "dSdz": float(dS),
                        "rel_err": float(abs(T - dS) / T)})
    return out


def divergence_check(tables: CoefficientTables) -> list[dict]:
    """Compare ``alpha`` with the integral of the Laplacian over the enclosed region."""
    H, g = tables.H, tables.graph
    res, dens = tables.params["resolution"], tables.params["densify"]
    out = []
    for t in tables.edges:
        for z, al, core in zip(t.z, t.alpha, t.core):
            if not core:
                continue
            c = extract_level_curve(H, tables.atlas, float(z), t.k, res, densify=dens)
            lap = abs(enclosed_integral(c.points, H.laplacian))
            out.append({"edge": t.k, "z": float(z), "alpha": float(al), "lap_integral": float(lap),
                        "rel_err": float(abs(al - lap) / al)})
    return out
