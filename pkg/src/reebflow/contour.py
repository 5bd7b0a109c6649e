"""
Level curve extraction and line integrals over them.

A level curve ``C_k(z)`` is found by marching squares on a local grid, its
vertices are moved onto ``H = z`` by a safeguarded Newton solve along the grid
edge they sit on, and segments are bisected until every chord is short
compared with the local scale ``|grad H| / |D^2 H|``.  The last step matters
next to saddles, where the curve bends sharply and ``1/|grad H|`` peaks.

Grids are anchored so that the nearest saddle endpoint of the edge sits on a
grid node.  Together with the connectivity rule picked from the side of the
saddle level this keeps marching squares on the right topology arbitrarily
close to the saddle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.measure import find_contours

from .errors import NearSingularError, SingularIntegrandError, TableError
from .hamiltonian import HamiltonianField
from .reeb import RegionAtlas, VertexKind

__all__ = [
    "LevelCurve",
    "extract_level_curve",
    "line_integral",
    "compute_T",
    "compute_alpha",
    "compute_area",
    "enclosed_integral",
    "points_in_polygon",
]

GRAD_FLOOR = 1e-9


@dataclass(frozen=True)
class LevelCurve:
    """Closed polyline on ``H = z`` (first vertex not repeated)."""

    points: np.ndarray
    z: float
    k: int
    closed: bool = True

    def __len__(self):
        return len(self.points)

    def segment_lengths(self):
        d = np.roll(self.points, -1, axis=0) - self.points
        return np.hypot(d[:, 0], d[:, 1])

    def length(self):
        return float(self.segment_lengths().sum())

    def trapezoid_weights(self):
        """Weights ``w_i`` with ``sum w_i g(P_i)`` the trapezoid rule for ``int g dl``."""
        l = self.segment_lengths()
        return 0.5 * (l + np.roll(l, 1))


# -- geometry helpers ---------------------------------------------------------

def points_in_polygon(pts, poly):
    """Even-odd ray casting; ``pts`` (M, 2), ``poly`` (N, 2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    a = poly[None, :, :]
    b = np.roll(poly, -1, axis=0)[None, :, :]
    ya, yb = a[..., 1], b[..., 1]
    cross = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a[..., 0] + (y - ya) * (b[..., 0] - a[..., 0]) / (yb - ya)
    hit = cross & (x < xint)
    return (hit.sum(axis=1) % 2) == 1


def _shoelace(p):
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


# degree-5 rule on the reference triangle (7 points)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_TRI_W = np.array([0.225, *[0.132394152788506] * 3, *[0.125939180544827] * 3])


def enclosed_integral(poly, f, center=None):
    """Integral of ``f`` over the region bounded by a simple polygon.

    Signed fan triangles from ``center`` with a degree-5 Gauss rule; signs make
    the fan valid for non-convex polygons.
    """
    c = np.mean(poly, axis=0) if center is None else np.asarray(center, float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    area = 0.5 * ((a[:, 0] - c[0]) * (b[:, 1] - c[1]) - (b[:, 0] - c[0]) * (a[:, 1] - c[1]))
    pts = (_TRI_BARY[:, 0, None, None] * c[None, None, :]
           + _TRI_BARY[:, 1, None, None] * a[None]
           + _TRI_BARY[:, 2, None, None] * b[None])
    vals = f(pts)
    total = float(np.sum(_TRI_W[:, None] * vals * area[None, :]))
    return total if _shoelace(poly) >= 0 else -total


# -- extraction ---------------------------------------------------------------

def _refine_on_edges(H, z, pts_idx, x0, y0, hg):
    """Move marching-squares vertices onto ``H = z`` along their grid edge."""
    r, c = pts_idx[:, 0], pts_idx[:, 1]
    on_row = np.abs(r - np.round(r)) < 1e-12
    # direction of the grid edge: along x if the row index is fractional
    lo = np.where(on_row[:, None], np.stack([x0 + np.round(r) * hg, y0 + np.floor(c) * hg], -1),
                  np.stack([x0 + np.floor(r) * hg, y0 + np.round(c) * hg], -1))
    d = np.where(on_row[:, None], np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    t = np.where(on_row, c - np.floor(c), r - np.floor(r)) * hg
    a = np.zeros_like(t)
    b = np.full_like(t, hg)
    fa = H.h(lo) - z
    for _ in range(12):
        p = lo + t[:, None] * d
        f = H.h(p) - z
        g = np.sum(H.grad(p) * d, axis=-1)
        # keep a bracket so the iteration cannot leave the edge
        left = np.sign(f) == np.sign(fa)
        a = np.where(left, t, a)
        b = np.where(left, b, t)
        fa = np.where(left, f, fa)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - f / g
        bad = ~np.isfinite(tn) | (tn <= a) | (tn >= b)
        t = np.where(bad, 0.5 * (a + b), tn)
    p = lo + t[:, None] * d
    resid = np.abs(H.h(p) - z)
    slow = resid > 1e-10 * (1 + abs(z))
    if np.any(slow):
        aa, bb = a[slow], b[slow]
        lo_s, d_s = lo[slow], d[slow]
        fa_s = H.h(lo_s + aa[:, None] * d_s) - z
        for _ in range(60):
            m = 0.5 * (aa + bb)
            fm = H.h(lo_s + m[:, None] * d_s) - z
            left = np.sign(fm) == np.sign(fa_s)
            aa = np.where(left, m, aa)
            fa_s = np.where(left, fm, fa_s)
            bb = np.where(left, bb, m)
        p[slow] = lo_s + (0.5 * (aa + bb))[:, None] * d_s
    return p


def _project_to_level(H, p, z, iters=8):
    for _ in range(iters):
        g = H.grad(p)
        g2 = np.sum(g * g, axis=-1)
        if np.any(g2 < GRAD_FLOOR ** 2):
            raise SingularIntegrandError("|grad H| vanished while projecting onto the level set")
        p = p - ((H.h(p) - z) / g2)[:, None] * g
    return p


def _densify(H, pts, z, factor, max_rounds=40, max_points=200000):
    for _ in range(max_rounds):
        nxt = np.roll(pts, -1, axis=0)
        mid = 0.5 * (pts + nxt)
        chord = np.hypot(*(nxt - pts).T)
        gn = H.grad_norm(mid)
        hn = np.linalg.norm(H.hessian(mid), ord=2, axis=(-2, -1))
        scale = gn / np.maximum(hn, 1e-300)
        split = chord > factor * scale
        if not np.any(split):
            return pts
        if len(pts) + split.sum() > max_points:
            raise TableError("level curve refinement exceeded the point budget")
        new = _project_to_level(H, mid[split], z)
        idx = np.flatnonzero(split)
        pts = np.insert(pts, idx + 1, new, axis=0)
    return pts


def _box_grid(x_lo, x_hi, anchor, hg):
    """Grid axis with spacing ``hg`` covering ``[x_lo, x_hi]`` and containing ``anchor``."""
    i0 = np.floor((x_lo - anchor) / hg)
    i1 = np.ceil((x_hi - anchor) / hg)
    return anchor + np.arange(i0, i1 + 1) * hg


_BOX_CACHE: dict = {}


def _edge_box(atlas: RegionAtlas, k: int):
    key = (id(atlas), k)
    if key in _BOX_CACHE and _BOX_CACHE[key][0] is atlas:
        return _BOX_CACHE[key][1]
    g = atlas.graph
    e = g.edges[k]
    codes = [k] + [-2 - v for v in (e.v_lo, e.v_hi) if g.vertices[v].kind is VertexKind.SADDLE]
    mask = np.isin(atlas.labels, codes)
    idx = np.argwhere(mask)
    lo = idx.min(axis=0) - 3
    hi = idx.max(axis=0) + 4
    h = atlas.h
    box = (np.clip(-atlas.r_max + lo * h, -atlas.r_max, atlas.r_max),
           np.clip(-atlas.r_max + hi * h, -atlas.r_max, atlas.r_max))
    _BOX_CACHE[key] = (atlas, box)
    return box


def _anchor(atlas: RegionAtlas, k: int, z: float):
    """Nearest saddle endpoint in z, else the extremum endpoint."""
    g = atlas.graph
    e = g.edges[k]
    ends = [g.vertices[e.v_lo], g.vertices[e.v_hi]]
    saddles = [v for v in ends if v.kind is VertexKind.SADDLE]
    if saddles:
        v = min(saddles, key=lambda v: abs(v.z - z))
        return v, True
    ext = [v for v in ends if v.kind is VertexKind.EXTREMUM]
    return (ext[0] if ext else None), False


def _candidates(H, z, x_axis, y_axis, connect):
    X, Y = np.meshgrid(x_axis, y_axis, indexing="ij")
    grid = H.h(np.stack([X, Y], -1))
    hg = x_axis[1] - x_axis[0]
    out = []
    for c in find_contours(grid, z, fully_connected=connect):
        if len(c) < 4 or np.max(np.abs(c[0] - c[-1])) > 1e-9:
            continue
        out.append((c[:-1], x_axis[0], y_axis[0], hg))
    return out


def _signature(atlas: RegionAtlas, poly):
    cps = atlas.graph.critical_points
    if not cps:
        return ()
    locs = np.array([c.location for c in cps])
    inside = points_in_polygon(locs, poly)
    return tuple(int(i) for i in np.flatnonzero(inside))


def extract_level_curve(H: HamiltonianField, atlas: RegionAtlas, z: float, k: int,
                        resolution: int = 200, *, densify: float = 0.1,
                        band_tol: float = 1e-9) -> LevelCurve:
    """Closed component ``C_k(z)`` of the level set ``H = z`` on edge ``k``.

    Parameters
    ----------
    resolution : int
        Nodes per side of the local marching-squares grid.
    densify : float
        Maximum chord length in units of ``|grad H| / |D^2 H|``.
    band_tol : float
        Relative distance to a saddle value below which the level is refused.

    Raises
    ------
    NearSingularError
        If ``z`` coincides with a saddle value to within ``band_tol``; use the
        saddle log fit there instead.
    """
    g = atlas.graph
    e = g.edges[k]
    if not (e.z_lo < z < e.z_hi):
        raise ValueError(f"z={z} not inside edge {k} interval ({e.z_lo}, {e.z_hi})")
    for v in (g.vertices[e.v_lo], g.vertices[e.v_hi]):
        if v.kind is VertexKind.SADDLE and abs(z - v.z) <= band_tol * (1 + abs(v.z)):
            raise NearSingularError(
                f"level {z} is inside the critical band of saddle {v.id}; use the log fit")
    anchor, is_saddle = _anchor(atlas, k, z)
    connect = "low"
    if is_saddle:
        connect = "high" if z < anchor.z else "low"
    a = np.array(anchor.location) if anchor is not None else np.zeros(2)
    lo, hi = _edge_box(atlas, k)
    boxes = []
    # small loops around an extremum get their own tight grid
    ends = [g.vertices[e.v_lo], g.vertices[e.v_hi]]
    ext = [v for v in ends if v.kind is VertexKind.EXTREMUM]
    if ext:
        v = ext[0]
        cp = g.critical_points[v.critical_index]
        lam = np.min(np.abs(cp.eigenvalues))
        rad = 3.0 * np.sqrt(2 * abs(z - v.z) / lam)
        c = np.array(v.location)
        if np.all(2 * rad < 0.5 * (hi - lo)):
            anc = a if is_saddle else c
            boxes.append((np.maximum(c - rad, lo), np.minimum(c + rad, hi), anc, max(64, resolution // 2)))
    boxes.append((lo, hi, a, resolution))
    target = set(e.enclosed)
    for blo, bhi, anc, res in boxes:
        hg = float(np.max(bhi - blo)) / res
        xs = _box_grid(blo[0], bhi[0], anc[0], hg)
        ys = _box_grid(blo[1], bhi[1], anc[1], hg)
        best = None
        for cidx, x0, y0, hgrid in _candidates(H, z, xs, ys, connect):
            raw = np.stack([x0 + cidx[:, 0] * hgrid, y0 + cidx[:, 1] * hgrid], -1)
            sig = set(_signature(atlas, raw))
            if sig == target:
                best = (cidx, x0, y0, hgrid)
                break
        if best is None:
            continue
        cidx, x0, y0, hgrid = best
        pts = _refine_on_edges(H, z, cidx, x0, y0, hgrid)
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 1e-14, axis=1)
        pts = pts[keep]
        pts = _densify(H, pts, z, densify)
        if set(_signature(atlas, pts)) != target:
            raise NearSingularError(f"refined curve at z={z} changed topology; level too close to a saddle")
        if _shoelace(pts) < 0:
            pts = pts[::-1].copy()
        return LevelCurve(pts, float(z), int(k), True)
    raise NearSingularError(f"no closed level component found for edge {k} at z={z}")


# -- integrals ----------------------------------------------------------------

def line_integral(curve: LevelCurve, integrand, H: HamiltonianField | None = None) -> float:
    """Trapezoid rule for ``closed-integral integrand(x) dl`` along the polyline."""
    vals = integrand(curve.points)
    return float(np.sum(curve.trapezoid_weights() * vals))


def _inv_grad(H, pts):
    gn = H.grad_norm(pts)
    if np.any(gn < GRAD_FLOOR):
        raise SingularIntegrandError("|grad H| below 1e-9 on the level curve")
    return 1.0 / gn


def compute_T(H: HamiltonianField, curve: LevelCurve) -> float:
    """Period ``T = closed-integral dl / |grad H|``."""
    return line_integral(curve, lambda p: _inv_grad(H, p))


def compute_alpha(H: HamiltonianField, curve: LevelCurve) -> float:
    """``alpha = closed-integral |grad H| dl``."""
    return line_integral(curve, H.grad_norm)


def compute_area(curve: LevelCurve) -> float:
    """Area enclosed by the curve (shoelace)."""
    return abs(_shoelace(curve.points))
