"""
Reeb graph of a planar Hamiltonian and the identification map onto it.

The graph is built from a uniform pixel grid.  Thin bands around every saddle
level are removed, the remaining pixels are flood filled, and every connected
region becomes one edge.  Band components without a saddle only cut a regular
level component; the two regions on either side are merged back together.

Atlas label convention (``RegionAtlas.labels``)::

    k >= 0      pixel belongs to edge k
    -1          pixel lies at or above the energy cap z_max
    -2 - v      pixel lies in the critical band of saddle vertex v
"""
from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import BandOverlapError, DomainError, ParameterError, PreconditionError
from .hamiltonian import CriticalKind, CriticalPoint, HamiltonianField

__all__ = [
    "VertexKind",
    "Vertex",
    "Edge",
    "ReebGraph",
    "GraphPoint",
    "RegionAtlas",
    "build_reeb",
    "project",
    "project_many",
    "graph_distance",
]

OUTSIDE = -1


class VertexKind(str, enum.Enum):
    EXTREMUM = "Extremum"
    SADDLE = "Saddle"
    INFINITY = "Infinity"


@dataclass(frozen=True)
class Vertex:
    id: int
    kind: VertexKind
    z: float
    critical_index: int | None = None
    location: tuple | None = None

    def to_dict(self):
        return {"id": self.id, "kind": self.kind.value, "z": self.z,
                "critical_index": self.critical_index,
                "location": list(self.location) if self.location is not None else None}


@dataclass(frozen=True)
class Edge:
    """Edge ``I_k`` with its energy range and endpoint vertices.

    ``sign_lo``/``sign_hi`` are the incidence signs: +1 if H increases along the
    edge toward that vertex.  ``enclosed`` lists the critical points inside any
    closed level component of the edge (the side of the tree away from infinity).
    """

    id: int
    z_lo: float
    z_hi: float
    v_lo: int
    v_hi: int
    enclosed: tuple = ()
    sign_lo: int = -1
    sign_hi: int = 1

    @property
    def length(self):
        return self.z_hi - self.z_lo

    def to_dict(self):
        return {"id": self.id, "z_lo": self.z_lo, "z_hi": self.z_hi,
                "vertices": [self.v_lo, self.v_hi], "signs": [self.sign_lo, self.sign_hi],
                "enclosed": list(self.enclosed)}


@dataclass(frozen=True)
class GraphPoint:
    z: float
    k: int
    vertex: int | None = None
    snapped: bool = False

    def to_dict(self):
        return {"z": self.z, "k": self.k, "vertex": self.vertex, "snapped": self.snapped}


@dataclass(frozen=True)
class ReebGraph:
    vertices: tuple
    edges: tuple
    z_max: float
    critical_points: tuple = ()

    def incident(self, v: int) -> list[tuple[int, int]]:
        """Edges touching vertex ``v`` as ``(edge id, incidence sign)`` pairs."""
        out = []
        for e in self.edges:
            if e.v_lo == v:
                out.append((e.id, e.sign_lo))
            if e.v_hi == v:
                out.append((e.id, e.sign_hi))
        return out

    def saddles(self):
        return [v for v in self.vertices if v.kind is VertexKind.SADDLE]

    @property
    def infinity(self) -> Vertex:
        return next(v for v in self.vertices if v.kind is VertexKind.INFINITY)

    def edge_of_point(self, p: GraphPoint) -> Edge:
        return self.edges[p.k]

    def to_dict(self):
        return {"vertices": [v.to_dict() for v in self.vertices],
                "edges": [e.to_dict() for e in self.edges],
                "z_max": self.z_max,
                "critical_points": [c.to_dict() for c in self.critical_points]}

    def to_json(self, path=None, indent=2):
        s = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(s)
        return s

    @classmethod
    def from_dict(cls, d):
        verts = tuple(Vertex(v["id"], VertexKind(v["kind"]), v["z"], v["critical_index"],
                             tuple(v["location"]) if v["location"] is not None else None)
                      for v in d["vertices"])
        edges = tuple(Edge(e["id"], e["z_lo"], e["z_hi"], e["vertices"][0], e["vertices"][1],
                           tuple(e["enclosed"]), e["signs"][0], e["signs"][1])
                      for e in d["edges"])
        cps = tuple(CriticalPoint(tuple(c["location"]), c["value"], CriticalKind(c["kind"]),
                                  c["hess_det"], tuple(c["eigenvalues"]))
                    for c in d.get("critical_points", []))
        return cls(verts, edges, d["z_max"], cps)


@dataclass(frozen=True)
class RegionAtlas:
    """Pixel grid over ``[-r_max, r_max]^2`` labelling every pixel by edge."""

    r_max: float
    resolution: int
    labels: np.ndarray
    graph: ReebGraph | None = None
    hamiltonian: HamiltonianField | None = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return 2 * self.r_max / self.resolution

    def centers(self) -> np.ndarray:
        c = -self.r_max + (np.arange(self.resolution) + 0.5) * self.h
        X, Y = np.meshgrid(c, c, indexing="ij")
        return np.stack([X, Y], -1)

    def pixel_index(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.floor((x + self.r_max) / self.h).astype(np.int64)
        return np.clip(idx, 0, self.resolution - 1)

    def label_at(self, x):
        idx = self.pixel_index(x)
        return self.labels[idx[..., 0], idx[..., 1]]

    def save(self, path):
        header = json.dumps({"r_max": self.r_max, "resolution": self.resolution,
                             "dtype": "int32", "order": "C",
                             "graph": self.graph.to_dict() if self.graph else None}).encode()
        body = zlib.compress(np.ascontiguousarray(self.labels, dtype=np.int32).tobytes(), 6)
        with open(path, "wb") as fh:
            fh.write(b"RBATLAS1")
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(body)

    @classmethod
    def load(cls, path, hamiltonian=None):
        with open(path, "rb") as fh:
            if fh.read(8) != b"RBATLAS1":
                raise ValueError("not an atlas file")
            (n,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(n))
            body = zlib.decompress(fh.read())
        res = header["resolution"]
        labels = np.frombuffer(body, dtype=np.int32).reshape(res, res).copy()
        graph = ReebGraph.from_dict(header["graph"]) if header.get("graph") else None
        return cls(header["r_max"], res, labels, graph, hamiltonian)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


_FOUR = ndimage.generate_binary_structure(2, 1)


def build_reeb(H: HamiltonianField, critical_points, z_max: float, resolution: int = 400, *,
               band_factor: float = 4.0, band_floor: float = 1e-6):
    """Build the Reeb graph and region atlas of ``H`` below the cap ``z_max``.

    Parameters
    ----------
    H : HamiltonianField
    critical_points : list of CriticalPoint
        Output of :func:`find_critical_points`.
    z_max : float
        Energy cap; must exceed every critical value and stay below H on the
        domain boundary.
    resolution : int
        Pixels per side of the atlas grid.
    band_factor, band_floor : float
        Critical band half-width ``max(band_factor*h*|grad H|, band_floor)``.

    Returns
    -------
    (ReebGraph, RegionAtlas)

    Raises
    ------
    BandOverlapError
        If the grid cannot separate the regions around the saddles.
    """
    cps = list(critical_points)
    if cps and z_max <= max(p.value for p in cps):
        raise PreconditionError("z_max must exceed all critical values")
    n = resolution
    r = H.r_max
    h = 2 * r / n
    c = -r + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="ij")
    pts = np.stack([X, Y], -1)
    hv = H.h(pts)
    gn = H.grad_norm(pts)
    rim = np.concatenate([hv[0], hv[-1], hv[:, 0], hv[:, -1]])
    if rim.min() <= z_max:
        raise ParameterError(f"domain too small: min H on boundary {rim.min():.4g} <= z_max {z_max}")

    inside = hv < z_max
    saddle_idx = [i for i, p in enumerate(cps) if p.kind is CriticalKind.SADDLE]
    width = np.maximum(band_factor * h * gn, band_floor)
    band_owner = np.full(hv.shape, -1, dtype=np.int64)
    for i in saddle_idx:
        m = inside & (np.abs(hv - cps[i].value) < width)
        if np.any(m & (band_owner >= 0)):
            raise BandOverlapError("critical bands of two saddles overlap; use a finer grid")
        band_owner[m] = i
    band = band_owner >= 0
    free = inside & ~band

    region, nreg = ndimage.label(free, structure=_FOUR)
    uf = _UnionFind(nreg + 1)
    comps, ncomp = ndimage.label(band, structure=_FOUR)
    saddle_comp = {}
    for i in saddle_idx:
        pi = np.clip(np.floor((np.array(cps[i].location) + r) / h).astype(int), 0, n - 1)
        cid = comps[pi[0], pi[1]]
        if cid == 0:
            raise BandOverlapError(f"saddle {i} not inside its band; refine grid")
        if cid in saddle_comp:
            raise BandOverlapError("two saddles share one band component; refine grid")
        saddle_comp[cid] = i

    slices = ndimage.find_objects(comps)
    adjacent = {}
    for cid in range(1, ncomp + 1):
        sl = slices[cid - 1]
        sl = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in sl)
        m = comps[sl] == cid
        ring = ndimage.binary_dilation(m, structure=_FOUR) & ~m
        labs = set(np.unique(region[sl][ring]).tolist()) - {0}
        adjacent[cid] = labs
        if cid not in saddle_comp and len(labs) == 2:
            a, b = labs
            uf.union(a, b)

    root = np.array([uf.find(i) for i in range(nreg + 1)])
    merged = root[region]
    merged[~free] = 0
    roots = sorted(set(root[1:].tolist()))

    # endpoint bookkeeping per merged region: lists of (vertex key, role)
    lower: dict[int, list] = {q: [] for q in roots}
    upper: dict[int, list] = {q: [] for q in roots}
    for i, p in enumerate(cps):
        if p.kind is CriticalKind.SADDLE:
            continue
        pi = np.clip(np.floor((np.array(p.location) + r) / h).astype(int), 0, n - 1)
        q = merged[pi[0], pi[1]]
        if q == 0:
            raise BandOverlapError(f"extremum {i} falls inside a critical band; refine grid")
        (lower if p.kind is CriticalKind.MIN else upper)[q].append(("cp", i))

    for cid, i in saddle_comp.items():
        qs = sorted({root[lab] for lab in adjacent[cid]})
        if len(qs) != 3:
            raise BandOverlapError(
                f"saddle {i} touches {len(qs)} regions instead of 3; resolution too coarse")
        for q in qs:
            mean_h = float(np.median(hv[merged == q]))
            (lower if mean_h > cps[i].value else upper)[q].append(("cp", i))

    outer = ndimage.binary_dilation(~inside, structure=_FOUR) & free
    qs_inf = sorted(set(merged[outer].tolist()) - {0})
    if len(qs_inf) != 1:
        raise BandOverlapError(f"{len(qs_inf)} regions reach the cap; expected exactly one")
    upper[qs_inf[0]].append(("inf", None))

    for q in roots:
        if len(lower[q]) != 1 or len(upper[q]) != 1:
            raise BandOverlapError("could not resolve region endpoints; refine grid")

    # vertices: critical points in value order, then infinity
    verts = []
    cp_vid = {}
    for i, p in enumerate(cps):
        kind = VertexKind.SADDLE if p.kind is CriticalKind.SADDLE else VertexKind.EXTREMUM
        cp_vid[i] = len(verts)
        verts.append(Vertex(len(verts), kind, p.value, i, tuple(p.location)))
    inf_id = len(verts)
    verts.append(Vertex(inf_id, VertexKind.INFINITY, float(z_max)))

    def vid(key):
        return inf_id if key[0] == "inf" else cp_vid[key[1]]

    order = []
    for q in roots:
        lo, hi = vid(lower[q][0]), vid(upper[q][0])
        m = merged == q
        order.append(((verts[lo].z, verts[hi].z, float(X[m].mean()), float(Y[m].mean())), q, lo, hi))
    order.sort()
    q_to_edge = {}
    raw_edges = []
    for k, (_, q, lo, hi) in enumerate(order):
        q_to_edge[q] = k
        raw_edges.append((k, verts[lo].z, verts[hi].z, lo, hi))

    enclosed = _enclosed_sets(raw_edges, len(verts), inf_id, verts)
    edges = tuple(Edge(k, zlo, zhi, lo, hi, enclosed[k]) for k, zlo, zhi, lo, hi in raw_edges)
    graph = ReebGraph(tuple(verts), edges, float(z_max), tuple(cps))

    labels = np.full((n, n), OUTSIDE, dtype=np.int32)
    for q, k in q_to_edge.items():
        labels[merged == q] = k
    for cid in range(1, ncomp + 1):
        m = comps == cid
        if cid in saddle_comp:
            labels[m] = -2 - cp_vid[saddle_comp[cid]]
        else:
            qs = {root[lab] for lab in adjacent[cid]}
            if len(qs) == 1:
                labels[m] = q_to_edge[qs.pop()]
            else:
                raise BandOverlapError("unresolved band component; refine grid")

    _check_graph(graph)
    atlas = RegionAtlas(float(r), n, labels, graph, H)
    return graph, atlas


def _enclosed_sets(raw_edges, nv, inf_id, verts):
    adj = {v: [] for v in range(nv)}
    for k, _, _, lo, hi in raw_edges:
        adj[lo].append((hi, k))
        adj[hi].append((lo, k))
    out = {}
    for k, _, _, lo, hi in raw_edges:
        # flood the tree from each endpoint without crossing edge k
        sides = []
        for start in (lo, hi):
            seen, stack = {start}, [start]
            while stack:
                a = stack.pop()
                for b, kk in adj[a]:
                    if kk != k and b not in seen:
                        seen.add(b)
                        stack.append(b)
            sides.append(seen)
        inner = sides[0] if inf_id not in sides[0] else sides[1]
        out[k] = tuple(sorted(verts[v].critical_index for v in inner
                              if verts[v].critical_index is not None))
    return out


def _check_graph(g: ReebGraph):
    for v in g.vertices:
        deg = len(g.incident(v.id))
        want = 3 if v.kind is VertexKind.SADDLE else 1
        if deg != want:
            raise BandOverlapError(f"vertex {v.id} ({v.kind.value}) has {deg} edges, expected {want}")


# -- projection ---------------------------------------------------------------

def _snap_many(atlas: RegionAtlas, H: HamiltonianField, pts, vids, vertex_tol: float):
    """Resolve band points of saddle vertices ``vids`` to an incident edge.

    Returns ``(z, k, on_vertex)``.  Points whose level admits a single incident
    edge take it; otherwise the point is walked along the gradient, away from
    the saddle level, until it lands in a labelled region of a candidate edge.
    Close to the saddle the walk starts from a point pushed along the Hessian
    eigenvector of the matching sign.
    """
    g = atlas.graph
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    vids = np.asarray(vids, dtype=np.int64).reshape(-1)
    n, ne = len(pts), len(g.edges)
    z = H.h(pts)
    k = np.full(n, -1, dtype=np.int64)
    onv = np.zeros(n, dtype=bool)
    allowed = np.zeros((n, ne), dtype=bool)
    zv = np.array([g.vertices[v].z for v in vids]) if n else np.zeros(0)
    for v in np.unique(vids):
        m = vids == v
        for kk, _ in g.incident(int(v)):
            e = g.edges[kk]
            allowed[m, kk] = (e.z_lo <= z[m]) & (z[m] <= e.z_hi)
        on = m & (np.abs(z - zv) <= vertex_tol * (1 + np.abs(zv)))
        onv |= on
        k[on] = g.incident(int(v))[0][0]
        z[on] = zv[on]
    cnt = allowed.sum(axis=1)
    one = ~onv & (cnt == 1)
    k[one] = np.argmax(allowed[one], axis=1)
    amb = np.flatnonzero(~onv & (cnt > 1))
    if len(amb):
        h = atlas.h
        y = pts[amb].copy()
        s = np.where(z[amb] > zv[amb], 1.0, -1.0)
        for v in np.unique(vids[amb]):
            vert = g.vertices[int(v)]
            xs = np.array(vert.location)
            w, V = np.linalg.eigh(H.hessian(xs))
            m = (vids[amb] == v) & (np.linalg.norm(y - xs, axis=1) < 6 * h)
            if not np.any(m):
                continue
            d = np.where((s[m] > 0)[:, None], V[:, 1], V[:, 0])
            side = np.sign(np.sum((y[m] - xs) * d, axis=1))
            side[side == 0] = 1.0
            y[m] = xs + 6 * h * d * side[:, None]
        live = np.ones(len(amb), dtype=bool)
        res = np.full(len(amb), -1, dtype=np.int64)
        for _ in range(400):
            idx = np.flatnonzero(live)
            if len(idx) == 0:
                break
            lab = atlas.label_at(y[idx]).astype(np.int64)
            hit = (lab >= 0) & allowed[amb[idx], np.maximum(lab, 0)]
            res[idx[hit]] = lab[hit]
            live[idx[hit]] = False
            idx = idx[~hit]
            gr = H.grad(y[idx])
            nrm = np.linalg.norm(gr, axis=1)
            stuck = (nrm == 0) | ~H.in_domain(y[idx])
            live[idx[stuck]] = False
            idx, gr, nrm = idx[~stuck], gr[~stuck], nrm[~stuck]
            y[idx] += (s[idx] * 0.5 * h / nrm)[:, None] * gr
        left = res < 0
        res[left] = np.argmax(allowed[amb[left]], axis=1)
        k[amb] = res
    return z, k, onv


def _snap(atlas: RegionAtlas, H: HamiltonianField, x, v: int, vertex_tol: float) -> GraphPoint:
    z, k, onv = _snap_many(atlas, H, np.asarray(x, float)[None], [v], vertex_tol)
    return GraphPoint(float(z[0]), int(k[0]), v if onv[0] else None, True)


def project(atlas: RegionAtlas, H: HamiltonianField, x, *, vertex_tol: float = 1e-9) -> GraphPoint:
    """Identification map ``x -> (H(x), k(x))``.

    Points inside a saddle band are snapped to the incident edge reached by
    following the gradient away from the saddle level; points on the saddle
    level itself are returned as the vertex (``vertex`` set, any incident edge).
    """
    x = np.asarray(x, dtype=float)
    if not H.in_domain(x):
        raise DomainError("point outside the atlas domain")
    z = float(H.h(x))
    if z >= atlas.graph.z_max:
        raise DomainError(f"H(x) = {z:.4g} is above the cap z_max")
    lab = int(atlas.label_at(x))
    if lab >= 0:
        return GraphPoint(z, lab)
    if lab == OUTSIDE:
        # pixel center above the cap while x is below it: the unbounded edge
        return GraphPoint(z, atlas.graph.incident(atlas.graph.infinity.id)[0][0], None, True)
    return _snap(atlas, H, x, -2 - lab, vertex_tol)


def project_many(atlas: RegionAtlas, H: HamiltonianField, xs, *, vertex_tol: float = 1e-9):
    """Vectorized :func:`project`.  Returns ``(z, k, on_vertex)`` arrays; ``k = -1`` above the cap."""
    xs = np.asarray(xs, dtype=float)
    flat = xs.reshape(-1, 2)
    z = H.h(flat)
    k = atlas.label_at(flat).astype(np.int64)
    onv = np.zeros(len(flat), dtype=bool)
    k[z >= atlas.graph.z_max] = OUTSIDE
    inf_edge = atlas.graph.incident(atlas.graph.infinity.id)[0][0]
    k[(k == OUTSIDE) & (z < atlas.graph.z_max)] = inf_edge
    band = np.flatnonzero(k <= -2)
    if len(band):
        zb, kb, ob = _snap_many(atlas, H, flat[band], -2 - k[band], vertex_tol)
        z[band], k[band], onv[band] = zb, kb, ob
    shape = xs.shape[:-1]
    return z.reshape(shape), k.reshape(shape), onv.reshape(shape)


def _vertex_distances(g: ReebGraph):
    nv = len(g.vertices)
    rows, cols, w = [], [], []
    for e in g.edges:
        rows += [e.v_lo, e.v_hi]
        cols += [e.v_hi, e.v_lo]
        w += [e.length, e.length]
    m = csr_matrix((w, (rows, cols)), shape=(nv, nv))
    return shortest_path(m, directed=False)


def graph_distance(g: ReebGraph, p: GraphPoint, q: GraphPoint) -> float:
    """Path-length distance on the graph, energy differences summed along edges."""
    D = _vertex_distances(g)
    ep, eq = g.edges[p.k], g.edges[q.k]
    best = abs(p.z - q.z) if p.k == q.k else np.inf
    for a, za in ((ep.v_lo, ep.z_lo), (ep.v_hi, ep.z_hi)):
        for b, zb in ((eq.v_lo, eq.z_lo), (eq.v_hi, eq.z_hi)):
            best = min(best, abs(p.z - za) + D[a, b] + abs(q.z - zb))
    return float(best)
