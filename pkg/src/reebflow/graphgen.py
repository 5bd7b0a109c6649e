"""
Finite-volume generator of the graph diffusion, its semigroup and path sampler.

Nodes sit at every vertex and on a uniform grid inside every edge.  Node ``i``
owns the cell between the midpoints to its neighbours; a saddle node owns one
half cell on each incident edge.  The flux between neighbours is
``w_ij (f_j - f_i)`` with ``w_ij = alpha(face) / (2 gap)`` and the rate matrix
is ``Q_ij = w_ij / m_i`` with ``m_i = int_cell T dz``.  Because ``w`` is
symmetric, ``m^T Q = 0`` and every row sums to zero.  The saddle row is the
signed, alpha-weighted flux balance, so the gluing condition at the vertex is
part of the discrete operator.  Extremum and cap nodes get no outer flux.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .coeffs import CoefficientTables, GraphFunction, Weight
from .errors import DivergenceError, NumericalError, ParameterError, TableError
from .reeb import GraphPoint, ReebGraph, VertexKind
from .rng import path_keys, path_uniforms

__all__ = [
    "GeneratorMatrix",
    "discretize",
    "apply_semigroup",
    "solve_reaction",
    "CTMCResult",
    "sample_paths",
    "sample_path",
    "occupancy",
]


@dataclass
class GeneratorMatrix:
    """Sparse rate matrix with node metadata.

    Attributes
    ----------
    Q : csr_matrix
        Rates; ``Q @ f`` approximates the generator applied to ``f``.
    W : csr_matrix
        Symmetric face weights (off-diagonal).
    m : ndarray
        Cell masses ``int T dz``.
    z, edge, vertex : ndarray
        Node energy, owning edge (``-1`` for vertex nodes), vertex id (``-1`` for interior nodes).
    edge_nodes : list of ndarray
        Node indices along each edge in ascending ``z``, endpoint vertex nodes included.
    """

    Q: sp.csr_matrix
    W: sp.csr_matrix
    m: np.ndarray
    z: np.ndarray
    edge: np.ndarray
    vertex: np.ndarray
    edge_nodes: list
    graph: ReebGraph
    tables: CoefficientTables
    vertex_node: dict = field(default_factory=dict)
    h_target: float = 0.0

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def rates(self) -> np.ndarray:
        return -self.Q.diagonal()

    def stationary(self) -> np.ndarray:
        return self.m / self.m.sum()

    def node_of(self, p: GraphPoint) -> int:
        """Nearest node on the point's edge (the vertex node if ``p`` is a vertex)."""
        if p.vertex is not None and p.vertex in self.vertex_node:
            return self.vertex_node[p.vertex]
        idx = self.edge_nodes[p.k]
        return int(idx[np.argmin(np.abs(self.z[idx] - p.z))])

    def nodes_of(self, z, k) -> np.ndarray:
        z = np.asarray(z, float)
        k = np.asarray(k)
        out = np.empty(z.shape, dtype=np.int64)
        for kk in np.unique(k):
            msk = k == kk
            idx = self.edge_nodes[int(kk)]
            zz = self.z[idx]
            j = np.clip(np.searchsorted(zz, z[msk]), 1, len(zz) - 1)
            left = np.abs(z[msk] - zz[j - 1]) <= np.abs(zz[j] - z[msk])
            out[msk] = idx[np.where(left, j - 1, j)]
        return out

    # -- conversions between node vectors and graph functions ---------------
    def sample(self, fn, vertex_fn=None) -> np.ndarray:
        """Node vector from ``fn(z, k)``; vertex nodes use ``vertex_fn(v)`` or the
        mass-weighted mean of the incident edge limits."""
        f = np.empty(self.n)
        inner = self.edge >= 0
        for k in range(len(self.graph.edges)):
            msk = self.edge == k
            f[msk] = fn(self.z[msk], k)
        for v, i in self.vertex_node.items():
            if vertex_fn is not None:
                f[i] = vertex_fn(self.graph.vertices[v])
            else:
                f[i] = self._vertex_mean(v, fn)
        assert inner.any()
        return f

    def _vertex_mean(self, v, fn):
        zv = self.graph.vertices[v].z
        vals, ws = [], []
        for k, _ in self.graph.incident(v):
            vals.append(float(fn(np.array([zv]), k)[0]))
            ws.append(self._half_mass(v, k))
        ws = np.asarray(ws)
        return float(np.dot(vals, ws) / ws.sum())

    def _half_mass(self, v, k):
        idx = self.edge_nodes[k]
        zz = self.z[idx]
        t = self.tables[k]
        if idx[0] == self.vertex_node[v]:
            return t.T_integral(zz[0], 0.5 * (zz[0] + zz[1]))
        return t.T_integral(0.5 * (zz[-2] + zz[-1]), zz[-1])

    def from_graph_function(self, f: GraphFunction) -> np.ndarray:
        def vfn(vert):
            if vert.id in f.vertex_values:
                return f.vertex_values[vert.id]
            return self._vertex_mean(vert.id, lambda z, k: f(z, np.full(z.shape, k)))
        return self.sample(lambda z, k: f(z, np.full(z.shape, k)), vfn)

    def evaluate(self, values, z, k) -> np.ndarray:
        """Piecewise-linear interpolation of a node vector at graph points."""
        z = np.asarray(z, float)
        k = np.broadcast_to(np.asarray(k), z.shape)
        out = np.full(z.shape, np.nan)
        for kk in np.unique(k):
            if kk < 0:
                continue
            msk = k == kk
            idx = self.edge_nodes[int(kk)]
            out[msk] = np.interp(z[msk], self.z[idx], values[idx])
        return out

    def to_graph_function(self, values) -> GraphFunction:
        """Resample a node vector onto the coefficient-table grids."""
        vals = [self.evaluate(values, t.z, t.k) for t in self.tables.edges]
        vv = {v: float(values[i]) for v, i in self.vertex_node.items()}
        return GraphFunction(self.tables, vals, vv)

    def hbar_inner(self, weight: Weight, f, g) -> float:
        """Mass-lumped ``sum_i m_i gamma(z_i) f_i g_i``."""
        return float(np.sum(self.m * weight.h(self.z) * f * g))

    def hbar_norm(self, weight: Weight, f) -> float:
        return float(np.sqrt(self.hbar_inner(weight, f, f)))

    def gluing_residual(self, values) -> dict:
        """Signed alpha-weighted one-sided derivative sum at every saddle node."""
        out = {}
        for v, i in self.vertex_node.items():
            if self.graph.vertices[v].kind is not VertexKind.SADDLE:
                continue
            total, scale = 0.0, 0.0
            for k, sign in self.graph.incident(v):
                idx = self.edge_nodes[k]
                j = idx[1] if idx[0] == i else idx[-2]
                zf = 0.5 * (self.z[i] + self.z[j])
                a = float(self.tables[k].alpha_at(zf))
                d = (values[j] - values[i]) / abs(self.z[j] - self.z[i])
                # outward derivative from the vertex into edge k
                total += a * d
                scale += abs(a * d)
            out[v] = {"flux_sum": total, "scale": scale}
        return out

    def to_matrix_market(self, path):
        scipy.io.mmwrite(path, self.Q)

    def metadata(self):
        return [{"node": i, "z": float(self.z[i]), "edge": int(self.edge[i]),
                 "vertex": int(self.vertex[i]), "mass": float(self.m[i])} for i in range(self.n)]


def discretize(g: ReebGraph, tables: CoefficientTables, h_target: float) -> GeneratorMatrix:
    """Assemble the flux-form generator with interior spacing at most ``h_target``.

    Raises
    ------
    ParameterError
        ``h_target <= 0``.
    TableError
        Non-finite cell mass.
    """
    if not h_target > 0:
        raise ParameterError("h_target must be positive")
    zs, edge, vert = [], [], []
    vertex_node = {}
    for v in g.vertices:
        vertex_node[v.id] = len(zs)
        zs.append(v.z)
        edge.append(-1)
        vert.append(v.id)
    edge_nodes = []
    for e in g.edges:
        n = max(2, int(np.ceil(e.length / h_target)))
        inner = e.z_lo + e.length * np.arange(1, n) / n
        start = len(zs)
        zs.extend(inner.tolist())
        edge.extend([e.id] * len(inner))
        vert.extend([-1] * len(inner))
        idx = np.concatenate([[vertex_node[e.v_lo]], np.arange(start, start + len(inner)),
                              [vertex_node[e.v_hi]]]).astype(np.int64)
        edge_nodes.append(idx)
    zs = np.asarray(zs)
    N = len(zs)
    m = np.zeros(N)
    rows, cols, w = [], [], []
    for e in g.edges:
        idx = edge_nodes[e.id]
        zz = zs[idx]
        t = tables[e.id]
        faces = 0.5 * (zz[:-1] + zz[1:])
        bounds = np.concatenate([[zz[0]], faces, [zz[-1]]])
        for j, i in enumerate(idx):
            m[i] += t.T_integral(bounds[j], bounds[j + 1])
        a = t.alpha_at(faces)
        wij = a / (2.0 * np.diff(zz))
        rows += idx[:-1].tolist() + idx[1:].tolist()
        cols += idx[1:].tolist() + idx[:-1].tolist()
        w += wij.tolist() * 2
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise TableError("non-finite or non-positive cell mass")
    W = sp.csr_matrix((w, (rows, cols)), shape=(N, N))
    W.sum_duplicates()
    off = (sp.diags(1.0 / m) @ W).tocsr()
    off.sort_indices()
    # snap each row onto a binary grid 50 bits below its largest rate: a row
    # has at most a handful of entries, so its sum is then exact in any order
    # and the row sums of Q vanish identically (relative change ~1e-15)
    nnz = np.diff(off.indptr)
    rmax = np.maximum.reduceat(off.data, off.indptr[:-1][nnz > 0])
    quantum = np.ones(N)
    quantum[nnz > 0] = np.ldexp(1.0, np.frexp(rmax)[1] - 50)
    qd = np.repeat(quantum, nnz)
    off.data = np.round(off.data / qd) * qd
    Q = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    Q.sort_indices()
    return GeneratorMatrix(Q, W.tocsr(), m, zs, np.asarray(edge), np.asarray(vert),
                           edge_nodes, g, tables, vertex_node, float(h_target))


# -- semigroup ----------------------------------------------------------------

class _CN:
    """Cached Crank-Nicolson factorization for one step size."""

    def __init__(self, Q, dt, theta=0.5):
        I = sp.identity(Q.shape[0], format="csc")
        self.A = (I - theta * dt * Q).tocsc()
        self.B = (I + (1 - theta) * dt * Q).tocsr()
        self.lu = splu(self.A)

    def step(self, f):
        rhs = self.B @ f
        out = self.lu.solve(rhs)
        res = np.max(np.abs(self.A @ out - rhs)) / max(1.0, np.max(np.abs(rhs)))
        if not np.isfinite(res) or res > 1e-8:
            raise NumericalError(f"linear solve residual {res:.3g}")
        return out


def _stable_dt(G: GeneratorMatrix, dt, theta=0.5):
    """Largest sub-step not above ``dt`` keeping ``I + (1-theta) dt Q`` non-negative."""
    qmax = float(np.max(G.rates))
    if theta >= 1 or qmax == 0:
        return dt
    return min(dt, 1.0 / ((1 - theta) * qmax))


def _absorbing(G: GeneratorMatrix) -> sp.csr_matrix:
    """``Q`` with the cap node made absorbing (its row zeroed)."""
    D = np.ones(G.n)
    D[G.vertex_node[G.graph.infinity.id]] = 0.0
    return (sp.diags(D) @ G.Q).tocsr()


def apply_semigroup(G: GeneratorMatrix, f, t: float, dt: float | None = None, *,
                    theta: float = 0.5, max_principle: bool = True, times=None, absorb_cap: bool = False):
    """Theta-scheme approximation of ``exp(t Q) f``.

    Parameters
    ----------
    f : ndarray or GraphFunction
        Node vector, or a graph function sampled onto the nodes.
    dt : float, optional
        Requested step; reduced so that ``t`` is hit exactly and, if
        ``max_principle``, so that the explicit half keeps non-negative weights.
    times : sequence of float, optional
        Return the solution at each of these times (ascending, ``<= t``) instead.
    absorb_cap : bool
        Stop the process at the cap node instead of reflecting it there, which
        matches paths frozen on reaching ``z_max``.
    """
    if t < 0:
        raise ParameterError("t must be non-negative")
    f = G.from_graph_function(f) if isinstance(f, GraphFunction) else np.asarray(f, float).copy()
    grid = sorted(set([0.0] + [float(s) for s in (times or [])] + [float(t)]))
    if dt is None:
        dt = t / 100 if t > 0 else 1.0
    if max_principle:
        dt = _stable_dt(G, dt, theta)
    out = {0.0: f.copy()}
    solvers = {}
    cur = f
    for a, b in zip(grid[:-1], grid[1:]):
        n = max(1, int(np.ceil((b - a) / dt - 1e-12)))
        h = (b - a) / n
        key = round(h, 15)
        if key not in solvers:
            solvers[key] = _CN(_absorbing(G) if absorb_cap else G.Q, h, theta)
        for _ in range(n):
            cur = solvers[key].step(cur)
        out[b] = cur.copy()
    if times is not None:
        return [out[float(s)] for s in times]
    return cur


def solve_reaction(G: GeneratorMatrix, f0, b, t_end: float, dt: float, *, theta: float = 0.5,
                   max_principle: bool = True, blowup: float = 1e12):
    """Strang splitting for ``v' = Q v + b(v)``: half reaction, linear step, half reaction.

    The reaction half steps use one RK4 step of length ``dt/2`` per node.
    """
    v = G.from_graph_function(f0) if isinstance(f0, GraphFunction) else np.asarray(f0, float).copy()
    n = max(1, int(np.ceil(t_end / dt - 1e-12)))
    h = t_end / n
    sub = _stable_dt(G, h, theta) if max_principle else h
    ns = max(1, int(np.ceil(h / sub - 1e-12)))
    cn = _CN(G.Q, h / ns, theta)

    def react(u, tau):
        k1 = b(u)
        k2 = b(u + 0.5 * tau * k1)
        k3 = b(u + 0.5 * tau * k2)
        k4 = b(u + tau * k3)
        return u + tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    for _ in range(n):
        v = react(v, 0.5 * h)
        for _ in range(ns):
            v = cn.step(v)
        v = react(v, 0.5 * h)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > blowup:
            raise DivergenceError("graph reaction-diffusion solution blew up")
    return v


# -- path sampling ------------------------------------------------------------

@dataclass
class CTMCResult:
    """States of every path at the requested times."""

    times: np.ndarray
    states: np.ndarray          # (n_paths, n_times) node indices
    stopped: np.ndarray         # reached an absorbing cap node
    jumps: np.ndarray           # jump count per path
    occupancy: np.ndarray | None = None

    def values(self, f) -> np.ndarray:
        return np.asarray(f)[self.states]

    def to_csv(self, G: GeneratorMatrix, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["path", "t", "z", "k"])
        for p in range(self.states.shape[0]):
            for j, t in enumerate(self.times):
                i = self.states[p, j]
                wr.writerow([p, t, G.z[i], G.edge[i]])
        s = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(s)
        return s


def _jump_tables(G: GeneratorMatrix):
    W = G.Q.copy().tolil()
    W.setdiag(0)
    W = W.tocsr()
    W.eliminate_zeros()
    W.sort_indices()
    q = np.asarray(W.sum(axis=1)).ravel()
    cum = np.empty_like(W.data)
    for i in range(G.n):
        a, b = W.indptr[i], W.indptr[i + 1]
        if b > a:
            c = np.cumsum(W.data[a:b]) / q[i]
            c[-1] = 1.0
            cum[a:b] = c
    return W.indptr.astype(np.int64), W.indices.astype(np.int64), cum, q


def sample_paths(G: GeneratorMatrix, start, times, n_paths: int, seed: int, *,
                 absorb_cap: bool = False, track_occupancy: bool = False,
                 block: int = 64, max_iter: int = 10_000_000, backend: str | None = None) -> CTMCResult:
    """Gillespie simulation of the chain generated by ``Q``.

    Uniforms come from the counter-based stream keyed by ``(seed, jump index)``
    and are handed to the kernel in blocks, so the compiled and pure-Python
    kernels produce identical paths.

    Parameters
    ----------
    start : GraphPoint, int, or array of int
        Start node(s).
    times : sequence of float
        Ascending observation times.
    absorb_cap : bool
        Stop paths at the cap node instead of reflecting them.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ParameterError("observation times must be ascending and non-negative")
    indptr, indices, cum, q = _jump_tables(G)
    if isinstance(start, GraphPoint):
        s0 = np.full(n_paths, G.node_of(start), dtype=np.int64)
    else:
        s0 = np.broadcast_to(np.asarray(start, dtype=np.int64), (n_paths,)).copy()
    absorb = np.zeros(G.n, dtype=np.uint8)
    if absorb_cap:
        absorb[G.vertex_node[G.graph.infinity.id]] = 1
    state = s0.copy()
    clock = np.zeros(n_paths)
    nxt = np.zeros(n_paths, dtype=np.int64)
    done = np.zeros(n_paths, dtype=np.uint8)
    stopped = np.zeros(n_paths, dtype=np.uint8)
    jumps = np.zeros(n_paths, dtype=np.int64)
    record = np.full((n_paths, len(times)), -1, dtype=np.int64)
    occ = np.zeros((n_paths, G.n) if track_occupancy else (0, 0))
    kern = kernels.get(backend)
    keys = path_keys(seed, "ctmc", np.arange(n_paths))
    it = 0
    while True:
        live = np.flatnonzero(done == 0)
        if len(live) == 0:
            break
        if it >= max_iter:
            raise NumericalError("path sampler hit the iteration limit")
        # path p consumes numbers 2n, 2n+1 at its n-th jump
        ctr = jumps[live][None, :] + np.arange(block, dtype=np.int64)[:, None]
        E = -np.log1p(-path_uniforms(keys[live], 2 * ctr))
        U = path_uniforms(keys[live], 2 * ctr + 1)
        st, ck, nx, dn = state[live], clock[live], nxt[live], done[live]
        sp_, jm, rc = stopped[live], jumps[live], record[live]
        oc = occ[live] if track_occupancy else occ
        kern.ctmc_run(indptr, indices, cum, q, absorb, st, ck, nx, dn, sp_, jm, rc, times,
                      E, U, oc, int(track_occupancy))
        state[live], clock[live], nxt[live], done[live] = st, ck, nx, dn
        stopped[live], jumps[live], record[live] = sp_, jm, rc
        if track_occupancy:
            occ[live] = oc
        it += block
    return CTMCResult(times, record, stopped.astype(bool), jumps, occ if track_occupancy else None)


def sample_path(G: GeneratorMatrix, start, t_end: float, seed: int, n_obs: int = 101, **kw):
    """Single path observed on a uniform time grid; returns ``(t, z, k)`` arrays."""
    t = np.linspace(0, t_end, n_obs)
    r = sample_paths(G, start, t, 1, seed, **kw)
    s = r.states[0]
    return t, G.z[s], G.edge[s]


def occupancy(G: GeneratorMatrix, t_end: float, n_chains: int, seed: int, **kw):
    """Time-averaged occupation fractions of chains started from the stationary law.

    Returns ``(mean, std_error, total_jumps)``; for a stationary start the
    expected fraction of ``[0, t_end]`` spent in node ``i`` is ``m_i / sum m``.
    """
    pi = G.stationary()
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 99]))
    starts = rng.choice(G.n, size=n_chains, p=pi)
    r = sample_paths(G, starts, [t_end], n_chains, seed, track_occupancy=True, **kw)
    fracs = r.occupancy / t_end
    total = int(r.jumps.sum())
    return fracs.mean(0), fracs.std(0, ddof=1) / np.sqrt(n_chains), total
