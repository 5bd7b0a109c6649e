"""
Spatially homogeneous Gaussian noise with a finite atomic spectral measure.

An atom pair ``{lam, -lam}`` of weight ``c`` each contributes the real basis
fields ``sqrt(2c) cos<lam, x>`` and ``sqrt(2c) sin<lam, x>``; an atom at the
origin contributes the constant ``sqrt(c)``.  The graph noise is driven by the
level-set averages of these fields.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoefficientTables, GraphFunction, average
from .errors import ConfigError, SymmetryError
from .reeb import VertexKind
from .rng import normal_block

__all__ = [
    "SpectralMeasure",
    "NoiseBasis",
    "covariance",
    "build_basis",
    "sample_graph_increment",
    "graph_covariance",
    "empirical_covariance",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectralMeasure:
    """Atoms ``lambdas[l]`` in R^2 with weights ``weights[l] > 0``."""

    lambdas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lambdas, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if lam.shape != (len(w), 2):
            raise ConfigError("lambdas must have shape (n_atoms, 2) matching weights")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ConfigError("atom weights must be positive and finite")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_config(cls, atoms, symmetrize: bool = True) -> "SpectralMeasure":
        """From a list of ``{"lambda": [a, b], "weight": c}`` records."""
        try:
            lam = [a["lambda"] for a in atoms]
            w = [a["weight"] for a in atoms]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad spectral measure entry: {exc}") from None
        mu = cls(np.asarray(lam, dtype=float).reshape(-1, 2), np.asarray(w, dtype=float))
        return mu.symmetrized() if symmetrize else mu

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def _mirror_index(self, tol=1e-12):
        out = []
        for l, lam in enumerate(self.lambdas):
            d = np.abs(self.lambdas + lam).max(axis=1)
            j = np.flatnonzero(d <= tol)
            out.append(int(j[0]) if len(j) else -1)
        return out

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        mir = self._mirror_index(tol)
        return all(j >= 0 and abs(self.weights[j] - self.weights[l]) <= tol * max(1.0, self.weights[l])
                   for l, j in enumerate(mir))

    def check(self):
        if not self.is_symmetric():
            raise SymmetryError("spectral measure is not invariant under lambda -> -lambda")

    def symmetrized(self) -> "SpectralMeasure":
        """Average with the reflected measure (merging coincident atoms)."""
        if self.is_symmetric():
            return self
        log.info("spectral measure symmetrized under lambda -> -lambda")
        lam = np.concatenate([self.lambdas, -self.lambdas])
        w = np.concatenate([self.weights, self.weights]) / 2
        keys = np.round(lam, 12)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv.ravel(), w)
        reps = np.array([lam[np.flatnonzero(inv.ravel() == i)[0]] for i in range(len(uniq))])
        return SpectralMeasure(reps, merged)

    def to_config(self):
        return [{"lambda": lam.tolist(), "weight": float(c)} for lam, c in zip(self.lambdas, self.weights)]


def covariance(mu: SpectralMeasure, x) -> np.ndarray:
    """``Lambda(x) = sum_l c_l cos<lam_l, x>`` for ``x`` of shape ``(..., 2)``.

    Raises
    ------
    SymmetryError
        If the atom list is not closed under reflection.
    """
    mu.check()
    x = np.asarray(x, dtype=float)
    return np.cos(x @ mu.lambdas.T) @ mu.weights


@dataclass
class NoiseBasis:
    """Real basis fields and their graph averages.

    ``kind[j]`` is 0 for the constant field, 1 for cosine and 2 for sine;
    field ``j`` is ``amp[j] * trig(<freq[j], x>)``.
    """

    measure: SpectralMeasure
    freq: np.ndarray
    amp: np.ndarray
    kind: np.ndarray
    averages: list = field(default_factory=list)   # GraphFunction per basis field

    @property
    def size(self) -> int:
        return len(self.amp)

    def evaluate(self, x) -> np.ndarray:
        """Basis values ``(..., J)`` at points ``(..., 2)``."""
        ph = np.asarray(x, dtype=float) @ self.freq.T
        out = np.where(self.kind == 1, np.cos(ph), np.where(self.kind == 2, np.sin(ph), 1.0))
        return out * self.amp

    def field(self, j):
        return lambda x: self.evaluate(x)[..., j]

    def kernel(self, x, y) -> np.ndarray:
        """``sum_j e_j(x) e_j(y)``."""
        return np.sum(self.evaluate(x) * self.evaluate(y), axis=-1)

    def graph_values(self, z, k) -> np.ndarray:
        """Averaged fields ``e_j^(z, k)``, shape ``(..., J)``."""
        return np.stack([a(z, k) for a in self.averages], axis=-1)

    def node_matrix(self, G) -> np.ndarray:
        """``(n_nodes, J)`` matrix of averaged fields on the generator nodes."""
        return np.stack([G.from_graph_function(a) for a in self.averages], axis=1)


def _basis_fields(mu: SpectralMeasure):
    freq, amp, kind = [], [], []
    mir = mu._mirror_index()
    seen = set()
    for l, lam in enumerate(mu.lambdas):
        if l in seen:
            continue
        c = mu.weights[l]
        if np.all(lam == 0):
            freq.append(lam)
            amp.append(np.sqrt(c))
            kind.append(0)
            seen.add(l)
            continue
        seen.update((l, mir[l]))
        for kd in (1, 2):
            freq.append(lam)
            amp.append(np.sqrt(2 * c))
            kind.append(kd)
    return np.array(freq, dtype=float).reshape(-1, 2), np.array(amp), np.array(kind)


def build_basis(mu: SpectralMeasure, tables: CoefficientTables | None = None) -> NoiseBasis:
    """Real basis of the measure and, given tables, the averaged fields.

    Averages at extremum vertices are the field values at the critical point;
    saddle and cap limits are left to each edge's own samples.
    """
    mu.check()
    freq, amp, kind = _basis_fields(mu)
    basis = NoiseBasis(mu, freq, amp, kind)
    if tables is not None:
        ext = {v.id: np.asarray(v.location, dtype=float) for v in tables.graph.vertices
               if v.kind is VertexKind.EXTREMUM}
        for j in range(basis.size):
            fj = basis.field(j)
            vv = {vid: float(fj(loc)) for vid, loc in ext.items()}
            basis.averages.append(tables.average_table(fj, vv))
    return basis


def sample_graph_increment(basis: NoiseBasis, dt: float, xi, *, nodes: np.ndarray | None = None):
    """``sum_j e_j^ sqrt(dt) xi_j``.

    With ``nodes`` (the matrix from :meth:`NoiseBasis.node_matrix`) returns
    node vectors of shape ``xi.shape[:-1] + (n_nodes,)``; otherwise a
    :class:`GraphFunction` for a single draw ``xi`` of shape ``(J,)``.
    """
    xi = np.asarray(xi, dtype=float)
    if nodes is not None:
        return np.sqrt(dt) * xi @ nodes.T
    if xi.shape != (basis.size,):
        raise ConfigError("a graph-function increment needs a single draw of shape (J,)")
    vals = [np.sqrt(dt) * np.tensordot(np.stack([a.values[k] for a in basis.averages], -1), xi, 1)
            for k in range(len(basis.averages[0].values))]
    vv = {}
    for v in basis.averages[0].vertex_values:
        vv[v] = float(np.sqrt(dt) * sum(a.vertex_values[v] * x for a, x in zip(basis.averages, xi)))
    return GraphFunction(basis.averages[0].tables, vals, vv)


def graph_covariance(mu: SpectralMeasure, tables: CoefficientTables, p1, p2, t: float = 1.0) -> float:
    """``t sum_l c_l A_l(p1) conj(A_l(p2))`` with ``A_l`` the average of ``exp(i<lam_l, x>)``.

    Averages are taken on freshly extracted level curves, independently of the
    tabulated basis averages.  ``p1, p2`` are ``(z, k)`` pairs.
    """
    mu.check()

    def avg_exp(p, lam):
        z, k = p
        c = average(tables, lambda x: np.cos(x @ lam), z, k)
        s = average(tables, lambda x: np.sin(x @ lam), z, k)
        return complex(c, s)

    total = 0j
    for lam, c in zip(mu.lambdas, mu.weights):
        total += c * avg_exp(p1, lam) * np.conj(avg_exp(p2, lam))
    if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
        raise SymmetryError("covariance has a non-negligible imaginary part")
    return float(t * total.real)


def empirical_covariance(basis: NoiseBasis, p1, p2, t: float, n_samples: int, seed: int):
    """Sample covariance of ``W(t, p1), W(t, p2)`` and its standard error."""
    E1 = basis.graph_values(np.array([p1[0]]), np.array([p1[1]]))[0]
    E2 = basis.graph_values(np.array([p2[0]]), np.array([p2[1]]))[0]
    xi = normal_block(seed, "noise", 0, (n_samples, basis.size))
    w1 = np.sqrt(t) * xi @ E1
    w2 = np.sqrt(t) * xi @ E2
    prod = (w1 - w1.mean()) * (w2 - w2.mean())
    cov = prod.sum() / (n_samples - 1)
    se = prod.std(ddof=1) / np.sqrt(n_samples)
    return float(cov), float(se)
