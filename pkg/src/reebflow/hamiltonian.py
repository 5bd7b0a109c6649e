"""
Polynomial Hamiltonians on a truncated planar domain.

Every Hamiltonian used in the package is a bivariate polynomial
``H(x, y) = sum_ij C[i, j] x**i y**j`` restricted to the box
``[-r_max, r_max]**2``.  The coefficient matrix is the single source of truth:
the compiled kernels evaluate the same matrix, so the Python and kernel paths
see identical fields.

Named families
--------------
radial       ``a/2 |x|^2``
anisotropic  ``(a x^2 + b y^2)/2``
twowell      ``(x^2-1)^2/4 + tilt*x + stiffness*y^2/2`` shifted to min 0
polynomial   user supplied coefficients ``{(i, j): c}``
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DomainError, GenericityError, ParameterError, UnresolvedCellWarning

__all__ = [
    "HamiltonianField",
    "CriticalKind",
    "CriticalPoint",
    "ClauseResult",
    "GenericityReport",
    "make_hamiltonian",
    "find_critical_points",
    "validate_generic",
]


def _deriv(coeffs, axis):
    d = P.polyder(coeffs, axis=axis)
    # keep square shape so the kernels can use one stride
    out = np.zeros_like(coeffs)
    out[: d.shape[0], : d.shape[1]] = d
    return out


@dataclass(frozen=True)
class HamiltonianField:
    """A polynomial Hamiltonian with analytic derivatives.

    Parameters
    ----------
    name : str
        Family name (used for serialization).
    coeffs : ndarray, shape (d+1, d+1)
        ``coeffs[i, j]`` multiplies ``x**i * y**j``.
    r_max : float
        Half-width of the square evaluation domain.
    params : dict
        Family parameters, kept for reporting.
    """

    name: str
    coeffs: np.ndarray
    r_max: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        n = max(c.shape)
        sq = np.zeros((n, n))
        sq[: c.shape[0], : c.shape[1]] = c
        object.__setattr__(self, "coeffs", sq)
        object.__setattr__(self, "_dx", _deriv(sq, 0))
        object.__setattr__(self, "_dy", _deriv(sq, 1))
        object.__setattr__(self, "_dxx", _deriv(self._dx, 0))
        object.__setattr__(self, "_dxy", _deriv(self._dx, 1))
        object.__setattr__(self, "_dyy", _deriv(self._dy, 1))
        if self.r_max <= 0:
            raise ParameterError("r_max must be positive")

    @property
    def degree(self) -> int:
        nz = np.argwhere(self.coeffs != 0)
        return int(nz.sum(axis=1).max()) if len(nz) else 0

    # -- evaluation ---------------------------------------------------------
    @staticmethod
    def _split(x):
        x = np.asarray(x, dtype=float)
        return x[..., 0], x[..., 1]

    def h(self, x):
        a, b = self._split(x)
        return P.polyval2d(a, b, self.coeffs)

    def grad(self, x):
        a, b = self._split(x)
        return np.stack([P.polyval2d(a, b, self._dx), P.polyval2d(a, b, self._dy)], axis=-1)

    def skew_grad(self, x):
        """``(dH/dy, -dH/dx)``, the divergence-free advection field."""
        g = self.grad(x)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def hessian(self, x):
        a, b = self._split(x)
        hxx = P.polyval2d(a, b, self._dxx)
        hxy = P.polyval2d(a, b, self._dxy)
        hyy = P.polyval2d(a, b, self._dyy)
        return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)

    def laplacian(self, x):
        a, b = self._split(x)
        return P.polyval2d(a, b, self._dxx) + P.polyval2d(a, b, self._dyy)

    def grad_norm(self, x):
        return np.linalg.norm(self.grad(x), axis=-1)

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        return np.all(np.abs(x) <= self.r_max, axis=-1)

    def evaluate(self, x):
        """Return ``H, grad, skew_grad, laplacian, hessian`` at ``x`` as a dict.

        Raises
        ------
        DomainError
            If any point lies outside ``[-r_max, r_max]^2``.
        """
        x = np.asarray(x, dtype=float)
        if not np.all(self.in_domain(x)):
            raise DomainError(f"point outside evaluation domain |x_i| <= {self.r_max}")
        g = self.grad(x)
        return {
            "h": self.h(x),
            "grad": g,
            "skew_grad": np.stack([g[..., 1], -g[..., 0]], axis=-1),
            "laplacian": self.laplacian(x),
            "hessian": self.hessian(x),
        }

    def with_shift(self, value: float) -> "HamiltonianField":
        c = self.coeffs.copy()
        c[0, 0] -= value
        return HamiltonianField(self.name, c, self.r_max, dict(self.params))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "r_max": self.r_max,
            "coeffs": self.coeffs.tolist(),
        }


def _radial(scale=1.0, r_max=4.0):
    c = np.zeros((3, 3))
    c[2, 0] = c[0, 2] = 0.5 * scale
    return HamiltonianField("radial", c, r_max, {"scale": scale})


def _anisotropic(a=1.0, b=4.0, r_max=4.0):
    c = np.zeros((3, 3))
    c[2, 0] = 0.5 * a
    c[0, 2] = 0.5 * b
    return HamiltonianField("anisotropic", c, r_max, {"a": a, "b": b})


def _twowell(tilt=0.1, stiffness=1.0, r_max=4.5):
    # (x^2-1)^2/4 = x^4/4 - x^2/2 + 1/4
    c = np.zeros((5, 5))
    c[4, 0] = 0.25
    c[2, 0] = -0.5
    c[0, 0] = 0.25
    c[1, 0] = tilt
    c[0, 2] = 0.5 * stiffness
    # minima sit on y = 0 at real roots of x^3 - x + tilt with 3x^2 - 1 > 0
    roots = np.roots([1.0, 0.0, -1.0, tilt])
    roots = roots[np.abs(roots.imag) < 1e-12].real
    vals = 0.25 * (roots**2 - 1) ** 2 + tilt * roots
    vals = vals[3 * roots**2 - 1 > 0]
    c[0, 0] -= vals.min()
    return HamiltonianField("twowell", c, r_max, {"tilt": tilt, "stiffness": stiffness})


def _polynomial(coeffs, r_max=4.0, shift_min=True, grid_resolution=128):
    if isinstance(coeffs, dict):
        items = [(tuple(int(v) for v in (k.split(",") if isinstance(k, str) else k)), c)
                 for k, c in coeffs.items()]
        n = max(max(i, j) for (i, j), _ in items) + 1
        arr = np.zeros((n, n))
        for (i, j), cval in items:
            arr[i, j] = cval
    else:
        arr = np.asarray(coeffs, dtype=float)
    field_ = HamiltonianField("polynomial", arr, r_max, {})
    if shift_min:
        pts = find_critical_points(field_, grid_resolution)
        mins = [p.value for p in pts if p.kind is CriticalKind.MIN]
        if mins:
            field_ = field_.with_shift(min(mins))
    return field_


_FAMILIES = {
    "radial": _radial,
    "anisotropic": _anisotropic,
    "twowell": _twowell,
    "polynomial": _polynomial,
}


def make_hamiltonian(name: str, **params) -> HamiltonianField:
    """Build a named Hamiltonian (``radial``, ``anisotropic``, ``twowell``, ``polynomial``)."""
    try:
        factory = _FAMILIES[name]
    except KeyError:
        raise ParameterError(f"unknown Hamiltonian family {name!r}; choose from {sorted(_FAMILIES)}")
    return factory(**params)


class CriticalKind(str, enum.Enum):
    MIN = "Min"
    MAX = "Max"
    SADDLE = "Saddle"


@dataclass(frozen=True)
class CriticalPoint:
    location: tuple
    value: float
    kind: CriticalKind
    hess_det: float
    eigenvalues: tuple = ()

    def to_dict(self):
        return {
            "location": list(self.location),
            "value": self.value,
            "kind": self.kind.value,
            "hess_det": self.hess_det,
            "eigenvalues": list(self.eigenvalues),
        }


def _newton(H, x0, tol, max_iter):
    # iterate until the step stalls, not just until |grad| <= tol: at a
    # degenerate point convergence is only linear and stopping early would
    # hide the vanishing Hessian determinant
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = H.grad(x)
        if not np.any(g):
            break
        try:
            step = np.linalg.solve(H.hessian(x), g)
        except np.linalg.LinAlgError:
            break
        x = x - step
        if not np.all(np.isfinite(x)):
            return x, False
        if np.linalg.norm(step) <= 1e-14 * (1 + np.linalg.norm(x)):
            break
    return x, bool(np.linalg.norm(H.grad(x)) <= tol)


def find_critical_points(H: HamiltonianField, grid_resolution: int = 128, *,
                         newton_tol=1e-10, merge_tol=1e-6, degenerate_tol=1e-9,
                         max_iter=50) -> list[CriticalPoint]:
    """Locate and classify all critical points of ``H`` inside its domain.

    Seeds are grid cells where both components of ``grad H`` change sign;
    each seed is refined by Newton's method.  Seeds that do not converge are
    reported through an :class:`UnresolvedCellWarning`.

    Raises
    ------
    GenericityError
        If a critical point has ``|det D^2 H| < degenerate_tol``.
    """
    if grid_resolution < 64:
        raise ParameterError("grid_resolution must be >= 64")
    r = H.r_max
    s = np.linspace(-r, r, grid_resolution + 1)
    X, Y = np.meshgrid(s, s, indexing="ij")
    g = H.grad(np.stack([X, Y], -1))

    def changes(comp):
        corners = np.stack([comp[:-1, :-1], comp[1:, :-1], comp[:-1, 1:], comp[1:, 1:]])
        return (corners.min(0) <= 0) & (corners.max(0) >= 0)

    cells = np.argwhere(changes(g[..., 0]) & changes(g[..., 1]))
    found: list[np.ndarray] = []
    unresolved = []
    h = s[1] - s[0]
    for i, j in cells:
        seed = np.array([s[i] + h / 2, s[j] + h / 2])
        x, ok = _newton(H, seed, newton_tol, max_iter)
        if not ok or not H.in_domain(x):
            unresolved.append(tuple(seed))
            continue
        if all(np.linalg.norm(x - y) > merge_tol for y in found):
            found.append(x)
    if unresolved:
        warnings.warn(f"{len(unresolved)} grid cells did not resolve to a critical point: "
                      f"{unresolved[:5]}", UnresolvedCellWarning, stacklevel=2)

    out = []
    for x in found:
        hess = H.hessian(x)
        det = float(np.linalg.det(hess))
        if abs(det) < degenerate_tol:
            raise GenericityError(f"degenerate critical point at {x.tolist()} (det D^2H = {det:.3e})")
        ev = np.linalg.eigvalsh(hess)
        if det < 0:
            kind = CriticalKind.SADDLE
        elif ev[0] > 0:
            kind = CriticalKind.MIN
        else:
            kind = CriticalKind.MAX
        out.append(CriticalPoint(tuple(float(v) for v in x), float(H.h(x)), kind, det,
                                 tuple(float(v) for v in ev)))
    out.sort(key=lambda p: (p.value, p.location))
    return out


@dataclass
class ClauseResult:
    status: str  # "pass" | "fail" | "waived"
    detail: str
    values: dict = field(default_factory=dict)


@dataclass
class GenericityReport:
    clauses: dict

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.clauses.values())

    def to_dict(self):
        return {k: {"status": c.status, "detail": c.detail, "values": c.values}
                for k, c in self.clauses.items()}


def validate_generic(H: HamiltonianField, points: list[CriticalPoint], *,
                     distinct_tol=1e-9, degenerate_tol=1e-9, min_tol=1e-9,
                     annulus=(0.8, 1.0), n_samples=720) -> GenericityReport:
    """Check the genericity and growth assumptions clause by clause.

    Growth constants ``a1, a2, a3`` are fitted on the annulus
    ``annulus[0]*r_max <= |x| <= annulus[1]*r_max``.  Unbounded growth of the
    second derivative is reported as ``waived``: it is irrelevant on the
    truncated domain used throughout the package.
    """
    clauses = {}
    dets = [p.hess_det for p in points]
    nondeg = all(abs(d) >= degenerate_tol for d in dets)
    clauses["nondegenerate"] = ClauseResult(
        "pass" if nondeg else "fail", "Hessian non-degenerate at every critical point",
        {"hess_det": dets})

    vals = sorted(p.value for p in points)
    gaps = np.diff(vals) if len(vals) > 1 else np.array([np.inf])
    distinct = bool(np.all(gaps > distinct_tol))
    clauses["distinct_values"] = ClauseResult(
        "pass" if distinct else "fail",
        "critical values pairwise distinct" if distinct else "two critical points share a value",
        {"min_gap": float(gaps.min())})

    r = H.r_max
    radii = np.linspace(annulus[0] * r, annulus[1] * r, 9)
    th = np.linspace(0, 2 * np.pi, n_samples, endpoint=False)
    R, TH = np.meshgrid(radii, th, indexing="ij")
    pts = np.stack([R * np.cos(TH), R * np.sin(TH)], -1)
    pts = np.clip(pts, -r, r)
    rad = np.linalg.norm(pts, axis=-1)
    a1 = float(np.min(H.h(pts) / rad**2))
    a2 = float(np.min(H.grad_norm(pts) / rad))
    a3 = float(np.min(H.laplacian(pts)))
    growth_ok = a1 > 0 and a2 > 0 and a3 > 0
    clauses["growth"] = ClauseResult(
        "pass" if growth_ok else "fail",
        "H >= a1|x|^2, |grad H| >= a2|x|, lap H >= a3 on the outer annulus",
        {"a1": a1, "a2": a2, "a3": a3})

    def hess_norm(rr):
        q = np.stack([rr * np.cos(th), rr * np.sin(th)], -1)
        return float(np.max(np.linalg.norm(H.hessian(q), ord=2, axis=(-2, -1))))

    inner, outer = hess_norm(0.5 * r), hess_norm(r)
    ratio = outer / max(inner, 1e-300)
    bounded = ratio < 1.0 + 1e-6
    clauses["bounded_second_derivative"] = ClauseResult(
        "pass" if bounded else "waived",
        "second derivative bounded" if bounded
        else "violated at infinity, acceptable on truncated domain",
        {"hess_norm_half_r": inner, "hess_norm_r": outer})

    mins = [p.value for p in points if p.kind is CriticalKind.MIN]
    mval = min(mins) if mins else float("nan")
    clauses["min_zero"] = ClauseResult(
        "pass" if mins and abs(mval) <= min_tol else "fail",
        "min H = 0", {"min_value": mval})
    return GenericityReport(clauses)
