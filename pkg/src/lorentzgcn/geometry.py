"""Hyperbolic geometry kernel on the Lorentz model.

Points live on the upper sheet of the unit hyperboloid

    L = { x in R^{n+1} : <x,x>_L = -1, x_0 > 0 },

where <x,y>_L = -x_0 y_0 + sum_i x_i y_i is the Minkowski inner product.
The Klein and Poincare ball realizations of the same space are reached
through closed-form bijections, and the Einstein midpoint (the closed-form
hyperbolic weighted mean) is available both in Klein coordinates and as
the equivalent normalized coordinate sum on the hyperboloid.

Everything here is a pure function of float64 arrays. Functions treat the
last axis as the coordinate axis, so a single vector ``(n+1,)`` and a stack
of points ``(m, n+1)`` both work. The small dataclasses at the bottom are
validated containers for callers that want construction-time checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DimensionError, DomainError

# Klein/Poincare norms are clamped below this at construction; the Lorentz
# factor 1/sqrt(1 - |k|^2) blows up at the boundary.
BALL_MAX_NORM = 1.0 - 1e-12

# Tangent vectors shorter than this are treated as zero (sinh(r)/r -> 1).
ZERO_TANGENT = 1e-12

MANIFOLD_TOL = 1e-9
TANGENT_TOL = 1e-9


def _arr(x) -> np.ndarray:
    """Coerce a point wrapper or array-like to a float64 ndarray."""
    if hasattr(x, "coords"):
        x = x.coords
    return np.asarray(x, dtype=np.float64)


def origin(dim: int) -> np.ndarray:
    """The hyperboloid origin o = [1, 0, ..., 0] in R^{dim+1}."""
    o = np.zeros(dim + 1)
    o[0] = 1.0
    return o


def lorentz_inner(x, y) -> np.ndarray:
    """Minkowski inner product <x,y>_L = -x0*y0 + sum_i xi*yi."""
    x, y = _arr(x), _arr(y)
    if x.shape[-1] != y.shape[-1] or x.shape[-1] < 2:
        raise DimensionError(
            f"lorentz_inner needs equal coordinate lengths >= 2, got {x.shape} and {y.shape}"
        )
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def lorentz_norm(v) -> np.ndarray:
    """Norm of a tangent vector, sqrt(max(<v,v>_L, 0)).

    <v,v>_L is nonnegative for vectors tangent to the hyperboloid; tiny
    negative values from rounding are clipped to zero.
    """
    return np.sqrt(np.maximum(lorentz_inner(v, v), 0.0))


def lorentz_distance(x, y) -> np.ndarray:
    """Geodesic distance arcosh(-<x,y>_L); the argument is clamped to >= 1."""
    x, y = _arr(x), _arr(y)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("lorentz_distance: non-finite input")
    return np.arccosh(np.maximum(-lorentz_inner(x, y), 1.0))


def project_to_lorentz(raw) -> np.ndarray:
    """Repair floating-point drift: recompute x0 = sqrt(1 + |x_{1:n}|^2).

    The spatial part is left unchanged, so already-valid points pass
    through (up to rounding in the time coordinate).
    """
    raw = _arr(raw)
    if not np.all(np.isfinite(raw)):
        raise DomainError("project_to_lorentz: non-finite input")
    out = raw.copy()
    out[..., 0] = np.sqrt(1.0 + np.sum(raw[..., 1:] ** 2, axis=-1))
    return out


def _check_tangent(x: np.ndarray, v: np.ndarray, tol: float = 1e-6) -> None:
    ip = lorentz_inner(x, v)
    if np.any(np.abs(ip) > tol):
        raise ContractViolation(f"vector is not tangent: |<x,v>_L| = {np.max(np.abs(ip)):.3e}")


def exp_map(x, v) -> np.ndarray:
    """Shoot a geodesic from x along tangent v: cosh(|v|)x + sinh(|v|) v/|v|."""
    x, v = _arr(x), _arr(v)
    _check_tangent(x, v)
    r = np.asarray(lorentz_norm(v))
    small = r < ZERO_TANGENT
    r_safe = np.where(small, 1.0, r)
    coef = np.where(small, 0.0, np.sinh(r_safe) / r_safe)
    out = np.cosh(r)[..., None] * x + coef[..., None] * v
    return out


def log_map(x, y) -> np.ndarray:
    """Inverse of exp_map: the tangent vector at x pointing to y.

    Coincident points (where -<x,y>_L hits 1 to rounding) return the zero
    vector; the 1/sqrt(u^2 - 1) factor is singular there.
    """
    x, y = _arr(x), _arr(y)
    u = np.asarray(-lorentz_inner(x, y))
    near = u < 1.0 + 1e-12
    u_safe = np.where(near, 2.0, u)
    coef = np.where(near, 0.0, np.arccosh(u_safe) / np.sqrt(u_safe**2 - 1.0))
    return coef[..., None] * (y - u[..., None] * x)


def lorentz_to_poincare(x) -> np.ndarray:
    """Ball coordinates b = x_{1:n} / (x0 + 1)."""
    x = _arr(x)
    return x[..., 1:] / (x[..., 0:1] + 1.0)


def poincare_to_lorentz(b) -> np.ndarray:
    """Inverse ball map [1 + |b|^2, 2b] / (1 - |b|^2)."""
    b = _arr(b)
    sq = np.sum(b**2, axis=-1, keepdims=True)
    if np.any(sq >= 1.0):
        raise DomainError("poincare_to_lorentz: point outside the unit ball")
    out = np.concatenate([1.0 + sq, 2.0 * b], axis=-1)
    return out / (1.0 - sq)


def lorentz_to_klein(x) -> np.ndarray:
    """Klein coordinates k = x_{1:n} / x0."""
    x = _arr(x)
    return x[..., 1:] / x[..., 0:1]


def klein_to_lorentz(k) -> np.ndarray:
    """Inverse Klein map [1, k] / sqrt(1 - |k|^2)."""
    k = _arr(k)
    sq = np.sum(k**2, axis=-1, keepdims=True)
    if np.any(sq >= 1.0):
        raise DomainError("klein_to_lorentz: point outside the unit ball")
    pref = 1.0 / np.sqrt(1.0 - sq)
    return pref * np.concatenate([np.ones_like(sq), k], axis=-1)


def lorentz_factor(k) -> np.ndarray:
    """gamma = 1/sqrt(1 - |k|^2) for a Klein point.

    For k = lorentz_to_klein(x) this equals the time coordinate x0.
    """
    k = _arr(k)
    sq = np.sum(k**2, axis=-1)
    if np.any(sq >= 1.0):
        raise DomainError("lorentz_factor: norm >= 1")
    return 1.0 / np.sqrt(1.0 - sq)


def einstein_midpoint(points) -> np.ndarray:
    """Weighted hyperbolic mean of Klein points: sum(g_j k_j) / sum(g_j).

    The weights are the points' own Lorentz factors. This is the
    paper-literal Klein route; ``lorentz_midpoint`` is the equivalent
    production path that never leaves Lorentz coordinates.
    """
    if hasattr(points, "coords"):
        ks = _arr(points)[None, :]
    elif isinstance(points, (list, tuple)):
        if len(points) == 0:
            raise ContractViolation("einstein_midpoint: empty point set")
        ks = np.stack([_arr(p) for p in points])
    else:
        ks = np.asarray(points, dtype=np.float64)
        if ks.ndim == 1:
            ks = ks[None, :]
    if ks.shape[0] == 0:
        raise ContractViolation("einstein_midpoint: empty point set")
    gamma = lorentz_factor(ks)
    return (gamma[:, None] * ks).sum(axis=0) / gamma.sum()


def lorentz_midpoint(points) -> np.ndarray:
    """Einstein midpoint computed directly on the hyperboloid.

    Equal to normalizing the plain coordinate sum s = sum_j x_j back onto
    the manifold, m = s / sqrt(-<s,s>_L); agrees with the Klein route
    because gamma_j of a Klein image is exactly the Lorentz time
    coordinate x_{j,0}.
    """
    if isinstance(points, (list, tuple)):
        if len(points) == 0:
            raise ContractViolation("lorentz_midpoint: empty point set")
        xs = np.stack([_arr(p) for p in points])
    else:
        xs = np.asarray(points, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[None, :]
    if xs.shape[0] == 0:
        raise ContractViolation("lorentz_midpoint: empty point set")
    s = xs.sum(axis=0)
    return s / np.sqrt(-lorentz_inner(s, s))


def exp_map_origin(spatial) -> np.ndarray:
    """Lift spatial vectors z in R^n to the hyperboloid via exp at the origin.

    Returns [cosh|z|, sinh|z| z/|z|]; |z| < ZERO_TANGENT returns the origin.
    Rowwise over the leading axes.
    """
    z = np.asarray(spatial, dtype=np.float64)
    r = np.sqrt(np.sum(z**2, axis=-1))
    small = r < ZERO_TANGENT
    r_safe = np.where(small, 1.0, r)
    coef = np.where(small, 1.0, np.sinh(r_safe) / r_safe)
    return np.concatenate(
        [np.cosh(r)[..., None], coef[..., None] * z], axis=-1
    )


def _clamp_ball(coords: np.ndarray, model: str) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    nrm = float(np.linalg.norm(coords))
    if not np.isfinite(nrm) or nrm >= 1.0:
        raise DomainError(f"{model} point has norm {nrm} >= 1")
    if nrm > BALL_MAX_NORM:
        coords = coords * (BALL_MAX_NORM / nrm)
    return coords


@dataclass(frozen=True)
class LorentzPoint:
    """A validated point on the hyperboloid; (n+1) coordinates for dimension n."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 1 or c.shape[0] < 2:
            raise DimensionError("LorentzPoint needs a 1-d coordinate vector of length >= 2")
        if not np.all(np.isfinite(c)):
            raise DomainError("LorentzPoint: non-finite coordinates")
        if abs(lorentz_inner(c, c) + 1.0) > MANIFOLD_TOL or c[0] <= 0:
            raise ContractViolation(
                f"not on the hyperboloid: <x,x>_L = {float(lorentz_inner(c, c)):.12f}, x0 = {c[0]}"
            )
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.shape[0] - 1

    @classmethod
    def from_raw(cls, raw) -> "LorentzPoint":
        return cls(project_to_lorentz(raw))


@dataclass(frozen=True)
class KleinPoint:
    """Klein-model point, norm clamped strictly inside the unit ball."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _clamp_ball(self.coords, "Klein"))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class PoincarePoint:
    """Poincare-ball point, norm clamped strictly inside the unit ball."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _clamp_ball(self.coords, "Poincare"))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class TangentVector:
    """A vector in the tangent space of the hyperboloid at ``base``."""

    base: LorentzPoint
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.shape != self.base.coords.shape:
            raise DimensionError("TangentVector coords must match base shape")
        if abs(lorentz_inner(self.base.coords, c)) > TANGENT_TOL:
            raise ContractViolation(
                f"not tangent at base: <x,v>_L = {float(lorentz_inner(self.base.coords, c)):.3e}"
            )
        object.__setattr__(self, "coords", c)

    def norm(self) -> float:
        return float(lorentz_norm(self.coords))


def random_lorentz_points(rng: np.random.Generator, count: int, dim: int, scale: float = 1.0) -> np.ndarray:
    """Sample points by lifting Gaussian spatial parts onto the hyperboloid."""
    spatial = scale * rng.standard_normal((count, dim))
    raw = np.concatenate([np.zeros((count, 1)), spatial], axis=-1)
    return project_to_lorentz(raw)


def random_tangent(rng: np.random.Generator, x, scale: float = 1.0) -> np.ndarray:
    """Sample a tangent vector at x by projecting ambient Gaussian noise.

    v = w + <x,w>_L x is Minkowski-orthogonal to x for any ambient w.
    """
    x = _arr(x)
    w = scale * rng.standard_normal(x.shape)
    return w + lorentz_inner(x, w)[..., None] * x
