"""Reverse-mode differentiation on a flat tape of array-valued primitives.

The engine covers exactly the op set the network needs: elementwise and
linear algebra, the hyperbolic-family scalars, and fused kernels for the
manifold operations (origin lift, block-orthogonal linear map, Einstein
midpoint aggregation, ball bijections, pairwise squared distance, the
edge-probability decoder, centroid distances). Gradients of a scalar loss
are taken in ambient Euclidean coordinates; manifold constraints are the
optimizer's job.

Usage: build a ``Tape``, register trainable arrays with ``tape.param``,
compose primitives, then ``tape.backward(loss)`` once to get a dict of
per-parameter gradient arrays. One backward per forward; build a fresh
tape for the next step.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit

from . import geometry
from .errors import DomainError, TapeStateError, UnsupportedOpError

# d(arcosh^2)/du -> 2 as u -> 1+; below this gap we use the limit.
_SQDIST_LIMIT_GAP = 1e-9


class Var:
    """One recorded value: an ndarray plus the closure that backpropagates it."""

    __slots__ = ("tape", "value", "parents", "vjp", "grad")

    def __init__(self, tape: "Tape", value, parents=(), vjp=None):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def _coerce(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return Var(self.tape, np.asarray(other, dtype=np.float64))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, self._coerce(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))


class Tape:
    """Append-only record of one forward pass.

    ``nodes`` is in topological order by construction (an op's inputs are
    created before the op). ``params`` maps names to leaf Vars.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}
        self._backward_done = False

    def constant(self, value) -> Var:
        return Var(self, value)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        v = Var(self, np.array(value, dtype=np.float64))
        self.params[name] = v
        return v

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Reverse accumulation from a scalar loss to every parameter."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeStateError("backward target is not a node of this tape")
        if loss.value.size != 1:
            raise TapeStateError(f"loss must be scalar, got shape {loss.value.shape}")
        if self._backward_done:
            raise TapeStateError("backward already ran for this forward pass")
        self._backward_done = True

        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            for parent, g in zip(node.parents, node.vjp(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.asarray(g, dtype=np.float64).reshape(parent.value.shape)
                else:
                    parent.grad = parent.grad + np.asarray(g, dtype=np.float64).reshape(parent.value.shape)

        out: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise DomainError(f"non-finite gradient for parameter {name!r}")
            out[name] = g
        return out


PRIMITIVES: dict[str, Callable] = {}


def _primitive(op_id: str):
    def deco(fn):
        PRIMITIVES[op_id] = fn
        return fn

    return deco


def record(op_id: str, *args, **kwargs) -> Var:
    """Apply a primitive by id; unknown ids raise UnsupportedOpError."""
    try:
        fn = PRIMITIVES[op_id]
    except KeyError:
        raise UnsupportedOpError(f"unknown primitive {op_id!r}") from None
    return fn(*args, **kwargs)


def _tape_of(*vars_: Var) -> Tape:
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise TapeStateError("operands come from different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra
# ---------------------------------------------------------------------------


@_primitive("add")
def add(a: Var, b: Var) -> Var:
    val = a.value + b.value
    return Var(_tape_of(a, b), val, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


@_primitive("sub")
def sub(a: Var, b: Var) -> Var:
    val = a.value - b.value
    return Var(_tape_of(a, b), val, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


@_primitive("mul")
def mul(a: Var, b: Var) -> Var:
    val = a.value * b.value
    return Var(_tape_of(a, b), val, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.value.shape),
                          _unbroadcast(g * a.value, b.value.shape)))


@_primitive("div")
def div(a: Var, b: Var) -> Var:
    val = a.value / b.value
    return Var(_tape_of(a, b), val, (a, b),
               lambda g: (_unbroadcast(g / b.value, a.value.shape),
                          _unbroadcast(-g * a.value / b.value**2, b.value.shape)))


@_primitive("scale")
def scale(a: Var, c: float) -> Var:
    return Var(a.tape, c * a.value, (a,), lambda g: (c * g,))


@_primitive("neg")
def neg(a: Var) -> Var:
    return Var(a.tape, -a.value, (a,), lambda g: (-g,))


@_primitive("matmul")
def matmul(a: Var, b: Var) -> Var:
    """Matrix product; also covers matrix @ vector and vector @ matrix."""
    val = a.value @ b.value
    av, bv = a.value, b.value

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av  # 1-d dot

    return Var(_tape_of(a, b), val, (a, b), vjp)


@_primitive("dot")
def dot(a: Var, b: Var) -> Var:
    val = np.dot(a.value, b.value)
    return Var(_tape_of(a, b), val, (a, b), lambda g: (g * b.value, g * a.value))


@_primitive("sum")
def array_sum(a: Var) -> Var:
    return Var(a.tape, a.value.sum(), (a,), lambda g: (g * np.ones_like(a.value),))


@_primitive("mean")
def mean_all(a: Var) -> Var:
    n = a.value.size
    return Var(a.tape, a.value.mean(), (a,), lambda g: (g * np.ones_like(a.value) / n,))


@_primitive("mean_rows")
def mean_rows(a: Var, keepdims: bool = False) -> Var:
    """Column means of a matrix (the average-pooling readout)."""
    m = a.value.shape[0]
    val = a.value.mean(axis=0, keepdims=keepdims)
    return Var(a.tape, val, (a,),
               lambda g: (np.tile(g.reshape(1, -1) / m, (m, 1)),))


@_primitive("take_rows")
def take_rows(a: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.tape, a.value[idx], (a,), vjp)


@_primitive("norm2")
def norm2(a: Var) -> Var:
    """Euclidean norm of a vector; subgradient 0 at the origin."""
    val = np.linalg.norm(a.value)

    def vjp(g):
        if val == 0.0:
            return (np.zeros_like(a.value),)
        return (g * a.value / val,)

    return Var(a.tape, val, (a,), vjp)


# ---------------------------------------------------------------------------
# scalar nonlinearities
# ---------------------------------------------------------------------------


@_primitive("relu")
def relu(a: Var) -> Var:
    mask = a.value > 0
    return Var(a.tape, np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


@_primitive("leaky_relu")
def leaky_relu(a: Var, slope: float = 0.01) -> Var:
    coef = np.where(a.value > 0, 1.0, slope)
    return Var(a.tape, coef * a.value, (a,), lambda g: (g * coef,))


@_primitive("exp")
def exp(a: Var) -> Var:
    val = np.exp(a.value)
    return Var(a.tape, val, (a,), lambda g: (g * val,))


@_primitive("log")
def log(a: Var) -> Var:
    return Var(a.tape, np.log(a.value), (a,), lambda g: (g / a.value,))


@_primitive("sqrt")
def sqrt(a: Var) -> Var:
    val = np.sqrt(a.value)
    return Var(a.tape, val, (a,), lambda g: (g / (2.0 * val),))


@_primitive("cosh")
def cosh(a: Var) -> Var:
    return Var(a.tape, np.cosh(a.value), (a,), lambda g: (g * np.sinh(a.value),))


@_primitive("sinh")
def sinh(a: Var) -> Var:
    return Var(a.tape, np.sinh(a.value), (a,), lambda g: (g * np.cosh(a.value),))


@_primitive("tanh")
def tanh(a: Var) -> Var:
    val = np.tanh(a.value)
    return Var(a.tape, val, (a,), lambda g: (g * (1.0 - val**2),))


@_primitive("arcosh")
def arcosh(a: Var) -> Var:
    """arcosh with the argument clamped to >= 1.

    The derivative 1/sqrt(u^2-1) is used strictly above 1; at and below
    the clamp the (sub)gradient is 0.
    """
    u = a.value
    val = np.arccosh(np.maximum(u, 1.0))

    def vjp(g):
        inside = u > 1.0 + 1e-12
        du = np.where(inside, 1.0 / np.sqrt(np.where(inside, u, 2.0) ** 2 - 1.0), 0.0)
        return (g * du,)

    return Var(a.tape, val, (a,), vjp)


@_primitive("softmax_cross_entropy")
def softmax_cross_entropy(logits: Var, labels) -> Var:
    """Mean cross entropy of softmax(logits) against integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    n = z.shape[0]
    val = np.mean(lse - z[np.arange(n), labels])

    def vjp(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return Var(logits.tape, val, (logits,), vjp)


# ---------------------------------------------------------------------------
# fused hyperbolic kernels
# ---------------------------------------------------------------------------


@_primitive("expmap_origin")
def expmap_origin(z: Var) -> Var:
    """Lift rows of spatial vectors onto the hyperboloid (exp at origin)."""
    zv = z.value
    val = geometry.exp_map_origin(zv)
    r = np.sqrt(np.sum(zv**2, axis=-1))
    small = r < 1e-4
    r_safe = np.where(small, 1.0, r)
    # phi = sinh(r)/r and phi'(r)/r, series below r = 1e-4 (cancellation guard)
    phi = np.where(small, 1.0 + r**2 / 6.0, np.sinh(r_safe) / r_safe)
    dphi_over_r = np.where(
        small, 1.0 / 3.0 + r**2 / 30.0, (np.cosh(r_safe) - np.sinh(r_safe) / r_safe) / r_safe**2
    )

    def vjp(g):
        g0, gs = g[..., 0], g[..., 1:]
        dotted = np.sum(gs * zv, axis=-1)
        grad = (g0 * phi + dotted * dphi_over_r)[..., None] * zv + phi[..., None] * gs
        return (grad,)

    return Var(z.tape, val, (z,), vjp)


@_primitive("lorentz_linear")
def lorentz_linear_op(h: Var, w: Var) -> Var:
    """Block-diagonal [1, W-hat] applied rowwise: time kept, space rotated."""
    hv, wv = h.value, w.value
    val = np.concatenate([hv[:, :1], hv[:, 1:] @ wv.T], axis=1)

    def vjp(g):
        gh = np.concatenate([g[:, :1], g[:, 1:] @ wv], axis=1)
        gw = g[:, 1:].T @ hv[:, 1:]
        return gh, gw

    return Var(_tape_of(h, w), val, (h, w), vjp)


@_primitive("neighbor_midpoint")
def neighbor_midpoint(h: Var, adj_hat) -> Var:
    """Einstein midpoint over each row's neighborhood (self included).

    ``adj_hat`` is a constant scipy CSR matrix with unit weights and the
    diagonal set. The midpoint is the normalized Lorentz coordinate sum
    m_i = s_i / sqrt(-<s_i,s_i>_L) with s = adj_hat @ h.
    """
    hv = h.value
    s = adj_hat @ hv
    sJ = s.copy()
    sJ[:, 1:] *= -1.0  # J s, J = diag(1, -1, ..., -1)
    # -<s,s>_L >= (neighborhood size)^2 >= 1 exactly; the clamp only absorbs
    # catastrophic cancellation for far-out points.
    q = np.sqrt(np.maximum(np.sum(s * sJ, axis=1), 1.0))
    val = s / q[:, None]

    def vjp(g):
        gs = g / q[:, None] - (np.sum(g * s, axis=1) / q**3)[:, None] * sJ
        return (adj_hat.T @ gs,)

    return Var(h.tape, val, (h,), vjp)


@_primitive("lorentz_to_poincare")
def lorentz_to_poincare_op(h: Var) -> Var:
    hv = h.value
    denom = hv[:, :1] + 1.0
    b = hv[:, 1:] / denom

    def vjp(g):
        g0 = -np.sum(g * b, axis=1, keepdims=True) / denom
        return (np.concatenate([g0, g / denom], axis=1),)

    return Var(h.tape, b, (h,), vjp)


@_primitive("poincare_to_lorentz")
def poincare_to_lorentz_op(b: Var) -> Var:
    bv = b.value
    u = np.sum(bv**2, axis=1, keepdims=True)
    d = 1.0 - u
    val = np.concatenate([(1.0 + u) / d, 2.0 * bv / d], axis=1)

    def vjp(g):
        g0, gs = g[:, :1], g[:, 1:]
        dotted = np.sum(gs * bv, axis=1, keepdims=True)
        return (4.0 * bv * (g0 + dotted) / d**2 + 2.0 * gs / d,)

    return Var(b.tape, val, (b,), vjp)


@_primitive("lorentz_to_klein")
def lorentz_to_klein_op(h: Var) -> Var:
    hv = h.value
    k = hv[:, 1:] / hv[:, :1]

    def vjp(g):
        g0 = -np.sum(g * k, axis=1, keepdims=True) / hv[:, :1]
        return (np.concatenate([g0, g / hv[:, :1]], axis=1),)

    return Var(h.tape, k, (h,), vjp)


@_primitive("klein_to_lorentz")
def klein_to_lorentz_op(k: Var) -> Var:
    kv = k.value
    u = np.sum(kv**2, axis=1, keepdims=True)
    pref = 1.0 / np.sqrt(1.0 - u)
    val = np.concatenate([pref, pref * kv], axis=1)

    def vjp(g):
        g0, gs = g[:, :1], g[:, 1:]
        dotted = np.sum(gs * kv, axis=1, keepdims=True)
        return ((g0 + dotted) * pref**3 * kv + pref * gs,)

    return Var(k.tape, val, (k,), vjp)


@_primitive("project_rows")
def project_rows(h: Var) -> Var:
    """Recompute each row's time coordinate from its spatial part."""
    hv = h.value
    val = geometry.project_to_lorentz(hv)

    def vjp(g):
        gs = g[:, 1:] + g[:, :1] * hv[:, 1:] / val[:, :1]
        return (np.concatenate([np.zeros_like(g[:, :1]), gs], axis=1),)

    return Var(h.tape, val, (h,), vjp)


def _minkowski_flip(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[..., 1:] *= -1.0
    return out


@_primitive("pair_sqdist")
def pair_sqdist(h: Var, ii, jj) -> Var:
    """Squared geodesic distance for index pairs (ii[k], jj[k]).

    The derivative of arcosh(u)^2 tends to 2 as u -> 1+, so near-coincident
    pairs get the analytic limit instead of the singular 1/sqrt(u^2-1)
    factor; the composition is smooth there.
    """
    ii = np.asarray(ii, dtype=np.intp)
    jj = np.asarray(jj, dtype=np.intp)
    hv = h.value
    hi, hj = hv[ii], hv[jj]
    u = hi[:, 0] * hj[:, 0] - np.sum(hi[:, 1:] * hj[:, 1:], axis=1)  # -<hi,hj>_L
    uc = np.maximum(u, 1.0)
    d = np.arccosh(uc)
    val = d**2

    def vjp(g):
        near = u < 1.0 + _SQDIST_LIMIT_GAP
        u_safe = np.where(near, 2.0, u)
        du = np.where(near, 2.0, 2.0 * np.arccosh(u_safe) / np.sqrt(u_safe**2 - 1.0))
        gu = g * du
        out = np.zeros_like(hv)
        np.add.at(out, ii, gu[:, None] * _minkowski_flip(hj))
        np.add.at(out, jj, gu[:, None] * _minkowski_flip(hi))
        return (out,)

    return Var(h.tape, val, (h,), vjp)


@_primitive("euclidean_pair_sqdist")
def euclidean_pair_sqdist(h: Var, ii, jj) -> Var:
    ii = np.asarray(ii, dtype=np.intp)
    jj = np.asarray(jj, dtype=np.intp)
    diff = h.value[ii] - h.value[jj]
    val = np.sum(diff**2, axis=1)

    def vjp(g):
        out = np.zeros_like(h.value)
        np.add.at(out, ii, 2.0 * g[:, None] * diff)
        np.add.at(out, jj, -2.0 * g[:, None] * diff)
        return (out,)

    return Var(h.tape, val, (h,), vjp)


@_primitive("fermi_dirac")
def fermi_dirac_op(sq: Var, r: float, t: float) -> Var:
    """Edge probability [exp((d^2 - r)/t) + 1]^{-1} from squared distances."""
    if t <= 0:
        raise DomainError("fermi_dirac: temperature t must be > 0")
    p = expit((r - sq.value) / t)
    return Var(sq.tape, p, (sq,), lambda g: (-g * p * (1.0 - p) / t,))


@_primitive("fermi_dirac_cross_entropy")
def fermi_dirac_cross_entropy(sq: Var, labels, r: float, t: float) -> Var:
    """Mean binary cross entropy of the decoder against 0/1 labels.

    Computed on logits for stability: with z = (d^2 - r)/t the per-pair
    loss is softplus(z) for positives and softplus(-z) for negatives.
    """
    if t <= 0:
        raise DomainError("fermi_dirac_cross_entropy: temperature t must be > 0")
    y = np.asarray(labels, dtype=np.float64)
    z = (sq.value - r) / t
    n = z.size
    val = np.mean(y * np.logaddexp(0.0, z) + (1.0 - y) * np.logaddexp(0.0, -z))

    def vjp(g):
        return (g * (expit(z) - (1.0 - y)) / (t * n),)

    return Var(sq.tape, val, (sq,), vjp)


@_primitive("centroid_distances")
def centroid_distances_op(h: Var, c: Var) -> Var:
    """Geodesic distance matrix between embedding rows and centroid rows."""
    hv, cv = h.value, c.value
    u = np.outer(hv[:, 0], cv[:, 0]) - hv[:, 1:] @ cv[:, 1:].T  # -<h_i,c_j>_L
    val = np.arccosh(np.maximum(u, 1.0))

    def vjp(g):
        inside = u > 1.0 + 1e-12
        m = np.where(inside, g / np.sqrt(np.where(inside, u, 2.0) ** 2 - 1.0), 0.0)
        return m @ _minkowski_flip(cv), m.T @ _minkowski_flip(hv)

    return Var(_tape_of(h, c), val, (h, c), vjp)


@_primitive("csr_matmul")
def csr_matmul(adj, x: Var) -> Var:
    """Multiply by a constant sparse matrix (aggregation weights)."""
    return Var(x.tape, adj @ x.value, (x,), lambda g: (adj.T @ g,))


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(f, params: dict[str, np.ndarray], step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a dict of parameter arrays to a scalar Var on a fresh tape
    (it must be deterministic). The relative error per coordinate uses
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    loss = f(params)
    if not np.isfinite(loss.value):
        raise DomainError("grad_check: loss is not finite")
    analytic = loss.tape.backward(loss)

    def eval_at(p):
        out = float(f(p).value)
        if not np.isfinite(out):
            raise DomainError("grad_check: loss is not finite at a probe point")
        return out

    worst = 0.0
    for name, base in params.items():
        base = np.asarray(base, dtype=np.float64)
        flat = base.ravel()
        for idx in range(flat.size):
            bumped = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            bumped[name].ravel()[idx] = flat[idx] + step
            f_plus = eval_at(bumped)
            bumped[name].ravel()[idx] = flat[idx] - step
            f_minus = eval_at(bumped)
            fd = (f_plus - f_minus) / (2.0 * step)
            an = analytic[name].ravel()[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    return worst
