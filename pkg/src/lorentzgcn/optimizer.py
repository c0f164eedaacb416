"""Parameter updates: Riemannian SGD on the Stiefel manifold plus plain
first-order updates for unconstrained parameters.

Each layer's transformation sub-matrix lives on St(n', n), the matrices
with orthonormal columns. A step projects the Euclidean gradient onto the
tangent space at W,

    pi_W(G) = G - 0.5 * W (W^T G + G^T W),

scales by the learning rate, and retracts back with the orthogonal factor
of a QR decomposition. qf() fixes the sign ambiguity of QR by forcing R's
diagonal positive, so the retraction is a deterministic function and
qf(M) = M for M already orthonormal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

STIEFEL_TOL = 1e-8


def stiefel_error(m: np.ndarray) -> float:
    """max |M^T M - I|, the membership defect."""
    mtm = m.T @ m
    return float(np.max(np.abs(mtm - np.eye(mtm.shape[0]))))


def qf(m: np.ndarray) -> np.ndarray:
    """Orthogonal factor of the QR decomposition, sign-fixed.

    Columns of Q are flipped so that diag(R) > 0; zero diagonal entries
    keep sign +1.
    """
    q, r = np.linalg.qr(m)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def tangent_project(w: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the Stiefel tangent space at w."""
    if w.shape != g.shape:
        raise DimensionError(f"tangent_project: shapes {w.shape} vs {g.shape}")
    wtg = w.T @ g
    return g - 0.5 * w @ (wtg + wtg.T)


def qr_retract(w: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Retract the step -p taken from w back onto the manifold: qf(w - p)."""
    if w.shape != p.shape:
        raise DimensionError(f"qr_retract: shapes {w.shape} vs {p.shape}")
    return qf(w - p)


def riemannian_step(w: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    """One Riemannian SGD update of an orthonormal-column matrix."""
    return qr_retract(w, lr * tangent_project(w, g))


def orthogonal_init(n_rows: int, n_cols: int, seed) -> np.ndarray:
    """Seeded random Stiefel matrix: qf of a standard Gaussian draw."""
    if n_cols > n_rows:
        raise ConfigError(f"orthogonal_init: need n_cols <= n_rows, got {n_rows}x{n_cols}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return qf(rng.standard_normal((n_rows, n_cols)))


@dataclass
class OptState:
    """Learning rates and optional Adam accumulators for the Euclidean group."""

    lr_riemannian: float
    lr_euclidean: float
    adaptive: bool = False  # Adam on unconstrained parameters when True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr_riemannian <= 0 or self.lr_euclidean <= 0:
            raise ConfigError("learning rates must be > 0")


def euclidean_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptState) -> None:
    """In-place first-order update of unconstrained parameter arrays."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"euclidean_step: grad shape {g.shape} vs param {p.shape} ({name})")
        if state.adaptive:
            m = state.m.setdefault(name, np.zeros_like(p))
            v = state.v.setdefault(name, np.zeros_like(p))
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g**2
            mhat = m / (1 - state.beta1**state.t)
            vhat = v / (1 - state.beta2**state.t)
            p -= state.lr_euclidean * mhat / (np.sqrt(vhat) + state.eps)
        else:
            p -= state.lr_euclidean * g
