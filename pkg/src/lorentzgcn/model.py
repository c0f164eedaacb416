"""The manifold-preserving convolution stack and its task heads.

One layer does three things, all directly on the hyperboloid:

  1. feature transformation y = [x0, W-hat x_{1:n}] with W-hat orthogonal,
     which preserves the Minkowski self-product exactly;
  2. neighborhood aggregation by the Einstein midpoint over the node and
     its neighbors;
  3. non-linear activation routed through the Poincare ball, where
     componentwise maps with |sigma(x)| <= |x| keep points inside.

Inputs are lifted from Euclidean features through a learnable reduction
followed by the exponential map at the origin. Decoders: a Fermi-Dirac
probability on squared geodesic distance for edges, and distances to a
learned centroid set for node/graph classification. A plain Euclidean
GCN with the same shape is included as the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from . import geometry
from .errors import ConfigError, ContractViolation, DimensionError
from .graphdata import Graph
from .optimizer import orthogonal_init, stiefel_error

ORTHO_CALL_TOL = 1e-6

# Poincare-side activations must map the open unit ball into itself;
# componentwise maps with |sigma(x)| <= |x| qualify.
ACTIVATIONS = {
    "identity": (lambda x: x, lambda v: v),
    "relu": (lambda x: np.maximum(x, 0.0), ad.relu),
    "leaky_relu": (lambda x: np.where(x > 0, x, 0.01 * x),
                   lambda v: ad.leaky_relu(v, 0.01)),
}


def _activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(
            f"activation {name!r} is not known to map the unit ball into itself; "
            f"choose from {sorted(ACTIVATIONS)}"
        ) from None


@dataclass
class LayerParams:
    """One layer's transformation sub-matrix (orthonormal columns)."""

    sub_matrix: np.ndarray

    def __post_init__(self):
        self.sub_matrix = np.asarray(self.sub_matrix, dtype=np.float64)
        if stiefel_error(self.sub_matrix) > 1e-6:
            raise ContractViolation(
                f"sub-matrix is not orthogonal: defect {stiefel_error(self.sub_matrix):.3e}"
            )


@dataclass
class ModelParams:
    """All trainable arrays plus the decoder hyperparameters r and t.

    Centroids are stored as tangent vectors at the origin and materialized
    on the hyperboloid through the origin exponential map, so plain
    Euclidean updates keep them on the manifold.
    """

    input_proj: np.ndarray               # (d_feat, dim)
    input_bias: np.ndarray               # (dim,)
    layers: list = field(default_factory=list)   # each (dim, dim), orthogonal
    centroids: np.ndarray | None = None  # (n_centroids, dim)
    classifier_w: np.ndarray | None = None
    classifier_b: np.ndarray | None = None
    r: float = 2.0
    t: float = 1.0

    @classmethod
    def init(cls, seed, d_feat: int, dim: int, num_layers: int, num_centroids: int = 16,
             num_classes: int | None = None, r: float = 2.0, t: float = 1.0) -> "ModelParams":
        if num_layers < 1:
            raise ConfigError("need at least one layer")
        if t <= 0:
            raise ConfigError("decoder temperature t must be > 0")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        # Unit-rms features then land at |z| ~ 1: inside the near-flat
        # region of the manifold, where aggregation behaves like averaging.
        proj = rng.standard_normal((d_feat, dim)) / np.sqrt(d_feat * dim)
        bias = np.zeros(dim)
        layers = [orthogonal_init(dim, dim, rng) for _ in range(num_layers)]
        centroids = classifier_w = classifier_b = None
        if num_classes is not None:
            if num_centroids < num_classes:
                raise ConfigError(f"need at least {num_classes} centroids, got {num_centroids}")
            centroids = 0.5 * rng.standard_normal((num_centroids, dim))
            classifier_w = 0.1 * rng.standard_normal((num_centroids, num_classes))
            classifier_b = np.zeros(num_classes)
        return cls(proj, bias, layers, centroids, classifier_w, classifier_b, r, t)

    def param_arrays(self) -> dict[str, np.ndarray]:
        out = {"input_proj": self.input_proj, "input_bias": self.input_bias}
        for i, w in enumerate(self.layers):
            out[f"layer_{i}"] = w
        if self.centroids is not None:
            out["centroids"] = self.centroids
            out["classifier_w"] = self.classifier_w
            out["classifier_b"] = self.classifier_b
        return out

    def riemannian_names(self) -> list[str]:
        return [f"layer_{i}" for i in range(len(self.layers))]

    def set_array(self, name: str, value: np.ndarray) -> None:
        if name.startswith("layer_"):
            self.layers[int(name.split("_")[1])] = value
        else:
            setattr(self, name, value)

    def copy(self) -> "ModelParams":
        return ModelParams(self.input_proj.copy(), self.input_bias.copy(),
                           [w.copy() for w in self.layers],
                           None if self.centroids is None else self.centroids.copy(),
                           None if self.classifier_w is None else self.classifier_w.copy(),
                           None if self.classifier_b is None else self.classifier_b.copy(),
                           self.r, self.t)


@dataclass
class EuclideanParams:
    """Weights of the baseline GCN (first layer reduces d_feat to dim)."""

    layers: list                          # (d_in, d_out) per layer
    r: float = 2.0
    t: float = 1.0

    @classmethod
    def init(cls, seed, d_feat: int, dim: int, num_layers: int,
             r: float = 2.0, t: float = 1.0) -> "EuclideanParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        dims = [d_feat] + [dim] * num_layers
        layers = [rng.standard_normal((dims[i], dims[i + 1])) / np.sqrt(dims[i])
                  for i in range(num_layers)]
        return cls(layers, r, t)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {f"euc_layer_{i}": w for i, w in enumerate(self.layers)}

    def riemannian_names(self) -> list[str]:
        return []

    def set_array(self, name: str, value: np.ndarray) -> None:
        self.layers[int(name.split("_")[2])] = value

    def copy(self) -> "EuclideanParams":
        return EuclideanParams([w.copy() for w in self.layers], self.r, self.t)


# ---------------------------------------------------------------------------
# value-level operations (pure numpy, used directly and by unit tests)
# ---------------------------------------------------------------------------


def embed_input(x_e, input_proj, input_bias=None) -> np.ndarray:
    """Reduce Euclidean features and lift onto the hyperboloid.

    z = proj^T x (+ bias), then exp at the origin of [0, z]. Zero z maps
    to the origin itself.
    """
    x_e = np.asarray(x_e, dtype=np.float64)
    proj = np.asarray(input_proj, dtype=np.float64)
    if x_e.shape[-1] != proj.shape[0]:
        raise DimensionError(f"feature length {x_e.shape[-1]} vs projection {proj.shape}")
    z = x_e @ proj
    if input_bias is not None:
        z = z + input_bias
    return geometry.exp_map_origin(z)


def lorentz_linear(x, layer) -> np.ndarray:
    """Apply blockdiag(1, W-hat): time coordinate kept, spatial part rotated."""
    w = layer.sub_matrix if isinstance(layer, LayerParams) else np.asarray(layer, dtype=np.float64)
    if stiefel_error(w) > ORTHO_CALL_TOL:
        raise ContractViolation(
            f"lorentz_linear: sub-matrix defect {stiefel_error(w):.3e} (optimizer bug?)"
        )
    x = geometry._arr(x)
    return np.concatenate([x[..., :1], x[..., 1:] @ w.T], axis=-1)


def aggregate_neighbors(states: np.ndarray, graph: Graph, i: int) -> np.ndarray:
    """Einstein midpoint of node i's closed neighborhood, via the Klein model.

    Project {i} and N(i) to Klein coordinates, average with Lorentz-factor
    weights, map back. The tape path uses the equivalent normalized
    Lorentz sum; this is the paper-literal reference route.
    """
    members = np.concatenate([[i], graph.neighbors(i)])
    ks = geometry.lorentz_to_klein(states[members])
    mid = geometry.einstein_midpoint(ks)
    return geometry.klein_to_lorentz(mid)


def hyperbolic_activation(m, activation: str = "leaky_relu") -> np.ndarray:
    """Apply a ball-preserving nonlinearity in Poincare coordinates."""
    fn, _ = _activation(activation)
    b = geometry.lorentz_to_poincare(m)
    out = fn(b)
    if np.any(np.sum(out**2, axis=-1) >= 1.0):
        raise ContractViolation(f"activation {activation!r} escaped the unit ball")
    return geometry.poincare_to_lorentz(out)


def fermi_dirac(hi, hj, r: float = 2.0, t: float = 1.0):
    """Edge probability [exp((d^2 - r)/t) + 1]^{-1}; strictly inside (0,1)."""
    if t <= 0:
        raise ConfigError("fermi_dirac: t must be > 0")
    d = geometry.lorentz_distance(hi, hj)
    return expit((r - d**2) / t)


def centroid_distances(embeddings, centroids_lorentz) -> np.ndarray:
    """Matrix D with D[i, j] = geodesic distance(embedding i, centroid j)."""
    h = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    c = np.atleast_2d(np.asarray(centroids_lorentz, dtype=np.float64))
    u = np.outer(h[:, 0], c[:, 0]) - h[:, 1:] @ c[:, 1:].T
    return np.arccosh(np.maximum(u, 1.0))


def nc_logits(d_row, classifier_w, classifier_b=None) -> np.ndarray:
    """Class logits from one node's centroid-distance row."""
    d_row = np.asarray(d_row, dtype=np.float64)
    w = np.asarray(classifier_w, dtype=np.float64)
    if d_row.shape[-1] != w.shape[0]:
        raise DimensionError(f"distance row {d_row.shape} vs classifier {w.shape}")
    out = d_row @ w
    if classifier_b is not None:
        out = out + classifier_b
    return out


def gc_readout(d_matrix) -> np.ndarray:
    """Average pooling over nodes: the graph embedding is the mean distance row."""
    return np.asarray(d_matrix, dtype=np.float64).mean(axis=0)


def euclidean_gcn_layer(states, graph: Graph, w, activation: str = "relu") -> np.ndarray:
    """Baseline layer: transform, add 1/|N(i)|-weighted neighbor sum, activate."""
    fn, _ = _activation(activation)
    h = np.asarray(states, dtype=np.float64) @ np.asarray(w, dtype=np.float64)
    m = h + graph.row_normalized_adjacency() @ h
    return fn(m)


# ---------------------------------------------------------------------------
# tape-level forward passes
# ---------------------------------------------------------------------------


def forward_on_tape(tape: ad.Tape, graph: Graph, features: np.ndarray,
                    pvars: dict[str, ad.Var], num_layers: int,
                    activation: str = "leaky_relu", reproject: bool = True) -> list[ad.Var]:
    """Alg-style embedding generation; returns per-layer states, input first."""
    _, act = _activation(activation)
    feats = tape.constant(features)
    z = ad.add(ad.matmul(feats, pvars["input_proj"]), pvars["input_bias"])
    h = ad.expmap_origin(z)
    states = [h]
    adj_hat = graph.adjacency_with_self_loops()
    for i in range(num_layers):
        w = pvars[f"layer_{i}"]
        if stiefel_error(w.value) > ORTHO_CALL_TOL:
            raise ContractViolation(
                f"layer_{i}: sub-matrix defect {stiefel_error(w.value):.3e} (optimizer bug?)"
            )
        hbar = ad.lorentz_linear_op(h, w)
        m = ad.neighbor_midpoint(hbar, adj_hat)
        b = ad.lorentz_to_poincare_op(m)
        h = ad.poincare_to_lorentz_op(act(b))
        if reproject:
            h = ad.project_rows(h)
        states.append(h)
    return states


def forward(graph: Graph, features, params: ModelParams,
            activation: str = "leaky_relu", reproject: bool = True) -> list[np.ndarray]:
    """Value-level forward: per-layer node states as plain arrays."""
    tape = ad.Tape()
    pvars = {name: tape.constant(arr) for name, arr in params.param_arrays().items()}
    states = forward_on_tape(tape, graph, np.asarray(features, dtype=np.float64),
                             pvars, len(params.layers), activation, reproject)
    return [s.value for s in states]


def euclidean_forward_on_tape(tape: ad.Tape, graph: Graph, features: np.ndarray,
                              pvars: dict[str, ad.Var], num_layers: int,
                              activation: str = "relu") -> ad.Var:
    _, act = _activation(activation)
    h = tape.constant(features)
    a_norm = graph.row_normalized_adjacency()
    for i in range(num_layers):
        hbar = ad.matmul(h, pvars[f"euc_layer_{i}"])
        h = act(ad.add(hbar, ad.csr_matmul(a_norm, hbar)))
    return h


# ---------------------------------------------------------------------------
# tape-level task heads
# ---------------------------------------------------------------------------


def edge_probabilities(embeddings: ad.Var, pairs: np.ndarray, r: float, t: float,
                       euclidean: bool = False) -> ad.Var:
    """Decoder probabilities for an (m, 2) array of node index pairs."""
    ii, jj = pairs[:, 0], pairs[:, 1]
    if euclidean:
        sq = ad.euclidean_pair_sqdist(embeddings, ii, jj)
    else:
        sq = ad.pair_sqdist(embeddings, ii, jj)
    return ad.fermi_dirac_op(sq, r, t)


def lp_loss(embeddings: ad.Var, pos_pairs: np.ndarray, neg_pairs: np.ndarray,
            r: float, t: float, euclidean: bool = False) -> ad.Var:
    """Binary cross entropy of the decoder over positives and negatives."""
    pairs = np.concatenate([pos_pairs, neg_pairs], axis=0)
    labels = np.concatenate([np.ones(len(pos_pairs)), np.zeros(len(neg_pairs))])
    ii, jj = pairs[:, 0], pairs[:, 1]
    if euclidean:
        sq = ad.euclidean_pair_sqdist(embeddings, ii, jj)
    else:
        sq = ad.pair_sqdist(embeddings, ii, jj)
    return ad.fermi_dirac_cross_entropy(sq, labels, r, t)


def centroid_distance_matrix(embeddings: ad.Var, pvars: dict[str, ad.Var]) -> ad.Var:
    """Materialize centroids on the manifold and take geodesic distances."""
    c = ad.expmap_origin(pvars["centroids"])
    return ad.centroid_distances_op(embeddings, c)


def nc_loss(embeddings: ad.Var, pvars: dict[str, ad.Var], train_idx: np.ndarray,
            labels: np.ndarray) -> ad.Var:
    """Softmax cross entropy over centroid-distance logits on masked nodes."""
    d = centroid_distance_matrix(embeddings, pvars)
    logits = ad.add(ad.matmul(ad.take_rows(d, train_idx), pvars["classifier_w"]),
                    pvars["classifier_b"])
    return ad.softmax_cross_entropy(logits, labels[train_idx])


def gc_loss(embeddings: ad.Var, pvars: dict[str, ad.Var], label: int) -> ad.Var:
    """Cross entropy of one graph's pooled readout against its label."""
    d = centroid_distance_matrix(embeddings, pvars)
    readout = ad.mean_rows(d, keepdims=True)
    logits = ad.add(ad.matmul(readout, pvars["classifier_w"]), pvars["classifier_b"])
    return ad.softmax_cross_entropy(logits, np.array([label]))
