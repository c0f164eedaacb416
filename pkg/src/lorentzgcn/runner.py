"""Training and evaluation loops for the three tasks, plus run plumbing.

Tasks:
  lp  link prediction: per epoch, forward on the train-edge graph, binary
      cross entropy of the decoder over train positives and freshly drawn
      negatives, Riemannian + Euclidean steps; ROC AUC for selection.
  nc  transductive node classification: centroid-distance logits under
      softmax cross entropy, plus lambda_lp times the edge loss on the
      observed edges as a regularizer; F1 for binary labels, accuracy
      otherwise.
  gc  graph classification: one tape per graph, average-pooled readout,
      full-batch gradient over the training set per step; macro F1.

All randomness flows from the config seed through one generator per run,
so identical configs give bit-identical results. The test metric is
always computed once, from the best-validation snapshot.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from . import model as mdl
from .errors import ConfigError, ContractViolation, DomainError
from .graphdata import (
    DatasetSpec,
    Graph,
    LpSplit,
    build_dataset,
    make_lp_split,
    sample_negatives,
    stratified_split,
)
from .optimizer import OptState, euclidean_step, riemannian_step, stiefel_error

GC_THREADS_ENV = "HHGCN_THREADS"


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def roc_auc(pos_scores, neg_scores) -> float:
    """Area under the ROC curve via the rank statistic; ties get midranks."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DomainError("roc_auc: empty score set")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0)
                 / (pos.size * neg.size))


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise DomainError("accuracy: empty label set")
    return float(np.mean(y_true == y_pred))


def f1_binary(y_true, y_pred) -> float:
    """F1 of the positive class (label 1)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = np.sum((y_pred == 1) & (y_true == 1))
    fp = np.sum((y_pred == 1) & (y_true == 0))
    fn = np.sum((y_pred == 0) & (y_true == 1))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom > 0 else 0.0


def f1_macro(y_true, y_pred, num_classes: int | None = None) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if num_classes is None:
        num_classes = int(max(y_true.max(), y_pred.max())) + 1
    scores = []
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Declarative description of one run; JSON-serializable."""

    task: str
    dataset: DatasetSpec
    dim: int = 16
    num_layers: int = 2
    epochs: int = 200
    lr_riemannian: float = 0.05
    lr_euclidean: float = 0.05
    seed: int = 0
    num_centroids: int = 16
    r: float = 2.0
    t: float = 1.0
    activation: str = "leaky_relu"
    lambda_lp: float = 1.0
    patience: int = 100
    model_kind: str = "h2h"          # "h2h" | "euclidean" (lp baseline)
    reproject: bool = True
    adaptive_euclidean: bool = False
    eval_every: int = 1

    def __post_init__(self):
        if self.task not in ("lp", "nc", "gc"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model_kind not in ("h2h", "euclidean"):
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        for name in ("dim", "num_layers", "epochs", "patience", "eval_every", "num_centroids"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr_riemannian <= 0 or self.lr_euclidean <= 0 or self.t <= 0:
            raise ConfigError("learning rates and t must be > 0")
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSpec.from_dict(self.dataset)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "dataset"}
        d["dataset"] = self.dataset.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["dataset"] = DatasetSpec.from_dict(d["dataset"])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunResult:
    """Per-epoch history plus the single test measurement.

    ``wall_time_s`` is kept out of the canonical JSON so that identical
    seeded runs serialize byte-identically.
    """

    task: str
    config: dict
    seed: int
    config_hash: str
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_metric: float = float("nan")
    test_metrics: dict = field(default_factory=dict)
    test_metric: float = float("nan")
    epochs_run: int = 0
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        doc = {k: v for k, v in self.__dict__.items() if k != "wall_time_s"}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


# ---------------------------------------------------------------------------
# shared training internals
# ---------------------------------------------------------------------------


def standardize_features(data):
    """Center feature columns and rescale by one global rms, in place.

    A single scale (not per-column z-scores) keeps rare indicator columns
    from being blown up while still normalizing the magnitude the encoder
    sees. For graph sets the statistics pool every graph's nodes, so
    features stay comparable across graphs.
    """
    graphs = data if isinstance(data, list) else [data]
    stacked = np.concatenate([g.features for g in graphs], axis=0)
    mu = stacked.mean(axis=0)
    rms = float(np.sqrt(np.mean((stacked - mu) ** 2)))
    if rms < 1e-12:
        rms = 1.0
    for g in graphs:
        g.features = (g.features - mu) / rms
    return data


def _check_manifold_params(params) -> None:
    for i, w in enumerate(getattr(params, "layers", [])):
        if isinstance(params, mdl.ModelParams) and stiefel_error(w) > 1e-6:
            raise ContractViolation(f"layer_{i} drifted off the Stiefel manifold")


def _apply_step(params, grads: dict, state: OptState) -> None:
    riem = set(params.riemannian_names())
    for name in riem:
        idx = int(name.split("_")[1])
        params.layers[idx] = riemannian_step(params.layers[idx], grads[name],
                                             state.lr_riemannian)
    euc = {n: a for n, a in params.param_arrays().items() if n not in riem}
    euclidean_step(euc, {n: grads[n] for n in euc}, state)


def _finite_or_abort(loss_value: float, epoch: int, cfg: TrainConfig) -> None:
    if not np.isfinite(loss_value):
        raise DomainError(
            f"non-finite loss at epoch {epoch} "
            f"(lr_riemannian={cfg.lr_riemannian}, lr_euclidean={cfg.lr_euclidean})"
        )


def _node_embeddings(graph: Graph, params, cfg: TrainConfig) -> np.ndarray:
    """Value-level final-layer embeddings for evaluation and export."""
    tape = ad.Tape()
    pvars = {n: tape.constant(a) for n, a in params.param_arrays().items()}
    if isinstance(params, mdl.EuclideanParams):
        out = mdl.euclidean_forward_on_tape(tape, graph, graph.features, pvars,
                                            len(params.layers), cfg.activation)
        return out.value
    states = mdl.forward_on_tape(tape, graph, graph.features, pvars,
                                 len(params.layers), cfg.activation, cfg.reproject)
    return states[-1].value


def _edge_scores(emb: np.ndarray, pairs: np.ndarray, params, euclidean: bool) -> np.ndarray:
    tape = ad.Tape()
    h = tape.constant(emb)
    return mdl.edge_probabilities(h, pairs, params.r, params.t, euclidean=euclidean).value


def _lp_auc(emb: np.ndarray, pos: np.ndarray, neg: np.ndarray, params,
            euclidean: bool) -> float:
    return roc_auc(_edge_scores(emb, pos, params, euclidean),
                   _edge_scores(emb, neg, params, euclidean))


def _nc_predictions(graph: Graph, params: mdl.ModelParams, cfg: TrainConfig) -> np.ndarray:
    emb = _node_embeddings(graph, params, cfg)
    cents = mdl.embed_input(params.centroids, np.eye(params.centroids.shape[1]))
    d = mdl.centroid_distances(emb, cents)
    return np.argmax(d @ params.classifier_w + params.classifier_b, axis=1)


def _nc_metrics(labels, preds, idx, num_classes: int) -> dict:
    out = {"accuracy": accuracy(labels[idx], preds[idx]),
           "macro_f1": f1_macro(labels[idx], preds[idx], num_classes)}
    if num_classes == 2:
        out["f1"] = f1_binary(labels[idx], preds[idx])
    return out


def _gc_predictions(graphs: list, idx, params: mdl.ModelParams, cfg: TrainConfig) -> np.ndarray:
    preds = []
    for i in idx:
        g = graphs[i]
        emb = _node_embeddings(g, params, cfg)
        cents = mdl.embed_input(params.centroids, np.eye(params.centroids.shape[1]))
        readout = mdl.gc_readout(mdl.centroid_distances(emb, cents))
        preds.append(int(np.argmax(readout @ params.classifier_w + params.classifier_b)))
    return np.array(preds, dtype=np.int64)


# ---------------------------------------------------------------------------
# task loops
# ---------------------------------------------------------------------------


def train_lp(cfg: TrainConfig, verbose: bool = False) -> tuple[RunResult, object]:
    """Link-prediction loop; returns (result, trained params at best epoch)."""
    t0 = time.perf_counter()
    graph = build_dataset(cfg.dataset)
    if not isinstance(graph, Graph) or graph.features is None:
        raise ConfigError("lp task needs a single graph with node features")
    standardize_features(graph)
    split = make_lp_split(graph, cfg.dataset.split_fractions, seed=cfg.seed)
    train_graph = Graph.build(graph.num_nodes, split.train_pos, features=graph.features)

    rng = np.random.default_rng(cfg.seed)
    euclidean = cfg.model_kind == "euclidean"
    d_feat = graph.features.shape[1]
    if euclidean:
        params = mdl.EuclideanParams.init(rng, d_feat, cfg.dim, cfg.num_layers, cfg.r, cfg.t)
    else:
        params = mdl.ModelParams.init(rng, d_feat, cfg.dim, cfg.num_layers, r=cfg.r, t=cfg.t)
    state = OptState(cfg.lr_riemannian, cfg.lr_euclidean, adaptive=cfg.adaptive_euclidean)

    result = RunResult(task="lp", config=cfg.to_dict(), seed=cfg.seed,
                       config_hash=cfg.config_hash())
    best_params = params.copy()
    best_val = -np.inf
    best_epoch = -1

    for epoch in range(cfg.epochs):
        tape = ad.Tape()
        pvars = {n: tape.param(n, a) for n, a in params.param_arrays().items()}
        if euclidean:
            emb = mdl.euclidean_forward_on_tape(tape, train_graph, graph.features, pvars,
                                                cfg.num_layers, cfg.activation)
        else:
            emb = mdl.forward_on_tape(tape, train_graph, graph.features, pvars,
                                      cfg.num_layers, cfg.activation, cfg.reproject)[-1]
        negs = sample_negatives(graph, len(split.train_pos), rng)
        loss = mdl.lp_loss(emb, split.train_pos, negs, cfg.r, cfg.t, euclidean=euclidean)
        _finite_or_abort(float(loss.value), epoch, cfg)
        grads = tape.backward(loss)
        _apply_step(params, grads, state)
        _check_manifold_params(params)

        row = {"epoch": epoch, "train_loss": float(loss.value)}
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            emb_now = _node_embeddings(train_graph, params, cfg)
            val_auc = _lp_auc(emb_now, split.val_pos, split.val_neg, params, euclidean)
            row["val_auc"] = val_auc
            if val_auc > best_val:
                best_val, best_epoch, best_params = val_auc, epoch, params.copy()
        result.history.append(row)
        if verbose:
            print(json.dumps(row, sort_keys=True), flush=True)
        result.epochs_run = epoch + 1
        if best_epoch >= 0 and epoch - best_epoch >= cfg.patience:
            break

    emb_best = _node_embeddings(train_graph, best_params, cfg)
    test_auc = _lp_auc(emb_best, split.test_pos, split.test_neg, best_params, euclidean)
    result.best_epoch = best_epoch
    result.best_val_metric = best_val
    result.test_metrics = {"auc": test_auc}
    result.test_metric = test_auc
    result.wall_time_s = time.perf_counter() - t0
    return result, best_params


def train_nc(cfg: TrainConfig, verbose: bool = False) -> tuple[RunResult, mdl.ModelParams]:
    """Node-classification loop with the edge-loss regularizer."""
    t0 = time.perf_counter()
    graph = build_dataset(cfg.dataset)
    if not isinstance(graph, Graph) or graph.features is None or graph.node_labels is None:
        raise ConfigError("nc task needs a single graph with features and node labels")
    standardize_features(graph)
    labels = graph.node_labels
    if labels.min() < 0:
        raise ConfigError("nc: every node needs a label in [0, num_classes)")
    num_classes = int(labels.max()) + 1
    train_idx, val_idx, test_idx = stratified_split(labels, cfg.dataset.split_fractions,
                                                    seed=cfg.seed)
    primary = "f1" if num_classes == 2 else "accuracy"

    rng = np.random.default_rng(cfg.seed)
    params = mdl.ModelParams.init(rng, graph.features.shape[1], cfg.dim, cfg.num_layers,
                                  cfg.num_centroids, num_classes, cfg.r, cfg.t)
    state = OptState(cfg.lr_riemannian, cfg.lr_euclidean, adaptive=cfg.adaptive_euclidean)

    result = RunResult(task="nc", config=cfg.to_dict(), seed=cfg.seed,
                       config_hash=cfg.config_hash())
    best_params = params.copy()
    best_val = -np.inf
    best_epoch = -1

    for epoch in range(cfg.epochs):
        tape = ad.Tape()
        pvars = {n: tape.param(n, a) for n, a in params.param_arrays().items()}
        emb = mdl.forward_on_tape(tape, graph, graph.features, pvars,
                                  cfg.num_layers, cfg.activation, cfg.reproject)[-1]
        loss = mdl.nc_loss(emb, pvars, train_idx, labels)
        if cfg.lambda_lp > 0 and graph.num_edges > 0:
            negs = sample_negatives(graph, graph.num_edges, rng)
            reg = mdl.lp_loss(emb, graph.edges, negs, cfg.r, cfg.t)
            loss = ad.add(loss, ad.scale(reg, cfg.lambda_lp))
        _finite_or_abort(float(loss.value), epoch, cfg)
        grads = tape.backward(loss)
        _apply_step(params, grads, state)
        _check_manifold_params(params)

        row = {"epoch": epoch, "train_loss": float(loss.value)}
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            preds = _nc_predictions(graph, params, cfg)
            val = _nc_metrics(labels, preds, val_idx, num_classes)[primary]
            row["val_metric"] = val
            if val > best_val:
                best_val, best_epoch, best_params = val, epoch, params.copy()
        result.history.append(row)
        if verbose:
            print(json.dumps(row, sort_keys=True), flush=True)
        result.epochs_run = epoch + 1
        if best_epoch >= 0 and epoch - best_epoch >= cfg.patience:
            break

    preds = _nc_predictions(graph, best_params, cfg)
    metrics = _nc_metrics(labels, preds, test_idx, num_classes)
    result.best_epoch = best_epoch
    result.best_val_metric = best_val
    result.test_metrics = metrics
    result.test_metric = metrics[primary]
    result.wall_time_s = time.perf_counter() - t0
    return result, best_params


def _gc_graph_grads(g: Graph, params: mdl.ModelParams, cfg: TrainConfig):
    tape = ad.Tape()
    pvars = {n: tape.param(n, a) for n, a in params.param_arrays().items()}
    emb = mdl.forward_on_tape(tape, g, g.features, pvars, cfg.num_layers,
                              cfg.activation, cfg.reproject)[-1]
    loss = mdl.gc_loss(emb, pvars, g.graph_label)
    return float(loss.value), tape.backward(loss)


def train_gc(cfg: TrainConfig, verbose: bool = False) -> tuple[RunResult, mdl.ModelParams]:
    """Graph-classification loop: full-batch gradient over training graphs.

    Per-graph forwards run on independent tapes and may fan out across
    HHGCN_THREADS workers; gradients are reduced in ascending graph-id
    order either way, so results do not depend on scheduling or on the
    order of the input list.
    """
    t0 = time.perf_counter()
    graphs = build_dataset(cfg.dataset)
    if not isinstance(graphs, list) or not graphs:
        raise ConfigError("gc task needs a labeled graph set")
    standardize_features(graphs)
    glabels = np.array([g.graph_label for g in graphs], dtype=np.int64)
    if glabels.min() < 0:
        raise ConfigError("gc: every graph needs a label")
    num_classes = int(glabels.max()) + 1
    train_idx, val_idx, test_idx = stratified_split(glabels, cfg.dataset.split_fractions,
                                                    seed=cfg.seed)
    by_id = sorted(train_idx, key=lambda i: graphs[i].graph_id)

    rng = np.random.default_rng(cfg.seed)
    params = mdl.ModelParams.init(rng, graphs[0].features.shape[1], cfg.dim, cfg.num_layers,
                                  cfg.num_centroids, num_classes, cfg.r, cfg.t)
    state = OptState(cfg.lr_riemannian, cfg.lr_euclidean, adaptive=cfg.adaptive_euclidean)
    threads = max(1, int(os.environ.get(GC_THREADS_ENV, "1")))

    result = RunResult(task="gc", config=cfg.to_dict(), seed=cfg.seed,
                       config_hash=cfg.config_hash())
    best_params = params.copy()
    best_val = -np.inf
    best_epoch = -1

    for epoch in range(cfg.epochs):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outs = list(pool.map(lambda i: _gc_graph_grads(graphs[i], params, cfg), by_id))
        else:
            outs = [_gc_graph_grads(graphs[i], params, cfg) for i in by_id]
        n = len(outs)
        total = {}
        loss_val = 0.0
        for lv, grads in outs:  # ascending graph-id order (by construction)
            loss_val += lv / n
            for name, g in grads.items():
                total[name] = total.get(name, 0.0) + g / n
        _finite_or_abort(loss_val, epoch, cfg)
        _apply_step(params, total, state)
        _check_manifold_params(params)

        row = {"epoch": epoch, "train_loss": loss_val}
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            preds = _gc_predictions(graphs, val_idx, params, cfg)
            val = f1_macro(glabels[val_idx], preds, num_classes)
            row["val_metric"] = val
            if val > best_val:
                best_val, best_epoch, best_params = val, epoch, params.copy()
        result.history.append(row)
        if verbose:
            print(json.dumps(row, sort_keys=True), flush=True)
        result.epochs_run = epoch + 1
        if best_epoch >= 0 and epoch - best_epoch >= cfg.patience:
            break

    preds = _gc_predictions(graphs, test_idx, best_params, cfg)
    metrics = {"macro_f1": f1_macro(glabels[test_idx], preds, num_classes),
               "accuracy": accuracy(glabels[test_idx], preds)}
    result.best_epoch = best_epoch
    result.best_val_metric = best_val
    result.test_metrics = metrics
    result.test_metric = metrics["macro_f1"]
    result.wall_time_s = time.perf_counter() - t0
    return result, best_params


def train(cfg: TrainConfig, verbose: bool = False) -> tuple[RunResult, object]:
    return {"lp": train_lp, "nc": train_nc, "gc": train_gc}[cfg.task](cfg, verbose=verbose)


# ---------------------------------------------------------------------------
# evaluation from trained parameters
# ---------------------------------------------------------------------------


def evaluate(params, cfg: TrainConfig, which: str = "test") -> dict:
    """Metrics of a trained model on the configured dataset's split.

    Splits are reconstructed deterministically from the config seed, so a
    checkpoint plus its config echo is enough to reproduce the numbers.
    """
    if which not in ("val", "test"):
        raise ConfigError("which must be 'val' or 'test'")
    data = standardize_features(build_dataset(cfg.dataset))
    if cfg.task == "lp":
        split = make_lp_split(data, cfg.dataset.split_fractions, seed=cfg.seed)
        train_graph = Graph.build(data.num_nodes, split.train_pos, features=data.features)
        emb = _node_embeddings(train_graph, params, cfg)
        pos = split.val_pos if which == "val" else split.test_pos
        neg = split.val_neg if which == "val" else split.test_neg
        return {"auc": _lp_auc(emb, pos, neg, params, cfg.model_kind == "euclidean")}
    if cfg.task == "nc":
        labels = data.node_labels
        num_classes = int(labels.max()) + 1
        _, val_idx, test_idx = stratified_split(labels, cfg.dataset.split_fractions, cfg.seed)
        idx = val_idx if which == "val" else test_idx
        preds = _nc_predictions(data, params, cfg)
        return _nc_metrics(labels, preds, idx, num_classes)
    glabels = np.array([g.graph_label for g in data], dtype=np.int64)
    num_classes = int(glabels.max()) + 1
    _, val_idx, test_idx = stratified_split(glabels, cfg.dataset.split_fractions, cfg.seed)
    idx = val_idx if which == "val" else test_idx
    preds = _gc_predictions(data, idx, params, cfg)
    return {"macro_f1": f1_macro(glabels[idx], preds, num_classes),
            "accuracy": accuracy(glabels[idx], preds)}


# ---------------------------------------------------------------------------
# checkpoints and embedding export
# ---------------------------------------------------------------------------


def save_checkpoint(out_dir, params, cfg: TrainConfig) -> None:
    """JSON manifest plus raw little-endian float64 arrays in params.bin."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = params.param_arrays()
    manifest = {"format": "float64-le", "model_kind": cfg.model_kind,
                "r": params.r, "t": params.t, "config": cfg.to_dict(), "arrays": []}
    offset = 0
    with open(out_dir / "params.bin", "wb") as fh:
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            fh.write(a.tobytes())
            manifest["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir) -> tuple[object, TrainConfig]:
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    blob = (ckpt_dir / "params.bin").read_bytes()
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = a.reshape(shape).astype(np.float64)
    cfg = TrainConfig.from_dict(manifest["config"])
    if manifest["model_kind"] == "euclidean":
        layers = [arrays[f"euc_layer_{i}"] for i in range(cfg.num_layers)]
        return mdl.EuclideanParams(layers, manifest["r"], manifest["t"]), cfg
    layers = [arrays[f"layer_{i}"] for i in range(cfg.num_layers)]
    params = mdl.ModelParams(arrays["input_proj"], arrays["input_bias"], layers,
                             arrays.get("centroids"), arrays.get("classifier_w"),
                             arrays.get("classifier_b"), manifest["r"], manifest["t"])
    return params, cfg


def export_embeddings(out_path, params, cfg: TrainConfig) -> None:
    """Final-layer node coordinates as TSV: node_id then n+1 columns."""
    data = standardize_features(build_dataset(cfg.dataset))
    graph = data if isinstance(data, Graph) else data[0]
    if cfg.task == "lp":
        split = make_lp_split(graph, cfg.dataset.split_fractions, seed=cfg.seed)
        graph = Graph.build(graph.num_nodes, split.train_pos, features=graph.features)
    emb = _node_embeddings(graph, params, cfg)
    with open(out_path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(emb):
            fh.write(str(i) + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
