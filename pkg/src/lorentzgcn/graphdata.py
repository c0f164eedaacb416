"""Graph ingestion, synthetic generators, splits, and negative sampling.

File formats (all UTF-8 text, whitespace separated, zero-based ids):
  edges    one ``u v`` pair per line, ``#`` starts a comment line
  features one ``id f1 ... fd`` line per node
  labels   one ``id label`` line per node (or per graph for graph sets)

Graphs are undirected and canonical: no self-loops, edges deduplicated and
stored as sorted (u, v) with u < v, CSR adjacency consistent with the edge
list. Everything generated here is bit-deterministic under its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
from scipy import sparse

from .errors import ConfigError, DomainError, ParseError


@dataclass
class Graph:
    """Undirected graph with CSR adjacency and optional features/labels."""

    num_nodes: int
    edges: np.ndarray                    # (E, 2) int, canonical u < v
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray | None = None   # (V, d_feat) float64
    node_labels: np.ndarray | None = None
    graph_label: int | None = None
    graph_id: int = 0
    _edge_set: frozenset = field(default=None, repr=False, compare=False)

    @classmethod
    def build(cls, num_nodes: int, edges, features=None, node_labels=None,
              graph_label=None, graph_id=0) -> "Graph":
        """Canonicalize an edge list (dedup, order, drop self-loops) and build CSR."""
        pairs = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                continue  # self-inclusion happens at aggregation time
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ParseError(f"node id out of range: edge ({u}, {v}) with {num_nodes} nodes")
            pairs.add((min(u, v), max(u, v)))
        edge_arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)

        counts = np.zeros(num_nodes, dtype=np.int64)
        for u, v in edge_arr:
            counts[u] += 1
            counts[v] += 1
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.zeros(int(indptr[-1]), dtype=np.int64)
        cursor = indptr[:-1].copy()
        for u, v in edge_arr:
            indices[cursor[u]] = v
            cursor[u] += 1
            indices[cursor[v]] = u
            cursor[v] += 1
        for i in range(num_nodes):
            indices[indptr[i]:indptr[i + 1]] = np.sort(indices[indptr[i]:indptr[i + 1]])

        feats = None if features is None else np.asarray(features, dtype=np.float64)
        labels = None if node_labels is None else np.asarray(node_labels, dtype=np.int64)
        return cls(num_nodes, edge_arr, indptr, indices, feats, labels, graph_label,
                   graph_id, frozenset(map(tuple, edge_arr.tolist())))

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        if self._edge_set is None:
            self._edge_set = frozenset(map(tuple, self.edges.tolist()))
        return (min(u, v), max(u, v)) in self._edge_set

    def adjacency_with_self_loops(self) -> sparse.csr_matrix:
        """Unit-weight CSR of A + I (the aggregation neighborhoods)."""
        v = self.num_nodes
        a = sparse.csr_matrix(
            (np.ones(len(self.indices)), self.indices, self.indptr), shape=(v, v)
        )
        return (a + sparse.identity(v, format="csr")).tocsr()

    def row_normalized_adjacency(self) -> sparse.csr_matrix:
        """D^{-1} A, the 1/|N(i)| neighbor weights (no self term)."""
        v = self.num_nodes
        a = sparse.csr_matrix(
            (np.ones(len(self.indices)), self.indices, self.indptr), shape=(v, v)
        )
        deg = np.maximum(self.degrees, 1).astype(np.float64)
        return sparse.diags(1.0 / deg).tocsr() @ a


@dataclass
class LpSplit:
    """Edge-level supervision sets for link prediction."""

    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray


@dataclass
class DatasetSpec:
    """Declarative dataset description: a generator id + parameters, or files."""

    kind: str          # "tree" | "gcset" | "files"
    params: dict = field(default_factory=dict)
    seed: int = 0
    split_fractions: tuple = (0.85, 0.05, 0.10)

    def __post_init__(self):
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split_fractions}")
        if self.kind not in ("tree", "gcset", "files"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed,
                "split_fractions": list(self.split_fractions)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(kind=d["kind"], params=dict(d.get("params", {})), seed=int(d.get("seed", 0)),
                   split_fractions=tuple(d.get("split_fractions", (0.85, 0.05, 0.10))))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _parse_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.strip()
            if not body or body.startswith("#"):
                continue
            yield lineno, body.split()


def load_graph(edge_file, feature_file=None, label_file=None, num_nodes=None) -> Graph:
    """Read a graph from the text formats above; isolated nodes are fine."""
    edges = []
    max_id = -1
    for lineno, parts in _parse_lines(edge_file):
        if len(parts) != 2:
            raise ParseError(f"{edge_file}:{lineno}: expected two node ids, got {parts!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{edge_file}:{lineno}: non-integer node id in {parts!r}") from None
        if u < 0 or v < 0:
            raise ParseError(f"{edge_file}:{lineno}: negative node id")
        edges.append((u, v))
        max_id = max(max_id, u, v)

    feat_rows = {}
    d_feat = None
    if feature_file is not None:
        for lineno, parts in _parse_lines(feature_file):
            try:
                nid = int(parts[0])
                vals = [float(x) for x in parts[1:]]
            except ValueError:
                raise ParseError(f"{feature_file}:{lineno}: malformed feature line") from None
            if d_feat is None:
                d_feat = len(vals)
            elif len(vals) != d_feat:
                raise ParseError(f"{feature_file}:{lineno}: expected {d_feat} features, got {len(vals)}")
            feat_rows[nid] = vals
            max_id = max(max_id, nid)

    label_rows = {}
    if label_file is not None:
        for lineno, parts in _parse_lines(label_file):
            if len(parts) != 2:
                raise ParseError(f"{label_file}:{lineno}: expected 'id label'")
            try:
                nid, lab = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{label_file}:{lineno}: non-integer entry") from None
            label_rows[nid] = lab
            max_id = max(max_id, nid)

    n = num_nodes if num_nodes is not None else max_id + 1
    if n <= 0:
        raise ParseError(f"{edge_file}: no nodes found")
    for u, v in edges:
        if u >= n or v >= n:
            raise ParseError(f"{edge_file}: node id {max(u, v)} out of range for {n} nodes")

    features = None
    if feature_file is not None:
        features = np.zeros((n, d_feat or 0))
        for nid, vals in feat_rows.items():
            if nid >= n:
                raise ParseError(f"{feature_file}: node id {nid} out of range for {n} nodes")
            features[nid] = vals
    labels = None
    if label_file is not None:
        labels = np.full(n, -1, dtype=np.int64)
        for nid, lab in label_rows.items():
            if nid >= n:
                raise ParseError(f"{label_file}: node id {nid} out of range for {n} nodes")
            labels[nid] = lab
    return Graph.build(n, edges, features=features, node_labels=labels)


def save_graph(g: Graph, out_dir, prefix: str = "graph") -> dict:
    """Write the canonical edge list (+ features/labels if present); returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    edge_path = out_dir / f"{prefix}.edges.txt"
    with open(edge_path, "w", encoding="utf-8") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
    paths["edges"] = str(edge_path)
    if g.features is not None:
        feat_path = out_dir / f"{prefix}.features.txt"
        with open(feat_path, "w", encoding="utf-8") as fh:
            for i, row in enumerate(g.features):
                fh.write(str(i) + " " + " ".join(repr(float(x)) for x in row) + "\n")
        paths["features"] = str(feat_path)
    if g.node_labels is not None:
        lab_path = out_dir / f"{prefix}.labels.txt"
        with open(lab_path, "w", encoding="utf-8") as fh:
            for i, lab in enumerate(g.node_labels):
                fh.write(f"{i} {lab}\n")
        paths["labels"] = str(lab_path)
    return paths


# ---------------------------------------------------------------------------
# splits and negative sampling
# ---------------------------------------------------------------------------


def sample_negatives(g: Graph, k: int, rng, exclude=()) -> np.ndarray:
    """Draw k uniform non-edges by rejection, excluding given pairs.

    ``rng`` is a seed or a numpy Generator. Raises once the attempt cap is
    hit (near-complete graphs).
    """
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    excluded = {(min(u, v), max(u, v)) for u, v in exclude}
    out = []
    seen = set()
    cap = 200 * k + 10_000
    attempts = 0
    n = g.num_nodes
    while len(out) < k:
        attempts += 1
        if attempts > cap:
            raise DomainError(f"sample_negatives: attempt cap {cap} exceeded (graph too dense?)")
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in seen or pair in excluded or g.has_edge(*pair):
            continue
        seen.add(pair)
        out.append(pair)
    return np.array(out, dtype=np.int64)


def make_lp_split(g: Graph, fractions=(0.85, 0.05, 0.10), seed: int = 0) -> LpSplit:
    """Hold out positives for validation/test and fix equal-count negatives.

    Training negatives are not fixed here; they are redrawn per epoch by
    the training loop. The message-passing graph during training must be
    rebuilt from train_pos only.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    e = g.num_edges
    n_val = int(round(fractions[1] * e))
    n_test = int(round(fractions[2] * e))
    n_train = e - n_val - n_test
    if n_train <= 0 or (fractions[1] > 0 and n_val == 0) or (fractions[2] > 0 and n_test == 0):
        raise DomainError(f"graph too small to split: {e} edges with fractions {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(e)
    val_pos = g.edges[order[:n_val]]
    test_pos = g.edges[order[n_val:n_val + n_test]]
    train_pos = g.edges[order[n_val + n_test:]]
    negs = sample_negatives(g, n_val + n_test, rng)
    return LpSplit(train_pos=train_pos, val_pos=val_pos, test_pos=test_pos,
                   val_neg=negs[:n_val], test_neg=negs[n_val:])


def stratified_split(labels: np.ndarray, fractions, seed: int) -> tuple:
    """Per-class shuffled index split; returns (train, val, test) index arrays."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        train.extend(idx[:n_tr])
        val.extend(idx[n_tr:n_tr + n_va])
        test.extend(idx[n_tr + n_va:])
    return (np.array(sorted(train), dtype=np.int64),
            np.array(sorted(val), dtype=np.int64),
            np.array(sorted(test), dtype=np.int64))


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------


def generate_tree(depth: int, branching: int, noise_edges: int = 0, seed: int = 0,
                  feature_noise: float = 0.3) -> Graph:
    """Balanced tree plus optional uniform extra edges.

    Node features are a one-hot of the node's depth plus seeded Gaussian
    noise accumulated root-to-leaf (each node adds a fresh draw to its
    parent's noise), so relatives share most of their noise the way
    spreading-process data does. The binary node label buckets depth at
    depth/2. The underlying tree (before noise edges) is connected,
    acyclic, and 0-hyperbolic.
    """
    if depth < 1:
        raise ConfigError("generate_tree: depth must be >= 1")
    if branching >= 2:
        n = (branching ** (depth + 1) - 1) // (branching - 1)
    else:
        n = depth + 1
    edges = [((k - 1) // branching, k) for k in range(1, n)]
    depths = np.zeros(n, dtype=np.int64)
    for k in range(1, n):
        depths[k] = depths[(k - 1) // branching] + 1

    rng = np.random.default_rng(seed)
    tree_pairs = {(min(u, v), max(u, v)) for u, v in edges}
    added = 0
    attempts = 0
    while added < noise_edges:
        attempts += 1
        if attempts > 200 * max(noise_edges, 1) + 10_000:
            raise DomainError("generate_tree: could not place requested noise edges")
        u, v = int(rng.integers(n)), int(rng.integers(n))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in tree_pairs:
            continue
        tree_pairs.add(pair)
        edges.append(pair)
        added += 1

    one_hot = np.zeros((n, depth + 1))
    one_hot[np.arange(n), depths] = 1.0
    steps = feature_noise * rng.standard_normal((n, depth + 1))
    noise = steps.copy()
    for k in range(1, n):  # parents precede children in index order
        noise[k] += noise[(k - 1) // branching]
    features = one_hot + noise
    labels = (depths > depth / 2).astype(np.int64)
    return Graph.build(n, edges, features=features, node_labels=labels)


def _structural_features(nxg: nx.Graph) -> np.ndarray:
    """Per-node [normalized degree, clustering coefficient]."""
    n = nxg.number_of_nodes()
    deg = np.array([d for _, d in sorted(nxg.degree())], dtype=np.float64)
    clus = nx.clustering(nxg)
    clus = np.array([clus[i] for i in range(n)], dtype=np.float64)
    return np.stack([deg / max(n - 1, 1), clus], axis=1)


def generate_classification_set(count_per_class: int, size_range=(30, 60), seed: int = 0,
                                kinds=("er", "ba", "ws"), er_p: float = 0.12,
                                ba_m: int = 2, ws_k: int = 4, ws_beta: float = 0.15) -> list:
    """Labeled random graphs from three classic generators.

    Class label = generator index in ``kinds``. Node features are the
    structural pair [normalized degree, clustering coefficient]; sizes are
    uniform over ``size_range``.
    """
    if count_per_class < 1:
        raise ConfigError("generate_classification_set: count_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    graphs = []
    gid = 0
    for label, kind in enumerate(kinds):
        for _ in range(count_per_class):
            n = int(rng.integers(size_range[0], size_range[1] + 1))
            s = int(rng.integers(0, 2**31 - 1))
            if kind == "er":
                nxg = nx.gnp_random_graph(n, er_p, seed=s)
            elif kind == "ba":
                nxg = nx.barabasi_albert_graph(n, ba_m, seed=s)
            elif kind == "ws":
                nxg = nx.watts_strogatz_graph(n, ws_k, ws_beta, seed=s)
            else:
                raise ConfigError(f"unknown generator kind {kind!r}")
            g = Graph.build(n, list(nxg.edges()), features=_structural_features(nxg),
                            graph_label=label, graph_id=gid)
            graphs.append(g)
            gid += 1
    return graphs


# ---------------------------------------------------------------------------
# dataset materialization and serialization
# ---------------------------------------------------------------------------


def build_dataset(spec: DatasetSpec):
    """Materialize a DatasetSpec: a Graph for node tasks, a list for gcset."""
    p = dict(spec.params)
    if spec.kind == "tree":
        return generate_tree(
            depth=int(p.get("depth", 6)), branching=int(p.get("branching", 3)),
            noise_edges=int(p.get("noise_edges", 0)), seed=spec.seed,
            feature_noise=float(p.get("feature_noise", 0.1)),
        )
    if spec.kind == "gcset":
        return generate_classification_set(
            count_per_class=int(p.get("count_per_class", 20)),
            size_range=tuple(p.get("size_range", (30, 60))), seed=spec.seed,
            kinds=tuple(p.get("kinds", ("er", "ba", "ws"))),
            er_p=float(p.get("er_p", 0.12)), ba_m=int(p.get("ba_m", 2)),
            ws_k=int(p.get("ws_k", 4)), ws_beta=float(p.get("ws_beta", 0.15)),
        )
    if spec.kind == "files":
        return load_graph(p["edges"], p.get("features"), p.get("labels"),
                          num_nodes=p.get("num_nodes"))
    raise ConfigError(f"unknown dataset kind {spec.kind!r}")


def save_dataset(spec: DatasetSpec, out_dir) -> None:
    """Generate from ``spec`` and serialize with a manifest of its parameters."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = build_dataset(spec)
    manifest = {"spec": spec.to_dict()}
    if isinstance(data, list):
        manifest["num_graphs"] = len(data)
        with open(out_dir / "graph_labels.txt", "w", encoding="utf-8") as fh:
            for g in data:
                fh.write(f"{g.graph_id} {g.graph_label}\n")
        for g in data:
            save_graph(g, out_dir, prefix=f"graph_{g.graph_id:05d}")
    else:
        save_graph(data, out_dir, prefix="graph")
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
