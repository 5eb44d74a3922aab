"""Graph storage, ingestion, synthetic generation and exact hop partitioning."""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels

DEFAULT_NEGATIVE_CAP = 256
GRAPH_MAGIC = b"GSCL1"


class GraphFormatError(ValueError):
    """Malformed or inconsistent graph input."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form with node features and optional labels.

    ``csr_targets`` rows are sorted and deduplicated, the adjacency is
    symmetric and self-loops are never stored.
    """

    num_nodes: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        for arr in (self.csr_offsets, self.csr_targets, self.features):
            arr.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @classmethod
    def from_edges(cls, num_nodes, edges, features=None, labels=None) -> "Graph":
        """Build a graph from an ``(E, 2)`` edge array.

        Directed pairs are symmetrised, duplicates merged, self-loops dropped.
        """
        num_nodes = int(num_nodes)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            bad = edges[(edges < 0).any(1) | (edges >= num_nodes).any(1)][0]
            raise GraphFormatError(
                f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {num_nodes})"
            )
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]])
        keys = np.unique(both[:, 0] * num_nodes + both[:, 1])
        src = keys // num_nodes
        dst = keys % num_nodes
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=offsets[1:])
        if features is None:
            features = np.zeros((num_nodes, 0))
        features = np.array(features)
        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise GraphFormatError(
                f"feature matrix has {features.shape[0] if features.ndim else 0} rows, "
                f"expected {num_nodes}"
            )
        if labels is not None:
            labels = np.array(labels, dtype=np.int64)
            if labels.shape != (num_nodes,):
                raise GraphFormatError(f"labels must have shape ({num_nodes},)")
            if labels.size and labels.min() < 0:
                raise GraphFormatError("labels must be non-negative class ids")
        return cls(num_nodes, offsets, dst.astype(np.int64), features, labels)

    @property
    def num_edges(self) -> int:
        """Directed edge count, i.e. twice the number of undirected edges."""
        return int(self.csr_targets.shape[0])

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, u) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[u]:self.csr_offsets[u + 1]]

    def edge_array(self, directed=False) -> np.ndarray:
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        pairs = np.stack([src, self.csr_targets], axis=1)
        if directed:
            return pairs
        return pairs[pairs[:, 0] < pairs[:, 1]]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("graph has no labels")
        return self.labels


@dataclass(frozen=True)
class HopPartition:
    """Exact hop sets around one anchor plus a sample of the far region.

    ``hop_sets[n - 1]`` holds the nodes at shortest-path distance ``n``.
    ``beyond_sample`` is drawn from nodes farther than ``k`` hops, unreachable
    nodes included. All arrays are sorted.
    """

    anchor: int
    k: int
    hop_sets: tuple
    beyond_sample: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def hop(self, h) -> np.ndarray:
        """Members of hop ``h`` in ``1..k+1``; ``k+1`` is the far bucket."""
        if h == self.k + 1:
            return self.beyond_sample
        return self.hop_sets[h - 1]

    def sizes(self) -> np.ndarray:
        return np.array([len(self.hop(h)) for h in range(1, self.k + 2)], dtype=np.int64)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _read_text(source) -> str:
    if isinstance(source, io.TextIOBase):
        return source.read()
    return Path(source).read_text()


def parse_edge_list(text: str) -> np.ndarray:
    """Parse ``u v`` lines; ``#`` starts a comment. Returns an ``(E, 2)`` array."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer node id in {raw!r}") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def parse_features_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise GraphFormatError("feature CSV is empty")
    body = [r for r in rows[1:] if r]
    width = len(rows[0])
    out = np.empty((len(body), width), dtype=np.float64)
    for i, row in enumerate(body):
        if len(row) != width:
            raise GraphFormatError(f"line {i + 2}: expected {width} columns, got {len(row)}")
        try:
            out[i] = [float(v) for v in row]
        except ValueError:
            raise GraphFormatError(f"line {i + 2}: non-numeric feature value") from None
    return out


def parse_labels_csv(text: str, num_nodes: int) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    labels = np.full(num_nodes, -1, dtype=np.int64)
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise GraphFormatError(f"line {i}: expected 'node_id,class_id'")
        try:
            node, cls = int(row[0]), int(row[1])
        except ValueError:
            raise GraphFormatError(f"line {i}: non-integer label entry") from None
        if not 0 <= node < num_nodes:
            raise GraphFormatError(f"line {i}: node id {node} out of range")
        if cls < 0:
            raise GraphFormatError(f"line {i}: negative class id")
        labels[node] = cls
    if (labels < 0).any():
        missing = int(np.flatnonzero(labels < 0)[0])
        raise GraphFormatError(f"no label given for node {missing}")
    return labels


def load_graph(edges_source, features_source, labels_source=None) -> Graph:
    """Load a graph from an edge-list file, a feature CSV and an optional label CSV.

    Sources may be paths or open text streams. The feature row count fixes
    the number of nodes.
    """
    features = parse_features_csv(_read_text(features_source))
    n = features.shape[0]
    edges = parse_edge_list(_read_text(edges_source))
    labels = None
    if labels_source is not None:
        labels = parse_labels_csv(_read_text(labels_source), n)
    return Graph.from_edges(n, edges, features, labels)


def write_graph_text(g: Graph, edges_path, features_path, labels_path=None):
    """Inverse of :func:`load_graph`."""
    with open(edges_path, "w") as fh:
        fh.write(f"# {g.num_nodes} nodes, {g.num_edges // 2} undirected edges\n")
        for u, v in g.edge_array():
            fh.write(f"{u} {v}\n")
    with open(features_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(g.features.shape[1])])
        for row in g.features:
            w.writerow([repr(float(x)) for x in row])
    if labels_path is not None and g.labels is not None:
        with open(labels_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "class_id"])
            for i, y in enumerate(g.labels):
                w.writerow([i, int(y)])


def save_graph_binary(g: Graph, path):
    """Binary cache: magic, u64 N, u64 nnz, u64 D, u8 has_labels, then
    i64 offsets, i64 targets, f32 features (row-major), optional i64 labels.
    All little-endian."""
    feats = np.ascontiguousarray(g.features, dtype="<f4")
    has_labels = g.labels is not None
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<QQQB", g.num_nodes, g.num_edges, feats.shape[1], has_labels))
        fh.write(g.csr_offsets.astype("<i8").tobytes())
        fh.write(g.csr_targets.astype("<i8").tobytes())
        fh.write(feats.tobytes())
        if has_labels:
            fh.write(g.labels.astype("<i8").tobytes())


def load_graph_binary(path) -> Graph:
    blob = Path(path).read_bytes()
    if not blob.startswith(GRAPH_MAGIC):
        raise GraphFormatError(f"{path}: not a graph cache (bad magic)")
    pos = len(GRAPH_MAGIC)
    n, nnz, d, has_labels = struct.unpack_from("<QQQB", blob, pos)
    pos += struct.calcsize("<QQQB")

    def take(dtype, count):
        nonlocal pos
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr.copy()

    try:
        offsets = take("<i8", n + 1).astype(np.int64)
        targets = take("<i8", nnz).astype(np.int64)
        feats = take("<f4", n * d).reshape(n, d).astype(np.float32)
        labels = take("<i8", n).astype(np.int64) if has_labels else None
    except ValueError as exc:
        raise GraphFormatError(f"{path}: truncated graph cache") from exc
    return Graph(int(n), offsets, targets, feats, labels)


# ---------------------------------------------------------------------------
# hop partitioning
# ---------------------------------------------------------------------------


def hop_distances(g: Graph, anchor: int, k: int) -> np.ndarray:
    """Shortest-path distance from ``anchor`` truncated at ``k`` (``-1`` beyond)."""
    if not 0 <= anchor < g.num_nodes:
        raise IndexError(f"anchor {anchor} out of range for {g.num_nodes} nodes")
    if k < 1:
        raise ValueError("k must be >= 1")
    return kernels.bfs_levels(g.csr_offsets, g.csr_targets, np.int64(anchor), np.int64(k))


def _sample_far(far: np.ndarray, cap, rng) -> np.ndarray:
    if cap is None or far.size <= cap:
        return far
    return np.sort(rng.choice(far, size=int(cap), replace=False))


def bfs_hop_partition(g: Graph, anchor: int, k: int, negative_cap=DEFAULT_NEGATIVE_CAP,
                      rng=None) -> HopPartition:
    """Exact hop sets ``1..k`` around ``anchor`` plus a uniform far-node sample.

    ``negative_cap=None`` keeps every node farther than ``k`` hops.
    """
    dist = hop_distances(g, anchor, k)
    hops = tuple(np.flatnonzero(dist == h) for h in range(1, k + 1))
    far = np.flatnonzero(dist == kernels.UNREACHED)
    if rng is None:
        rng = np.random.default_rng(0)
    return HopPartition(int(anchor), int(k), hops, _sample_far(far, negative_cap, rng))


def build_partitions(g: Graph, k: int, anchors=None, negative_cap=DEFAULT_NEGATIVE_CAP,
                     rng=None) -> list[HopPartition]:
    if anchors is None:
        anchors = range(g.num_nodes)
    if rng is None:
        rng = np.random.default_rng(0)
    return [bfs_hop_partition(g, int(a), k, negative_cap, rng) for a in anchors]


def resample_beyond(g: Graph, part: HopPartition, negative_cap, rng) -> HopPartition:
    """Fresh far-bucket sample for an existing partition."""
    mask = np.ones(g.num_nodes, dtype=bool)
    mask[part.anchor] = False
    for hs in part.hop_sets:
        mask[hs] = False
    far = np.flatnonzero(mask)
    return HopPartition(part.anchor, part.k, part.hop_sets, _sample_far(far, negative_cap, rng))


# ---------------------------------------------------------------------------
# synthetic graphs
# ---------------------------------------------------------------------------


def generate_sbm(block_sizes: Sequence[int], p_in: float, p_out: float, feature_dim: int = 16,
                 feature_noise: float = 1.0, seed: int = 0, label_flip: float = 0.0) -> Graph:
    """Stochastic block model with Gaussian block-mean features.

    Every unordered node pair is an edge with probability ``p_in`` inside a
    block and ``p_out`` across blocks. Node features are the block mean (one
    standard-normal draw per block) plus ``feature_noise`` times white noise;
    labels are block ids. With ``label_flip > 0`` that fraction of nodes is
    reassigned to a different class after the wiring is drawn, features
    following the new class, so their structural neighbours disagree with them.
    """
    block_sizes = [int(b) for b in block_sizes]
    if not block_sizes or min(block_sizes) < 1:
        raise ValueError("block_sizes must be a non-empty list of positive sizes")
    # p_out > p_in is allowed: it yields heterophilous graphs
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError(f"edge probabilities must lie in [0, 1], got p_in={p_in}, p_out={p_out}")
    if not 0.0 <= label_flip <= 1.0:
        raise ValueError("label_flip must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = sum(block_sizes)
    blocks = np.repeat(np.arange(len(block_sizes)), block_sizes)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    labels = blocks.copy()
    num_blocks = len(block_sizes)
    if label_flip > 0 and num_blocks > 1:
        n_flip = int(round(label_flip * n))
        flipped = rng.choice(n, size=n_flip, replace=False)
        shift = rng.integers(1, num_blocks, size=n_flip)
        labels[flipped] = (labels[flipped] + shift) % num_blocks

    means = rng.standard_normal((num_blocks, feature_dim))
    features = means[labels] + feature_noise * rng.standard_normal((n, feature_dim))
    return Graph.from_edges(n, edges, features, labels)


def complete_tree(branching: int, depth: int) -> Graph:
    """Complete ``branching``-ary tree with ``depth`` levels below the root."""
    n = sum(branching ** level for level in range(depth + 1))
    child = np.arange(1, n)
    parent = (child - 1) // branching
    return Graph.from_edges(n, np.stack([parent, child], axis=1), np.eye(n, 1))


def erdos_renyi(n: int, p: float, seed: int = 0, num_classes: int = 0, feature_dim: int = 4) -> Graph:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < p
    labels = rng.integers(0, num_classes, size=n) if num_classes else None
    features = rng.standard_normal((n, feature_dim))
    return Graph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1), features, labels)
