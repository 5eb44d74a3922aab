"""Downstream evaluation on frozen embeddings.

Linear probe accuracy, k-means NMI, Sim@k neighbour purity and the per-hop
similarity profile used to check that closer hops sit closer in embedding
space.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import normalized_mutual_info_score

from .autodiff import AdamState, adam_step
from .graph import GraphFormatError


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(p, dtype=np.int64) for p in (self.train, self.val, self.test)]
        allnodes = np.concatenate(parts)
        if np.unique(allnodes).size != allnodes.size:
            raise ValueError("train/val/test sets overlap")
        object.__setattr__(self, "train", parts[0])
        object.__setattr__(self, "val", parts[1])
        object.__setattr__(self, "test", parts[2])


def random_split(num_nodes: int, seed: int, train=0.1, val=0.1) -> Split:
    """Random 10/10/80 split (fractions configurable)."""
    perm = np.random.default_rng(seed).permutation(num_nodes)
    n_train = int(round(train * num_nodes))
    n_val = int(round(val * num_nodes))
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                 np.sort(perm[n_train + n_val:]))


def read_split_csv(path, num_nodes: int) -> Split:
    """``node_id,split`` rows, split one of train/val/test, header first."""
    groups = {"train": [], "val": [], "test": []}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows, None)
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                node, name = int(row[0]), row[1].strip()
            except (ValueError, IndexError):
                raise GraphFormatError(f"{path} line {lineno}: bad split row {row!r}") from None
            if name not in groups or not 0 <= node < num_nodes:
                raise GraphFormatError(f"{path} line {lineno}: bad split row {row!r}")
            groups[name].append(node)
    return Split(*(np.array(sorted(groups[k]), dtype=np.int64) for k in ("train", "val", "test")))


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------


def _softmax_xent_grad(x, y_onehot, w, b):
    logits = x @ w + b
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    diff = (p - y_onehot) / x.shape[0]
    return x.T @ diff, diff.sum(axis=0)


def _fit_probe(x, labels, split, num_classes, weight_decay, seed, lr, epochs, patience):
    rng = np.random.default_rng(seed)
    d = x.shape[1]
    w = (rng.standard_normal((d, num_classes)) * 0.01)
    b = np.zeros(num_classes)
    state = AdamState(lr=lr, weight_decay=weight_decay)
    xt = x[split.train]
    yt = np.eye(num_classes)[labels[split.train]]
    xv, yv = x[split.val], labels[split.val]
    best_val, best = -1.0, (w.copy(), b.copy())
    stale = 0
    for _ in range(epochs):
        gw, gb = _softmax_xent_grad(xt, yt, w, b)
        adam_step([w, b], [gw, gb], state)
        val_acc = float(np.mean(np.argmax(xv @ w + b, axis=1) == yv)) if len(yv) else 0.0
        if val_acc > best_val:
            best_val, best, stale = val_acc, (w.copy(), b.copy()), 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best_val, best


def linear_probe(h, labels, split: Split, seed: int = 0, lr=1e-2, weight_decays=(0.0, 1e-4),
                 epochs=1000, patience=50, return_val=False):
    """Test accuracy of a softmax-regression probe on frozen ``h``.

    Trained full batch with Adam; the checkpoint with the best validation
    accuracy is kept and weight decay is chosen on validation accuracy.
    """
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels[split.train]).size < 2:
        raise ValueError("linear probe needs at least two classes in the training set")
    num_classes = int(labels.max()) + 1
    best_val, best_params = -1.0, None
    for wd in weight_decays:
        val_acc, params = _fit_probe(h, labels, split, num_classes, wd, seed, lr, epochs, patience)
        if val_acc > best_val:
            best_val, best_params = val_acc, params
    w, b = best_params
    test_acc = float(np.mean(np.argmax(h[split.test] @ w + b, axis=1) == labels[split.test]))
    if return_val:
        return test_acc, best_val
    return test_acc


# ---------------------------------------------------------------------------
# clustering and similarity search
# ---------------------------------------------------------------------------


def nmi(labels_a, labels_b) -> float:
    """Normalised mutual information, arithmetic-mean normalisation."""
    return float(normalized_mutual_info_score(labels_a, labels_b, average_method="arithmetic"))


def kmeans_nmi(h, labels, num_clusters: int, seed: int = 0) -> float:
    """NMI between k-means clusters of ``h`` (k-means++ seeding, 10 restarts) and ``labels``."""
    h = np.asarray(h, dtype=np.float64)
    if num_clusters < 2:
        raise ValueError("num_clusters must be >= 2")
    if h.shape[0] < num_clusters:
        raise ValueError("fewer points than clusters")
    km = KMeans(n_clusters=num_clusters, init="k-means++", n_init=10, random_state=seed)
    pred = km.fit_predict(h)
    return nmi(labels, pred)


def _unit_rows(h):
    h = np.asarray(h, dtype=np.float64)
    norm = np.linalg.norm(h, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return h / norm


def sim_at_k(h, labels, top_k: int = 5, block=1024) -> float:
    """Mean share of each node's ``top_k`` cosine neighbours that share its label.

    The node itself is excluded; ties are broken by the lower node id.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n <= top_k:
        raise ValueError("need more nodes than top_k")
    u = _unit_rows(h)
    hits = 0
    for s in range(0, n, block):
        sims = u[s:s + block] @ u.T
        rows = np.arange(s, min(s + block, n))
        sims[rows - s, rows] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, :top_k]
        hits += int((labels[order] == labels[rows, None]).sum())
    return hits / (n * top_k)


@dataclass
class HopSimilarity:
    means: np.ndarray
    quantiles: np.ndarray
    quantile_levels: tuple = (0.05, 0.25, 0.5, 0.75, 0.95)
    counts: np.ndarray = None

    def to_dict(self):
        return {
            "means": [float(x) for x in self.means],
            "counts": [int(x) for x in self.counts],
            "quantile_levels": list(self.quantile_levels),
            "quantiles": [[float(x) for x in row] for row in self.quantiles],
        }


def per_hop_similarity(h, partitions, levels=(0.05, 0.25, 0.5, 0.75, 0.95)) -> HopSimilarity:
    """Cosine between anchors and hop members, pooled per hop ``1..k+1``."""
    u = _unit_rows(h)
    k = partitions[0].k
    means, quants, counts = [], [], []
    for hop in range(1, k + 2):
        anchors = np.concatenate([np.full(len(p.hop(hop)), p.anchor) for p in partitions])
        members = np.concatenate([p.hop(hop) for p in partitions])
        counts.append(len(members))
        if len(members) == 0:
            means.append(np.nan)
            quants.append(np.full(len(levels), np.nan))
            continue
        sims = np.einsum("ij,ij->i", u[anchors.astype(np.int64)], u[members])
        means.append(float(sims.mean()))
        quants.append(np.quantile(sims, levels))
    return HopSimilarity(np.array(means), np.array(quants), tuple(levels), np.array(counts))
