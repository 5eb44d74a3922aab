"""Brute-force reference computations.

Deliberately naive: dense matrices, Floyd-Warshall distances and explicit
Python loops. They share no code with the fast paths they are compared
against and are only meant for graphs of a few hundred nodes.
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np


def dense_adjacency(g) -> np.ndarray:
    a = np.zeros((g.num_nodes, g.num_nodes))
    for u in range(g.num_nodes):
        for v in g.csr_targets[g.csr_offsets[u]:g.csr_offsets[u + 1]]:
            a[u, v] = 1.0
    return a


def floyd_warshall(g) -> np.ndarray:
    """All-pairs hop distances, ``inf`` when unreachable."""
    a = dense_adjacency(g)
    d = np.where(a > 0, 1.0, np.inf)
    np.fill_diagonal(d, 0.0)
    for m in range(g.num_nodes):
        d = np.minimum(d, d[:, m:m + 1] + d[m:m + 1, :])
    return d


def hop_sets(dist_row, k):
    hops = [sorted(np.flatnonzero(dist_row == h).tolist()) for h in range(1, k + 1)]
    beyond = sorted(np.flatnonzero(dist_row > k).tolist())
    return hops, beyond


def label_consistency(g, n, dist=None) -> float:
    if dist is None:
        dist = floyd_warshall(g)
    ratios = []
    for i in range(g.num_nodes):
        members = np.flatnonzero(dist[i] == n)
        if members.size == 0:
            continue
        same = sum(1 for j in members if g.labels[j] == g.labels[i])
        ratios.append(same / members.size)
    return math.fsum(ratios) / len(ratios) if ratios else float("nan")


def hop_counts(g, k, dist=None) -> np.ndarray:
    if dist is None:
        dist = floyd_warshall(g)
    return np.array([[int((dist[i] == h).sum()) for h in range(1, k + 1)] for i in range(g.num_nodes)])


def normalized_adjacency(g) -> np.ndarray:
    a = dense_adjacency(g) + np.eye(g.num_nodes)
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def pagerank(g, damping=0.85, iters=10000) -> np.ndarray:
    """Dense Google-matrix power iteration in float64."""
    n = g.num_nodes
    a = dense_adjacency(g)
    deg = a.sum(axis=1)
    walk = np.zeros((n, n))
    for u in range(n):
        if deg[u] > 0:
            walk[:, u] = a[u] / deg[u]
        else:
            walk[:, u] = 1.0 / n
    google = damping * walk + (1 - damping) / n
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        nxt = google @ x
        if np.abs(nxt - x).sum() < 1e-15:
            return nxt
        x = nxt
    return x


def _cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def ranking_loss(z, partitions, k, tau, alpha, beta, variant):
    """Direct transcription of the gated ranking losses in float64.

    ``tau`` maps a hop index (1..k+1) to its temperature.
    """
    z = np.asarray(z, dtype=np.float64)
    total = 0.0
    for part in partitions:
        i = part.anchor
        hops = [None] + [list(part.hop(h)) for h in range(1, k + 2)]

        def S(h):
            return sum(math.exp(_cos(z[i], z[u]) / tau(h)) for u in hops[h])

        terms = {}
        if variant == "pairwise":
            for j in range(1, k + 1):
                for m in range(1, k - j + 2):
                    if not hops[j] or not hops[j + m]:
                        continue
                    ratio = S(j) / (S(j) + S(j + m))
                    terms.setdefault(j, []).append(math.log(min(ratio, alpha)))
        elif variant in ("listwise", "infonce_in_flat"):
            gate = beta if variant == "listwise" else 1.0
            for j in range(1, k + 1):
                if not hops[j]:
                    continue
                ratio = S(j) / sum(S(jp) for jp in range(j, k + 2))
                terms.setdefault(j, []).append(math.log(min(ratio, gate)))
        elif variant == "infonce_out_flat":
            for j in range(1, k + 1):
                if not hops[j]:
                    continue
                neg = sum(S(jp) for jp in range(j + 1, k + 2))
                for u in hops[j]:
                    e = math.exp(_cos(z[i], z[u]) / tau(j))
                    terms.setdefault(j, []).append(math.log(e / (e + neg)))
        else:
            raise ValueError(variant)
        if terms:
            total -= sum(sum(v) for v in terms.values()) / len(terms)
    return total


def nmi(a, b) -> float:
    """NMI with arithmetic normalisation from an explicit contingency table."""
    a, b = list(a), list(b)
    n = len(a)
    ca, cb, joint = Counter(a), Counter(b), Counter(zip(a, b))
    h_a = -sum(c / n * math.log(c / n) for c in ca.values())
    h_b = -sum(c / n * math.log(c / n) for c in cb.values())
    mi = sum(c / n * math.log((c / n) / ((ca[x] / n) * (cb[y] / n))) for (x, y), c in joint.items())
    if h_a == 0 and h_b == 0:
        return 1.0
    denom = (h_a + h_b) / 2
    return mi / denom if denom > 0 else 0.0


def sim_at_k(h, labels, top_k=5) -> float:
    h = np.asarray(h, dtype=np.float64)
    n = len(labels)
    hits = 0
    for i in range(n):
        scored = []
        for j in range(n):
            if j == i:
                continue
            na, nb = np.linalg.norm(h[i]), np.linalg.norm(h[j])
            s = float(h[i] @ h[j]) / (na * nb) if na > 0 and nb > 0 else 0.0
            scored.append((-s, j))
        scored.sort()
        hits += sum(1 for _, j in scored[:top_k] if labels[j] == labels[i])
    return hits / (n * top_k)
