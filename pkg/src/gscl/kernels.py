"""Hot graph kernels: truncated BFS, all-anchor hop/label tallies, PageRank.

Each kernel has a numba implementation (``_nb`` suffix) written as plain
loops and a vectorised numpy twin (``_np`` suffix). The public names are bound
to one of them at import time according to :data:`gscl._accel.USE_NUMBA`.
Both twins return identical integers; PageRank agrees to floating point
reduction order.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

UNREACHED = -1


# ---------------------------------------------------------------------------
# truncated BFS
# ---------------------------------------------------------------------------


@njit
def _bfs_levels_nb(offsets, targets, source, max_depth):
    n = offsets.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    dist[source] = 0
    queue[0] = source
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u]
        if du >= max_depth:
            continue
        for p in range(offsets[u], offsets[u + 1]):
            v = targets[p]
            if dist[v] == UNREACHED:
                dist[v] = du + 1
                queue[tail] = v
                tail += 1
    return dist


def _frontier_neighbors(offsets, targets, frontier):
    starts = offsets[frontier]
    lens = offsets[frontier + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=targets.dtype)
    shift = np.repeat(starts - (np.cumsum(lens) - lens), lens)
    return targets[shift + np.arange(total)]


def _bfs_levels_np(offsets, targets, source, max_depth):
    n = offsets.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    for depth in range(1, max_depth + 1):
        nbrs = _frontier_neighbors(offsets, targets, frontier)
        nbrs = np.unique(nbrs[dist[nbrs] == UNREACHED])
        if nbrs.size == 0:
            break
        dist[nbrs] = depth
        frontier = nbrs
    return dist


# ---------------------------------------------------------------------------
# per-anchor hop sizes and same-label counts for every node
# ---------------------------------------------------------------------------


@njit
def _hop_label_counts_nb(offsets, targets, labels, k):
    n = offsets.shape[0] - 1
    counts = np.zeros((n, k), dtype=np.int64)
    same = np.zeros((n, k), dtype=np.int64)
    dist = np.full(n, UNREACHED, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        ys = labels[s]
        while head < tail:
            u = queue[head]
            head += 1
            du = dist[u]
            if du >= k:
                continue
            for p in range(offsets[u], offsets[u + 1]):
                v = targets[p]
                if dist[v] == UNREACHED:
                    dist[v] = du + 1
                    counts[s, du] += 1
                    if labels[v] == ys:
                        same[s, du] += 1
                    queue[tail] = v
                    tail += 1
        # reset only what this anchor touched
        for i in range(tail):
            dist[queue[i]] = UNREACHED
    return counts, same


def _hop_label_counts_np(offsets, targets, labels, k):
    n = offsets.shape[0] - 1
    counts = np.zeros((n, k), dtype=np.int64)
    same = np.zeros((n, k), dtype=np.int64)
    for s in range(n):
        dist = _bfs_levels_np(offsets, targets, s, k)
        hit = dist > 0
        d = dist[hit]
        counts[s] = np.bincount(d, minlength=k + 1)[1:]
        match = labels[hit] == labels[s]
        same[s] = np.bincount(d[match], minlength=k + 1)[1:]
    return counts, same


# ---------------------------------------------------------------------------
# PageRank power iteration on the random-walk matrix of an undirected CSR graph
# ---------------------------------------------------------------------------


@njit
def _pagerank_nb(offsets, targets, damping, tol, max_iters):
    n = offsets.shape[0] - 1
    x = np.full(n, 1.0 / n)
    deg = np.empty(n)
    for u in range(n):
        deg[u] = offsets[u + 1] - offsets[u]
    contrib = np.empty(n)
    new = np.empty(n)
    iters = 0
    converged = False
    while iters < max_iters:
        dangling = 0.0
        for u in range(n):
            if deg[u] > 0:
                contrib[u] = x[u] / deg[u]
            else:
                contrib[u] = 0.0
                dangling += x[u]
        base = (1.0 - damping) / n + damping * dangling / n
        for v in range(n):
            acc = 0.0
            for p in range(offsets[v], offsets[v + 1]):
                acc += contrib[targets[p]]
            new[v] = base + damping * acc
        err = 0.0
        for v in range(n):
            err += abs(new[v] - x[v])
            x[v] = new[v]
        iters += 1
        if err < tol:
            converged = True
            break
    return x, iters, converged


def _pagerank_np(offsets, targets, damping, tol, max_iters):
    n = offsets.shape[0] - 1
    deg = np.diff(offsets).astype(np.float64)
    rows = np.repeat(np.arange(n), np.diff(offsets))
    has_out = deg > 0
    inv_deg = np.zeros(n)
    inv_deg[has_out] = 1.0 / deg[has_out]
    x = np.full(n, 1.0 / n)
    iters = 0
    converged = False
    while iters < max_iters:
        contrib = x * inv_deg
        dangling = x[~has_out].sum()
        acc = np.bincount(rows, weights=contrib[targets], minlength=n)
        new = (1.0 - damping) / n + damping * dangling / n + damping * acc
        err = np.abs(new - x).sum()
        x = new
        iters += 1
        if err < tol:
            converged = True
            break
    return x, iters, converged


if USE_NUMBA:
    bfs_levels = _bfs_levels_nb
    hop_label_counts = _hop_label_counts_nb
    pagerank_power = _pagerank_nb
else:
    bfs_levels = _bfs_levels_np
    hop_label_counts = _hop_label_counts_np
    pagerank_power = _pagerank_np

__all__ = ["UNREACHED", "bfs_levels", "hop_label_counts", "pagerank_power"]
