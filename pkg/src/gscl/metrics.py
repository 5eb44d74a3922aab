"""Homophily and per-hop label consistency statistics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .graph import Graph


@dataclass
class HopStats:
    per_hop_avg_count: np.ndarray
    per_hop_lc: np.ndarray
    hm: float

    def to_dict(self):
        d = asdict(self)
        d["per_hop_avg_count"] = [float(x) for x in self.per_hop_avg_count]
        d["per_hop_lc"] = [float(x) for x in self.per_hop_lc]
        d["hm"] = float(self.hm)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["hop", "avg_count", "label_consistency"])
        for h, (c, lc) in enumerate(zip(self.per_hop_avg_count, self.per_hop_lc), start=1):
            w.writerow([h, repr(float(c)), repr(float(lc))])
        return buf.getvalue()


def hop_label_table(g: Graph, k: int):
    """``(counts, same)`` arrays of shape ``(N, k)``.

    ``counts[i, n-1]`` is the size of node ``i``'s exact ``n``-hop set and
    ``same[i, n-1]`` how many of those share its label (zeros without labels).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = g.labels if g.labels is not None else np.zeros(g.num_nodes, dtype=np.int64)
    counts, same = kernels.hop_label_counts(
        g.csr_offsets, g.csr_targets, np.ascontiguousarray(labels, dtype=np.int64), np.int64(k)
    )
    if g.labels is None:
        same = None
    return counts, same


def _lc_from_table(counts, same, n):
    c = counts[:, n - 1]
    ok = c > 0
    if not ok.any():
        return float("nan")
    # fsum is exactly rounded, so the mean does not depend on summation order
    return math.fsum(same[ok, n - 1] / c[ok]) / int(ok.sum())


def label_consistency(g: Graph, n: int) -> float:
    """Mean share of same-label nodes in each node's exact ``n``-hop set.

    Nodes whose ``n``-hop set is empty are left out of the mean.
    """
    g.require_labels()
    if n < 1:
        raise ValueError("hop index must be >= 1")
    counts, same = hop_label_table(g, n)
    return _lc_from_table(counts, same, n)


def homophily_metric(g: Graph) -> float:
    g.require_labels()
    if not (g.degrees() > 0).any():
        raise ValueError("homophily is undefined: every node is isolated")
    return label_consistency(g, 1)


def hop_size_histogram(g: Graph, k: int) -> HopStats:
    counts, same = hop_label_table(g, k)
    avg = counts.mean(axis=0).astype(np.float64)
    if same is None:
        lc = np.full(k, np.nan)
        hm = float("nan")
    else:
        lc = np.array([_lc_from_table(counts, same, n) for n in range(1, k + 1)])
        hm = float(lc[0])
    return HopStats(avg, lc, hm)
