"""Per-hop neighbourhood down-sampling (uniform or PageRank-weighted)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .graph import Graph, HopPartition

STRATEGIES = ("none", "uniform", "pagerank")


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """How many members of each hop 1..k enter the loss.

    ``ratio`` keeps ``ceil(ratio * |hop|)`` members (at least one); an
    explicit ``per_hop_size`` overrides it as an absolute cap.
    """

    strategy: str = "uniform"
    ratio: float = 0.2
    per_hop_size: int | None = None
    damping: float = 0.85
    pr_tolerance: float = 1e-8
    pr_max_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampler strategy {self.strategy!r}")
        if self.per_hop_size is not None and self.per_hop_size < 1:
            raise ValueError("per_hop_size must be >= 1")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must lie in (0, 1]")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")

    def size_for(self, hop_size: int) -> int:
        if self.per_hop_size is not None:
            return min(self.per_hop_size, hop_size)
        return min(hop_size, max(1, math.ceil(self.ratio * hop_size)))


def pagerank(g: Graph, damping=0.85, tolerance=1e-8, max_iters=200) -> np.ndarray:
    """PageRank by power iteration with uniform teleport.

    Dangling mass is spread uniformly. Stops once the L1 change drops below
    ``tolerance``; hitting ``max_iters`` first only emits a warning.
    """
    if g.num_nodes < 1:
        raise ValueError("graph has no nodes")
    scores, iters, converged = kernels.pagerank_power(
        g.csr_offsets, g.csr_targets, float(damping), float(tolerance), int(max_iters)
    )
    if not converged:
        warnings.warn(f"pagerank did not converge in {iters} iterations", ConvergenceWarning,
                      stacklevel=2)
    return np.asarray(scores)


def sample_hop(partition: HopPartition, hop: int, size: int, cfg: SamplerConfig,
               scores=None, rng=None) -> np.ndarray:
    """Sample ``min(size, |hop|)`` distinct members of hop ``hop`` (1..k)."""
    if not 1 <= hop <= partition.k:
        raise ValueError(f"hop must lie in [1, {partition.k}]")
    members = partition.hop(hop)
    if members.size <= size:
        return members
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    p = None
    if cfg.strategy == "pagerank":
        if scores is None:
            raise ValueError("pagerank sampling needs scores")
        w = np.asarray(scores, dtype=np.float64)[members]
        p = w / w.sum()
    picked = rng.choice(members, size=size, replace=False, p=p)
    return np.sort(picked)


def subsample_partition(part: HopPartition, cfg: SamplerConfig, scores=None, rng=None) -> HopPartition:
    """Apply the sampler to hops 1..k; the far bucket is left as is."""
    hops = tuple(
        sample_hop(part, h, cfg.size_for(len(part.hop(h))), cfg, scores, rng)
        for h in range(1, part.k + 1)
    )
    return HopPartition(part.anchor, part.k, hops, part.beyond_sample)
