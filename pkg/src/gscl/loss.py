"""Cosine critic, InfoNCE variants and the gated hop-ranking losses.

The ranking losses are compiled into a :class:`LossPlan` once per set of hop
partitions. A plan lists every (anchor, node) pair whose critic value is
needed, groups those pairs into per-hop segments, and describes each loss
term as a numerator entry and a set of denominator entries drawn from the
segment log-sum-exps. Evaluating a plan on a projected embedding matrix is a
handful of vectorised tape ops, so the same code serves the float32 training
path and the float64 gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

VARIANTS = ("pairwise", "listwise", "infonce_in_flat", "infonce_out_flat")


@dataclass(frozen=True)
class LossConfig:
    k: int = 2
    tau_base: float = 0.5
    tau_spacing: float = 0.0
    alpha: float = 0.9
    beta: float = 0.9
    variant: str = "listwise"
    count_score_calls: bool = False
    memoize_similarities: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if min(self.tau(h) for h in range(1, self.k + 2)) <= 0:
            raise ValueError("every per-hop temperature must be positive")
        if self.tau_spacing < 0:
            raise ValueError("tau_spacing must be >= 0")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")

    def tau(self, hop: int) -> float:
        """Temperature for critic values against members of ``hop`` (1..k+1)."""
        return self.tau_base + (hop - 1) * self.tau_spacing

    @property
    def gate(self) -> float:
        if self.variant == "pairwise":
            return self.alpha
        if self.variant == "listwise":
            return self.beta
        return 1.0


class ScoreCallCounter:
    """Tally of critic evaluations."""

    def __init__(self):
        self.calls = 0

    def add(self, n: int):
        self.calls += int(n)

    def reset(self):
        self.calls = 0


# ---------------------------------------------------------------------------
# single-query losses on raw vectors
# ---------------------------------------------------------------------------


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroDivisionError("cosine similarity of a zero vector")
    return float(a @ b / (na * nb))


def _logits(q, others, tau):
    others = np.atleast_2d(np.asarray(others, dtype=np.float64))
    if others.size == 0:
        return np.empty(0)
    return np.array([cosine_sim(q, o) for o in others]) / tau


def _lse(x):
    if x.size == 0:
        return -np.inf
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def infonce(q, p, negatives, tau) -> float:
    """Single-positive InfoNCE."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    pos = cosine_sim(q, p) / tau
    neg = _logits(q, negatives, tau)
    return float(_lse(np.append(neg, pos)) - pos)


def infonce_out(q, positives, negatives, tau) -> float:
    """Multi-positive InfoNCE summed outside the log (one term per positive)."""
    pos = _logits(q, positives, tau)
    if pos.size == 0:
        raise ValueError("positives must be non-empty")
    neg = _logits(q, negatives, tau)
    neg_lse = _lse(neg)
    return float(sum(np.logaddexp(p, neg_lse) - p for p in pos))


def infonce_in(q, positives, negatives, tau) -> float:
    """Multi-positive InfoNCE with the positives summed inside the log."""
    pos = _logits(q, positives, tau)
    if pos.size == 0:
        raise ValueError("positives must be non-empty")
    neg = _logits(q, negatives, tau)
    pos_lse = _lse(pos)
    return float(np.logaddexp(pos_lse, _lse(neg)) - pos_lse)


# ---------------------------------------------------------------------------
# ranking losses
# ---------------------------------------------------------------------------


def pair_groups(k: int):
    """``(j, j + m)`` hop pairs compared by the pairwise loss."""
    return [(j, j + m) for j in range(1, k + 1) for m in range(1, k - j + 2)]


@dataclass
class LossPlan:
    """Precomputed index structure for one loss evaluation.

    Pairs: ``pair_anchor``/``pair_node`` with ``pair_inv_tau`` scaling and the
    segment ``pair_seg`` they are summed into. Terms index into the pool
    ``[segment lse..., pair logits...]``: ``num_idx`` per term, and the
    denominator members ``den_idx`` grouped by ``den_term``.
    """

    pair_anchor: np.ndarray
    pair_node: np.ndarray
    pair_inv_tau: np.ndarray
    pair_seg: np.ndarray
    num_segments: int
    num_idx: np.ndarray
    den_idx: np.ndarray
    den_term: np.ndarray
    term_anchor: np.ndarray
    term_weight: np.ndarray
    log_gate: float
    uses_logits: bool
    num_anchors: int
    num_active_anchors: int

    @property
    def num_pairs(self) -> int:
        return int(self.pair_anchor.shape[0])

    @property
    def num_terms(self) -> int:
        return int(self.num_idx.shape[0])

    def evaluate(self, z, counter: ScoreCallCounter | None = None, reduction="sum"):
        """Loss tensor for projected embeddings ``z`` (array or tensor)."""
        z = ad.as_tensor(z)
        zn = ad.normalize_rows(z)
        sims = ad.gather_dot(zn, self.pair_anchor, self.pair_node)
        if counter is not None:
            counter.add(self.num_pairs)
        logits = ad.scale(sims, self.pair_inv_tau.astype(z.dtype))
        lse = ad.segment_logsumexp(logits, self.pair_seg, self.num_segments)
        pool = ad.concat([lse, logits]) if self.uses_logits else lse
        num = ad.take(pool, self.num_idx)
        den = ad.segment_logsumexp(ad.take(pool, self.den_idx), self.den_term, self.num_terms)
        log_ratio = ad.sub(num, den)
        gated = ad.minimum(log_ratio, self.log_gate)
        weights = -self.term_weight
        if reduction == "mean":
            weights = weights / self.num_active_anchors
        elif reduction != "sum":
            raise ValueError(f"unknown reduction {reduction!r}")
        return ad.weighted_sum(gated, weights)


def build_loss_plan(partitions, cfg: LossConfig) -> LossPlan:
    """Compile hop partitions into a :class:`LossPlan` for ``cfg.variant``.

    Groups whose numerator hop is empty, or (pairwise) whose comparison hop
    is empty, are dropped; each anchor's terms are weighted by one over the
    number of numerator hops that still carry a term.
    """
    k = cfg.k
    width = k + 1
    num_anchors = len(partitions)
    for part in partitions:
        if part.k != k:
            raise ValueError(f"partition built with k={part.k}, loss configured with k={k}")
    sizes = np.array([part.sizes() for part in partitions], dtype=np.int64).reshape(num_anchors, width)
    anchors = np.array([part.anchor for part in partitions], dtype=np.int64)
    nonempty = sizes > 0

    # shared (memoised) pair list: anchor-major, hop-minor, members sorted
    base_seg = np.repeat(np.arange(num_anchors * width), sizes.ravel())
    base_node = np.concatenate(
        [part.hop(h) for part in partitions for h in range(1, width + 1)] + [np.empty(0, np.int64)]
    ).astype(np.int64)
    base_hop = base_seg % width + 1
    inv_tau = np.array([1.0 / cfg.tau(h) for h in range(1, width + 2)])

    # term structure: (anchor, numerator hop, denominator hops)
    variant = cfg.variant
    if variant == "pairwise":
        groups = [(j, (j, h)) for j, h in pair_groups(k)]
    else:
        groups = [(j, tuple(range(j, width + 1))) for j in range(1, k + 1)]

    memo = cfg.memoize_similarities or variant == "infonce_out_flat"
    if memo:
        pair_seg, pair_node, pair_hop = base_seg, base_node, base_hop
        num_segments = num_anchors * width

        def seg_of(group_idx, a, h):
            return a * width + (h - 1)
    else:
        # every group recomputes the critic for each hop it touches
        seg_parts, node_parts, hop_parts = [], [], []
        for gi, (_, hops) in enumerate(groups):
            mask = np.isin(base_hop, hops)
            seg_parts.append(base_seg[mask] + gi * num_anchors * width)
            node_parts.append(base_node[mask])
            hop_parts.append(base_hop[mask])
        pair_seg = np.concatenate(seg_parts)
        pair_node = np.concatenate(node_parts)
        pair_hop = np.concatenate(hop_parts)
        num_segments = len(groups) * num_anchors * width

        def seg_of(group_idx, a, h):
            return group_idx * num_anchors * width + a * width + (h - 1)

    pair_anchor = anchors[(pair_seg % (num_anchors * width)) // width]
    pair_inv_tau = inv_tau[pair_hop - 1]

    num_idx, den_idx, den_term, term_anchor, term_numhop = [], [], [], [], []
    t = 0
    if variant == "infonce_out_flat":
        seg_start = np.concatenate([[0], np.cumsum(sizes.ravel())])
        for a in range(num_anchors):
            for j in range(1, k + 1):
                if not nonempty[a, j - 1]:
                    continue
                negs = [seg_of(0, a, h) for h in range(j + 1, width + 1) if nonempty[a, h - 1]]
                s0 = seg_start[a * width + j - 1]
                for p in range(s0, s0 + sizes[a, j - 1]):
                    pos = num_segments + p
                    num_idx.append(pos)
                    den_idx.extend([pos, *negs])
                    den_term.extend([t] * (1 + len(negs)))
                    term_anchor.append(a)
                    term_numhop.append(j)
                    t += 1
    else:
        for a in range(num_anchors):
            for gi, (j, hops) in enumerate(groups):
                if not nonempty[a, j - 1]:
                    continue
                if variant == "pairwise" and not nonempty[a, hops[1] - 1]:
                    continue
                members = [seg_of(gi, a, h) for h in hops if nonempty[a, h - 1]]
                num_idx.append(seg_of(gi, a, j))
                den_idx.extend(members)
                den_term.extend([t] * len(members))
                term_anchor.append(a)
                term_numhop.append(j)
                t += 1

    if t == 0:
        raise ValueError("no ranking signal: every hop set is empty for every anchor")
    term_anchor = np.array(term_anchor, dtype=np.int64)
    term_numhop = np.array(term_numhop, dtype=np.int64)
    # k_eff: distinct numerator hops with at least one surviving term, per anchor
    seen = np.zeros((num_anchors, width), dtype=bool)
    seen[term_anchor, term_numhop - 1] = True
    k_eff = seen.sum(axis=1)
    term_weight = 1.0 / k_eff[term_anchor]

    return LossPlan(
        pair_anchor=pair_anchor,
        pair_node=pair_node,
        pair_inv_tau=pair_inv_tau,
        pair_seg=pair_seg,
        num_segments=num_segments,
        num_idx=np.array(num_idx, dtype=np.int64),
        den_idx=np.array(den_idx, dtype=np.int64),
        den_term=np.array(den_term, dtype=np.int64),
        term_anchor=term_anchor,
        term_weight=term_weight,
        log_gate=math.log(cfg.gate),
        uses_logits=variant == "infonce_out_flat",
        num_anchors=num_anchors,
        num_active_anchors=int((k_eff > 0).sum()),
    )


def ranking_loss(z, partitions, cfg: LossConfig, counter=None, reduction="sum"):
    """Loss tensor for any configured variant."""
    return build_loss_plan(partitions, cfg).evaluate(z, counter, reduction)


def _checked(cfg, variant):
    if cfg.variant != variant:
        raise ValueError(f"config selects variant {cfg.variant!r}, expected {variant!r}")


def gscl_pairwise_loss(z, partitions, cfg: LossConfig, counter=None, reduction="sum") -> float:
    """Gated pairwise hop-ranking loss summed over anchors."""
    _checked(cfg, "pairwise")
    return float(ranking_loss(z, partitions, cfg, counter, reduction).value)


def gscl_listwise_loss(z, partitions, cfg: LossConfig, counter=None, reduction="sum") -> float:
    """Gated listwise hop-ranking loss summed over anchors."""
    _checked(cfg, "listwise")
    return float(ranking_loss(z, partitions, cfg, counter, reduction).value)


def score_call_count_expected(partitions, k: int, variant: str, memoized: bool) -> int:
    """Critic evaluations one loss pass performs, from hop sizes alone."""
    total = 0
    for part in partitions:
        s = [0, *part.sizes().tolist()]  # s[h] = |H_h|, h = 1..k+1
        if memoized or variant == "infonce_out_flat":
            total += sum(s[1:k + 2])
        elif variant == "pairwise":
            total += sum(s[j] + s[j + m] for j in range(1, k + 1) for m in range(1, k - j + 2))
        else:
            total += sum(s[jp] for j in range(1, k + 1) for jp in range(j, k + 2))
    return total
