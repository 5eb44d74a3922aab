"""Self-checks behind ``gscl verify``: gradients, call counts and oracle agreement."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels, oracles
from .encoder import forward_tensors, init_params, normalize_adjacency
from .graph import build_partitions, complete_tree, erdos_renyi
from .loss import LossConfig, ScoreCallCounter, build_loss_plan, score_call_count_expected
from .metrics import hop_size_histogram, homophily_metric, label_consistency
from .sampling import pagerank


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _labeled_graphs(count, max_nodes=60, seed=0):
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = int(rng.integers(8, max_nodes))
        p = float(rng.uniform(0.02, 0.25))
        yield erdos_renyi(n, p, seed=seed * 1000 + i, num_classes=int(rng.integers(2, 5)))


def check_metrics(count):
    worst = 0
    for g in _labeled_graphs(count):
        dist = oracles.floyd_warshall(g)
        stats = hop_size_histogram(g, 3)
        counts = oracles.hop_counts(g, 3, dist)
        if not np.array_equal(stats.per_hop_avg_count, counts.mean(axis=0)):
            return False, "hop-count mismatch"
        for n in (1, 2, 3):
            want = oracles.label_consistency(g, n, dist)
            got = label_consistency(g, n)
            if not (got == want or (np.isnan(got) and np.isnan(want))):
                return False, f"LC({n}) {got!r} != {want!r}"
        if (g.degrees() > 0).any() and homophily_metric(g) != label_consistency(g, 1):
            return False, "HM != LC(1)"
        worst += 1
    return True, f"{worst} graphs bit-equal to distance oracle"


def check_call_counts(count):
    z_rng = np.random.default_rng(1)
    for g in _labeled_graphs(count, seed=7):
        for k in (1, 2, 3):
            parts = build_partitions(g, k, negative_cap=None)
            if not any(p.sizes().any() for p in parts):
                continue
            z = z_rng.standard_normal((g.num_nodes, 4))
            for variant in ("pairwise", "listwise"):
                for memo in (False, True):
                    cfg = LossConfig(k=k, variant=variant, memoize_similarities=memo)
                    counter = ScoreCallCounter()
                    build_loss_plan(parts, cfg).evaluate(z, counter)
                    want = score_call_count_expected(parts, k, variant, memo)
                    if counter.calls != want:
                        return False, f"{variant} k={k} memo={memo}: {counter.calls} != {want}"
    d, k = 3, 2
    tree = complete_tree(d, k + 1)
    root = build_partitions(tree, k, anchors=[0], negative_cap=None)[0]
    parts = [root] * tree.num_nodes
    n = tree.num_nodes
    closed = {
        "pairwise": n * k * sum(d ** i for i in range(1, k + 2)),
        "listwise": n * (sum(i * d ** i for i in range(1, k + 1)) + k * d ** (k + 1)),
    }
    z = z_rng.standard_normal((n, 4))
    for variant, want in closed.items():
        counter = ScoreCallCounter()
        build_loss_plan(parts, LossConfig(k=k, variant=variant, memoize_similarities=False)).evaluate(z, counter)
        if counter.calls != want:
            return False, f"tree {variant}: {counter.calls} != {want}"
    return True, f"counter == formula on {count} graphs and the d=3,k=2 tree"


def check_loss_oracle(count):
    worst = 0.0
    rng = np.random.default_rng(3)
    for gi, g in enumerate(_labeled_graphs(count, max_nodes=30, seed=11)):
        for k in (1, 2, 3):
            parts = build_partitions(g, k, negative_cap=8, rng=np.random.default_rng(gi))
            if not any(p.sizes()[:k].any() for p in parts):
                continue
            z = rng.standard_normal((g.num_nodes, 5))
            for variant in ("pairwise", "listwise"):
                cfg = LossConfig(k=k, tau_base=0.3, tau_spacing=0.05, alpha=0.5, beta=0.6, variant=variant)
                got = float(build_loss_plan(parts, cfg).evaluate(z).value)
                want = oracles.ranking_loss(z, parts, k, cfg.tau, cfg.alpha, cfg.beta, variant)
                worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    return worst < 1e-6, f"max rel. deviation {worst:.2e}"


def gradient_error(variant, seed):
    g = erdos_renyi(12, 0.25, seed=100 + seed, feature_dim=5)
    parts = build_partitions(g, 2, negative_cap=None)
    params = init_params([5, 8, 8], [8, 8], "relu", seed=seed, dtype=np.float64)
    adj = normalize_adjacency(g)
    x = ad.Tensor(g.features.astype(np.float64))
    cfg = LossConfig(k=2, tau_base=0.5, tau_spacing=0.05, alpha=0.95, beta=0.95, variant=variant)
    plan = build_loss_plan(parts, cfg)

    def loss_fn(leaves):
        _, z = forward_tensors(adj, x, leaves, 2, "relu")
        return plan.evaluate(z)

    return ad.finite_diff_check(loss_fn, params.arrays(), epsilon=1e-5, num_coords=250, seed=seed)


def check_gradients(seeds):
    worst = max(gradient_error(v, s) for v in ("pairwise", "listwise") for s in range(seeds))
    return worst < 1e-4, f"max rel. error {worst:.2e} over {seeds} seeds"


def check_pagerank(count):
    worst = 0.0
    for i in range(count):
        g = erdos_renyi(10 + i, 0.2, seed=50 + i)
        worst = max(worst, float(np.abs(pagerank(g, tolerance=1e-13, max_iters=2000)
                                        - oracles.pagerank(g)).max()))
    return worst < 1e-6, f"max abs deviation {worst:.2e}"


def check_backends(count):
    for g in _labeled_graphs(count, seed=23):
        args = (g.csr_offsets, g.csr_targets)
        for s in range(min(g.num_nodes, 5)):
            if not np.array_equal(kernels._bfs_levels_nb(*args, s, 3), kernels._bfs_levels_np(*args, s, 3)):
                return False, "BFS kernels disagree"
        a = kernels._hop_label_counts_nb(*args, g.labels, 3)
        b = kernels._hop_label_counts_np(*args, g.labels, 3)
        if not (np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])):
            return False, "hop/label count kernels disagree"
        pa = kernels._pagerank_nb(*args, 0.85, 1e-12, 500)[0]
        pb = kernels._pagerank_np(*args, 0.85, 1e-12, 500)[0]
        if np.abs(pa - pb).max() > 1e-12:
            return False, "pagerank kernels disagree"
    return True, "numba and numpy kernels agree"


LEVELS = {
    "quick": {"metrics": 5, "counts": 3, "loss": 3, "grad": 1, "pagerank": 3, "backends": 3},
    "full": {"metrics": 25, "counts": 10, "loss": 10, "grad": 3, "pagerank": 10, "backends": 10},
}


def run_checks(level="quick") -> list[CheckResult]:
    n = LEVELS[level]
    suites = [
        ("metrics vs distance oracle", check_metrics, n["metrics"]),
        ("score-call counts", check_call_counts, n["counts"]),
        ("ranking losses vs naive oracle", check_loss_oracle, n["loss"]),
        ("gradients vs finite differences", check_gradients, n["grad"]),
        ("pagerank vs dense oracle", check_pagerank, n["pagerank"]),
        ("kernel backends", check_backends, n["backends"]),
    ]
    results = []
    for name, fn, arg in suites:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(arg)
        except Exception as exc:  # a crashing suite is a failed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
