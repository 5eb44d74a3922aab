"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--nodes 20000] [--degree 8] [--repeat 5]

Both twins are called directly, so the GSCL_DISABLE_NUMBA flag does not
matter here. Compilation is triggered once before timing.
"""
import argparse
import time

import numpy as np

from gscl import kernels
from gscl.graph import Graph


def random_graph(n, degree, seed):
    # sample edge endpoints directly; a dense pair mask would need O(n^2) memory
    rng = np.random.default_rng(seed)
    m = int(n * degree / 2)
    edges = rng.integers(0, n, size=(m, 2))
    return Graph.from_edges(n, edges, np.zeros((n, 1)), rng.integers(0, 5, size=n))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20_000)
    ap.add_argument("--degree", type=float, default=8.0)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    g = random_graph(args.nodes, args.degree, args.seed)
    print(f"graph: {g.num_nodes} nodes, {g.num_edges // 2} edges (built in {time.perf_counter() - t0:.1f}s)")
    off, tgt, labels = g.csr_offsets, g.csr_targets, g.labels
    sources = np.random.default_rng(args.seed).integers(0, g.num_nodes, size=200)

    cases = {
        "bfs x200 (depth k)": (
            lambda: [kernels._bfs_levels_nb(off, tgt, s, args.k) for s in sources],
            lambda: [kernels._bfs_levels_np(off, tgt, s, args.k) for s in sources],
        ),
        "hop/label counts (all anchors)": (
            lambda: kernels._hop_label_counts_nb(off, tgt, labels, args.k),
            lambda: kernels._hop_label_counts_np(off, tgt, labels, args.k),
        ),
        "pagerank (tol 1e-10)": (
            lambda: kernels._pagerank_nb(off, tgt, 0.85, 1e-10, 500),
            lambda: kernels._pagerank_np(off, tgt, 0.85, 1e-10, 500),
        ),
    }

    print(f"{'kernel':<32}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for name, (fast, slow) in cases.items():
        fast()  # compile
        a = best_of(fast, args.repeat)
        b = best_of(slow, args.repeat)
        print(f"{name:<32}{a:>10.4f}{b:>10.4f}{b / a:>8.1f}x")


if __name__ == "__main__":
    main()
