"""Self-supervised GCN node embeddings trained so that nearer hops score
higher than farther ones under a cosine critic."""
from ._accel import USE_NUMBA, backend_name
from .graph import (
    Graph,
    GraphFormatError,
    HopPartition,
    bfs_hop_partition,
    build_partitions,
    generate_sbm,
    load_graph,
)
from .loss import LossConfig, ScoreCallCounter, gscl_listwise_loss, gscl_pairwise_loss
from .metrics import HopStats, homophily_metric, hop_size_histogram, label_consistency

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "backend_name",
    "Graph",
    "GraphFormatError",
    "HopPartition",
    "HopStats",
    "LossConfig",
    "ScoreCallCounter",
    "bfs_hop_partition",
    "build_partitions",
    "generate_sbm",
    "gscl_listwise_loss",
    "gscl_pairwise_loss",
    "homophily_metric",
    "hop_size_histogram",
    "label_consistency",
    "load_graph",
]
