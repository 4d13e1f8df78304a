"""Community detection on spatial interaction networks.

Two-stage pipeline: graph neural embeddings (GCN / GAT / flow-weighted GAT)
trained with a community-oriented loss, then contiguity-constrained
agglomerative clustering. Ships Louvain, node2vec/deepwalk, and k-means
baselines, a five-metric evaluation suite, a planted-partition verifier, a
shortage-area scoring harness, and a CLI (`regionflow`).
"""

__version__ = "0.1.0"

from .cluster import Partition, constrained_agglomerative, kmeans
from .embedding import ModelConfig, build_pairs, compute_loss, gradient_check, train
from .graph import SpatialNetwork, compute_hops, load_network, save_network
from .metrics import MetricsReport, evaluate_partition, finalize_batch
from .synth import SynthConfig, adjusted_rand_index, generate

__all__ = [
    "ModelConfig",
    "MetricsReport",
    "Partition",
    "SpatialNetwork",
    "SynthConfig",
    "adjusted_rand_index",
    "build_pairs",
    "compute_hops",
    "compute_loss",
    "constrained_agglomerative",
    "evaluate_partition",
    "finalize_batch",
    "generate",
    "gradient_check",
    "kmeans",
    "load_network",
    "save_network",
    "train",
    "__version__",
]
