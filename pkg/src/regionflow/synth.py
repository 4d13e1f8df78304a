"""Planted-partition lattice networks for verification, plus the adjusted
Rand index and a random contiguous control partition.

Nodes are the unit cells of a k x k rook lattice tiled into contiguous
rectangular blocks. Flows are Poisson draws on node pairs within four hops,
with a higher rate inside blocks; features are per-block means separated by
a configurable distance plus Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import Partition
from .errors import ConfigError, InfeasibleError, ValidationError
from .graph import SpatialNetwork, minmax_scale

FLOW_HOP_WINDOW = 4  # flows decay with distance; pairs beyond this stay zero


@dataclass
class SynthConfig:
    lattice_size: int = 10
    communities: int = 4
    lambda_in: float = 8.0
    lambda_out: float = 1.0
    feature_dim: int = 6
    feature_sep: float = 0.4
    noise_sd: float = 0.1
    seed: int = 0

    def validate(self):
        if self.lattice_size < 2:
            raise ConfigError("lattice_size must be >= 2")
        if self.communities < 1:
            raise ConfigError("communities must be >= 1")
        if not (self.lambda_in > self.lambda_out >= 0):
            raise ConfigError("need lambda_in > lambda_out >= 0 for a planted structure")
        if self.feature_dim < self.communities:
            raise ConfigError("feature_dim must be >= communities (block means live on a simplex)")
        if self.feature_sep < 0 or self.noise_sd < 0:
            raise ConfigError("feature_sep and noise_sd must be >= 0")


def _block_shape(k: int, communities: int) -> tuple[int, int]:
    """Factor `communities` as rows x cols of equal blocks tiling the k x k grid."""
    best = None
    for rows in range(1, communities + 1):
        if communities % rows:
            continue
        cols = communities // rows
        if k % rows == 0 and k % cols == 0:
            score = abs(rows - math.isqrt(communities))
            if best is None or score < best[0]:
                best = (score, rows, cols)
    if best is None:
        raise ValidationError(
            f"{communities} communities cannot tile a {k}x{k} lattice into equal blocks")
    return best[1], best[2]


def _simplex_means(communities: int, dim: int, sep: float) -> np.ndarray:
    """Block feature means with pairwise distance `sep`, centered at 0.5."""
    basis = np.eye(communities)
    centered = basis - basis.mean(axis=0)
    scaled = centered * (sep / math.sqrt(2.0))  # unit-simplex edges have length sqrt(2)
    means = np.full((communities, dim), 0.5)
    means[:, :communities] += scaled
    return means


def generate(config: SynthConfig) -> tuple[SpatialNetwork, np.ndarray]:
    """Seeded lattice network with planted labels (1..communities)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    k = config.lattice_size
    n = k * k
    block_rows, block_cols = _block_shape(k, config.communities)
    cell_rows = k // block_rows
    cell_cols = k // block_cols

    node_ids = [f"r{row}c{col}" for row in range(k) for col in range(k)]
    planted = np.empty(n, dtype=np.int64)
    geometries = []
    for row in range(k):
        for col in range(k):
            idx = row * k + col
            planted[idx] = (row // cell_rows) * block_cols + (col // cell_cols) + 1
            ring = [(col, row), (col + 1, row), (col + 1, row + 1), (col, row + 1),
                    (col, row)]
            geometries.append([[ring]])

    adjacency = np.zeros((n, n), dtype=np.int64)
    for row in range(k):
        for col in range(k):
            idx = row * k + col
            if col + 1 < k:
                adjacency[idx, idx + 1] = adjacency[idx + 1, idx] = 1
            if row + 1 < k:
                adjacency[idx, idx + k] = adjacency[idx + k, idx] = 1

    flows = np.zeros((n, n), dtype=np.float64)
    for row in range(k):
        for col in range(k):
            idx = row * k + col
            # pairs within the hop window, enumerated once (i < j)
            for dr in range(0, FLOW_HOP_WINDOW + 1):
                if row + dr >= k:
                    break
                dc_lo = -min(FLOW_HOP_WINDOW - dr, col) if dr > 0 else 1
                for dc in range(dc_lo, FLOW_HOP_WINDOW - dr + 1):
                    if col + dc >= k:
                        break
                    jdx = (row + dr) * k + (col + dc)
                    lam = (config.lambda_in if planted[idx] == planted[jdx]
                           else config.lambda_out)
                    value = float(rng.poisson(lam)) if lam > 0 else 0.0
                    flows[idx, jdx] = flows[jdx, idx] = value

    means = _simplex_means(config.communities, config.feature_dim, config.feature_sep)
    raw = means[planted - 1] + rng.normal(0.0, config.noise_sd, size=(n, config.feature_dim))
    names = [f"f{i}" for i in range(config.feature_dim)]
    attributes, scaling = minmax_scale(np.clip(raw, 0.0, 1.0), names)

    network = SpatialNetwork(node_ids=node_ids, adjacency=adjacency, flows=flows,
                             attributes=attributes, geometries=geometries,
                             feature_names=names, scaling=scaling, contiguity="rook")
    return network, planted


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two labelings of the same nodes."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("labelings must be one-dimensional and equal length")
    n = len(a)
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, b_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (a_idx, b_idx), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0  # both labelings trivial, perfect agreement by convention
    return float((index - expected) / (maximum - expected))


def random_contiguous_partition(adjacency: np.ndarray, k: int, seed: int = 0) -> Partition:
    """Grow k contiguous regions from random seed nodes (a null-model control)."""
    adjacency = np.asarray(adjacency, dtype=bool)
    n = adjacency.shape[0]
    if k < 1 or k > n:
        raise ValidationError(f"k must be in 1..{n}, got {k}")
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    seeds = rng.choice(n, size=k, replace=False)
    labels[seeds] = np.arange(1, k + 1)
    while True:
        assigned = labels > 0
        if assigned.all():
            break
        edges = np.argwhere(adjacency & assigned[:, None] & ~assigned[None, :])
        if len(edges) == 0:
            raise InfeasibleError(
                "adjacency graph is disconnected; contiguous growth cannot cover it")
        src, dst = edges[rng.integers(len(edges))]
        labels[dst] = labels[src]
    return Partition.from_labels(labels.tolist())
