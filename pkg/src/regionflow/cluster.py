"""Stage two: contiguity-constrained agglomerative clustering, plus k-means.

The agglomerative pass starts from singletons and only ever merges clusters
that touch in the geographic adjacency graph, so every output community
induces a connected subgraph. Linkage distances are maintained with
Lance-Williams updates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleError, ValidationError
from .graph import connected_components

LINKAGES = ("ward", "average", "complete")


@dataclass
class Partition:
    """Community label per node; labels run 1..k with no empty community."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).copy()
        if self.labels.ndim != 1:
            raise ValidationError("labels must be one-dimensional")
        present = set(self.labels.tolist())
        if present != set(range(1, self.k + 1)):
            raise ValidationError(f"labels must cover 1..{self.k} with no gaps")
        self.labels.setflags(write=False)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Relabel arbitrary hashable labels to 1..k in first-appearance order."""
        labels = list(labels)
        mapping: dict = {}
        out = np.empty(len(labels), dtype=np.int64)
        for idx, lab in enumerate(labels):
            if lab not in mapping:
                mapping[lab] = len(mapping) + 1
            out[idx] = mapping[lab]
        return cls(labels=out, k=len(mapping))

    @property
    def n(self) -> int:
        return len(self.labels)

    def communities(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(1, self.k + 1)]


def save_partition(partition: Partition, node_ids: list[str], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "community"])
        for nid, lab in zip(node_ids, partition.labels.tolist()):
            writer.writerow([nid, lab])
    return path


def load_partition(path, node_ids: list[str]) -> Partition:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"partition file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node_id", "community"]:
            raise ValidationError(f"{path}: header must be 'node_id,community'")
        assignments = {row[0]: int(row[1]) for row in reader if row}
    missing = [nid for nid in node_ids if nid not in assignments]
    if missing:
        raise ValidationError(f"{path}: missing community for nodes {missing[:5]}")
    return Partition.from_labels([assignments[nid] for nid in node_ids])


# ---------------------------------------------------------------------------
# constrained agglomerative


def _initial_distances(points: np.ndarray, linkage: str) -> np.ndarray:
    sq = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    if linkage == "ward":
        return sq / 2.0  # merge cost between singletons is half the squared gap
    return np.sqrt(sq)


def constrained_agglomerative(embeddings: np.ndarray, adjacency: np.ndarray,
                              k: int, linkage: str = "ward",
                              return_merges: bool = False):
    """Merge adjacent clusters bottom-up until k remain.

    Raises InfeasibleError when the adjacency graph has more connected
    components than k (contiguous k-partitions cannot exist).
    """
    if linkage not in LINKAGES:
        raise ConfigError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    adjacency = np.asarray(adjacency)
    if adjacency.shape != (n, n):
        raise ValidationError("adjacency shape must match the number of embeddings")
    if k < 1 or k > n:
        raise ValidationError(f"k must be in 1..{n}, got {k}")
    n_components = int(connected_components(adjacency).max()) + 1
    if k < n_components:
        raise InfeasibleError(
            f"k={k} is below the {n_components} connected components of the "
            f"adjacency graph; contiguous communities are impossible")

    dist = _initial_distances(points, linkage)
    np.fill_diagonal(dist, np.inf)
    adj = adjacency.astype(bool).copy()
    alive = np.ones(n, dtype=bool)
    size = np.ones(n, dtype=np.int64)
    owner = np.arange(n)  # cluster slot per node
    merges: list[float] = []

    clusters = n
    while clusters > k:
        candidate = adj & alive[:, None] & alive[None, :]
        masked = np.where(candidate, dist, np.inf)
        flat = int(np.argmin(masked))
        a, b = divmod(flat, n)
        if not np.isfinite(masked[a, b]):
            raise InfeasibleError(
                f"no adjacent cluster pair left at {clusters} clusters")
        if a > b:
            a, b = b, a
        merges.append(float(dist[a, b]))
        others = alive.copy()
        others[a] = False
        others[b] = False
        if linkage == "ward":
            total = size[a] + size[b] + size[others]
            dist[a, others] = ((size[a] + size[others]) * dist[a, others]
                               + (size[b] + size[others]) * dist[b, others]
                               - size[others] * dist[a, b]) / total
        elif linkage == "average":
            dist[a, others] = (size[a] * dist[a, others] + size[b] * dist[b, others]) \
                / (size[a] + size[b])
        else:
            dist[a, others] = np.maximum(dist[a, others], dist[b, others])
        dist[others, a] = dist[a, others]
        size[a] += size[b]
        alive[b] = False
        adj[a] |= adj[b]
        adj[:, a] |= adj[:, b]
        adj[a, a] = False
        owner[owner == b] = a
        clusters -= 1

    partition = Partition.from_labels(owner.tolist())
    if return_merges:
        return partition, merges
    return partition


# ---------------------------------------------------------------------------
# k-means


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total == 0.0:
            pick = int(rng.integers(n))  # all points coincide with a center
        else:
            pick = int(rng.choice(n, p=closest / total))
        centers[c] = points[pick]
        closest = np.minimum(closest, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    centers = _kmeans_pp(points, k, rng)
    labels = np.full(points.shape[0], -1, dtype=np.int64)
    inertia_history: list[float] = []
    for _ in range(max_iter):
        sq = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(sq, axis=1)
        point_cost = sq[np.arange(points.shape[0]), new_labels]
        for c in range(k):
            if not np.any(new_labels == c):
                farthest = int(np.argmax(point_cost))
                centers[c] = points[farthest]
                new_labels[farthest] = c
                point_cost[farthest] = 0.0
        inertia_history.append(float(point_cost.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
    return labels, centers, inertia_history


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 300) -> Partition:
    """Seeded k-means++ with Lloyd iterations; empty clusters get the farthest point."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if k < 1 or k > points.shape[0]:
        raise ValidationError(f"k must be in 1..{points.shape[0]}, got {k}")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    labels, _, _ = _lloyd(points, k, rng, max_iter)
    return Partition.from_labels(labels.tolist())
