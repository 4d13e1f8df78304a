import numpy as np
import pytest

from regionflow.graph import SpatialNetwork


def make_grid_network(rows: int, cols: int, seed: int = 0, n_features: int = 4,
                      flow_density: float = 0.4) -> SpatialNetwork:
    """Rook grid adjacency with random symmetric integer flows and attributes."""
    rng = np.random.default_rng(seed)
    n = rows * cols
    adjacency = np.zeros((n, n), dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                adjacency[i, i + 1] = adjacency[i + 1, i] = 1
            if r + 1 < rows:
                adjacency[i, i + cols] = adjacency[i + cols, i] = 1
    flows = np.zeros((n, n))
    iu, ju = np.triu_indices(n, k=1)
    pick = rng.random(len(iu)) < flow_density
    values = rng.integers(1, 30, size=int(pick.sum())).astype(float)
    flows[iu[pick], ju[pick]] = values
    flows[ju[pick], iu[pick]] = values
    attributes = rng.random((n, n_features))
    return SpatialNetwork(node_ids=[f"n{i}" for i in range(n)], adjacency=adjacency,
                          flows=flows, attributes=attributes,
                          feature_names=[f"f{k}" for k in range(n_features)])


def random_small_network(rng: np.random.Generator, n_min: int = 3, n_max: int = 8):
    """Random network for oracle comparisons: n <= 8, at least one edge and flow."""
    while True:
        n = int(rng.integers(n_min, n_max + 1))
        adjacency = np.zeros((n, n), dtype=np.int64)
        iu, ju = np.triu_indices(n, k=1)
        edges = rng.random(len(iu)) < 0.5
        adjacency[iu[edges], ju[edges]] = 1
        adjacency[ju[edges], iu[edges]] = 1
        flows = np.zeros((n, n))
        pick = rng.random(len(iu)) < 0.6
        values = rng.uniform(0.5, 20.0, size=int(pick.sum()))
        flows[iu[pick], ju[pick]] = values
        flows[ju[pick], iu[pick]] = values
        if adjacency.sum() == 0 or flows.sum() == 0:
            continue
        attributes = rng.uniform(0.05, 0.95, size=(n, 3))
        return SpatialNetwork(node_ids=[f"n{i}" for i in range(n)],
                              adjacency=adjacency, flows=flows, attributes=attributes)


def random_partition(rng: np.random.Generator, n: int, k_max: int | None = None):
    """Random labels 1..K with every community non-empty and K < n when possible."""
    from regionflow.cluster import Partition

    if k_max is None:
        k_max = max(2, n - 1)
    k = int(rng.integers(1, min(k_max, n) + 1))
    while True:
        labels = rng.integers(1, k + 1, size=n)
        if len(np.unique(labels)) == k:
            return Partition.from_labels(labels.tolist())


@pytest.fixture
def grid12():
    return make_grid_network(3, 4, seed=5)


@pytest.fixture
def path3():
    """Path graph 0-1-2 with unit flows along the edges."""
    adjacency = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    flows = adjacency.astype(float)
    attributes = np.array([[0.1, 0.9], [0.5, 0.5], [0.9, 0.1]])
    return SpatialNetwork(node_ids=["a", "b", "c"], adjacency=adjacency,
                          flows=flows, attributes=attributes)
