"""Baselines: weighted modularity + Louvain on the flow network, and
second-order random walks with skip-gram negative-sampling embeddings.

Louvain runs its usual two phases (greedy single-node moves, then community
aggregation) with a seeded node order. Walks use the p/q biased transition
rule; p = q = 1 degenerates to uniform first-order walks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import Partition
from .errors import ConfigError, ValidationError

_GAIN_TOLERANCE = 1e-12


def modularity(flows: np.ndarray, partition: Partition) -> float:
    """Weighted modularity with the matrix convention 2m = sum of all entries."""
    flows = np.asarray(flows, dtype=np.float64)
    total = flows.sum()
    if total <= 0:
        raise ValidationError("modularity needs positive total flow weight")
    degrees = flows.sum(axis=1)
    q = 0.0
    for members in partition.communities():
        internal = flows[np.ix_(members, members)].sum()
        incident = degrees[members].sum()
        q += internal / total - (incident / total) ** 2
    return q


@dataclass
class LouvainResult:
    partition: Partition
    quality: float
    levels: int


def _one_level(weights: np.ndarray, rng: np.random.Generator,
               resolution: float) -> tuple[np.ndarray, bool]:
    """Greedy single-node moves until a full sweep makes no improvement."""
    n = weights.shape[0]
    two_m = weights.sum()
    degrees = weights.sum(axis=1)
    community = np.arange(n)
    comm_total = degrees.copy()  # incident weight per community
    neighbors = [np.flatnonzero(weights[i] > 0) for i in range(n)]
    order = rng.permutation(n)
    moved_any = False
    improving = True
    while improving:
        improving = False
        for i in order:
            current = community[i]
            comm_total[current] -= degrees[i]
            # flow from i into each candidate community (self-loop excluded)
            links: dict[int, float] = {current: 0.0}
            for j in neighbors[i]:
                if j == i:
                    continue
                links[community[j]] = links.get(community[j], 0.0) + weights[i, j]
            best = current
            best_score = links[current] - resolution * degrees[i] * comm_total[current] / two_m
            for cand in sorted(links):
                if cand == current:
                    continue
                score = links[cand] - resolution * degrees[i] * comm_total[cand] / two_m
                if score > best_score + _GAIN_TOLERANCE:
                    best, best_score = cand, score
            comm_total[best] += degrees[i]
            if best != current:
                community[i] = best
                improving = True
                moved_any = True
    return community, moved_any


def _aggregate(weights: np.ndarray, community: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids, dense = np.unique(community, return_inverse=True)
    k = len(ids)
    onehot = np.zeros((weights.shape[0], k))
    onehot[np.arange(weights.shape[0]), dense] = 1.0
    return onehot.T @ weights @ onehot, dense


def louvain(flows: np.ndarray, seed: int = 0, resolution: float = 1.0,
            restarts: int = 4) -> LouvainResult:
    """Modularity maximization on the flow network; deterministic for a seed.

    Greedy moves depend on node order, so the algorithm runs `restarts` times
    with seed-derived orders and keeps the partition with the best modularity.
    """
    flows = np.asarray(flows, dtype=np.float64)
    if flows.sum() <= 0:
        raise ValidationError("louvain needs positive total flow weight")
    if resolution <= 0:
        raise ConfigError("resolution must be > 0")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    best: LouvainResult | None = None
    for restart in range(restarts):
        result = _louvain_once(flows, np.random.default_rng((seed, restart)),
                               resolution)
        if best is None or result.quality > best.quality:
            best = result
    return best


def _louvain_once(flows: np.ndarray, rng: np.random.Generator,
                  resolution: float) -> LouvainResult:
    weights = flows.copy()
    labels = np.arange(flows.shape[0])
    levels = 0
    while True:
        community, moved = _one_level(weights, rng, resolution)
        levels += 1
        if not moved and levels > 1:
            break
        weights, dense = _aggregate(weights, community)
        labels = dense[labels]
        if not moved:
            break
        if weights.shape[0] == 1:
            break
    partition = Partition.from_labels(labels.tolist())
    return LouvainResult(partition=partition,
                         quality=modularity(flows, partition), levels=levels)


# ---------------------------------------------------------------------------
# random walks


@dataclass
class WalkCorpus:
    walks: list[list[int]]
    walk_length: int
    walks_per_node: int
    p: float
    q: float
    n_nodes: int = 0
    degrees: np.ndarray = field(default_factory=lambda: np.zeros(0))


def random_walks(adjacency: np.ndarray, walk_length: int, walks_per_node: int,
                 p: float = 1.0, q: float = 1.0, seed: int = 0) -> WalkCorpus:
    """Second-order biased walks from every node.

    Transition weights relative to the previous node: 1/p to return, 1 to a
    common neighbor, 1/q to a two-hop node. Each walk draws from its own
    generator keyed by seed XOR walk index, so generation order is free.
    """
    if walk_length < 1:
        raise ConfigError("walk_length must be >= 1")
    if walks_per_node < 1:
        raise ConfigError("walks_per_node must be >= 1")
    if p <= 0 or q <= 0:
        raise ConfigError("p and q must be > 0")
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    neighbor_lists = [np.flatnonzero(adj[i]) for i in range(n)]
    walks: list[list[int]] = []
    for rep in range(walks_per_node):
        for start in range(n):
            walk_index = rep * n + start
            rng = np.random.default_rng((seed ^ walk_index) & 0xFFFFFFFFFFFFFFFF)
            walk = [start]
            while len(walk) < walk_length:
                current = walk[-1]
                nbrs = neighbor_lists[current]
                if len(nbrs) == 0:
                    break
                if len(walk) == 1:
                    walk.append(int(rng.choice(nbrs)))
                    continue
                prev = walk[-2]
                bias = np.where(nbrs == prev, 1.0 / p,
                                np.where(adj[prev][nbrs], 1.0, 1.0 / q))
                walk.append(int(rng.choice(nbrs, p=bias / bias.sum())))
            walks.append(walk)
    return WalkCorpus(walks=walks, walk_length=walk_length,
                      walks_per_node=walks_per_node, p=p, q=q, n_nodes=n,
                      degrees=adj.sum(axis=1).astype(np.float64))


# ---------------------------------------------------------------------------
# skip-gram with negative sampling


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -50.0, 50.0)))


def skipgram_embed(corpus: WalkCorpus, dim: int = 32, window: int = 10,
                   negative_samples: int = 5, epochs: int = 3, lr: float = 0.025,
                   seed: int = 0, batch_size: int = 1024) -> np.ndarray:
    """Skip-gram embeddings over the walk corpus, trained with mini-batch SGNS.

    The noise distribution follows degree^0.75. Nodes that never appear in
    the corpus keep their seeded initialization.
    """
    if dim < 2:
        raise ConfigError("dim must be >= 2")
    if window < 1 or negative_samples < 0 or epochs < 0:
        raise ConfigError("window >= 1, negative_samples >= 0, epochs >= 0 required")
    if not corpus.walks:
        raise ValidationError("empty walk corpus")
    n = corpus.n_nodes
    centers: list[int] = []
    contexts: list[int] = []
    for walk in corpus.walks:
        for pos, center in enumerate(walk):
            lo = max(0, pos - window)
            hi = min(len(walk), pos + window + 1)
            for other in range(lo, hi):
                if other != pos:
                    centers.append(center)
                    contexts.append(walk[other])
    rng = np.random.default_rng(seed)
    w_in = (rng.random((n, dim)) - 0.5) / dim
    w_out = np.zeros((n, dim))
    if not centers:
        return w_in  # all walks were isolated single nodes
    center_arr = np.asarray(centers, dtype=np.int64)
    context_arr = np.asarray(contexts, dtype=np.int64)
    noise = np.power(corpus.degrees, 0.75)
    if noise.sum() == 0:
        noise = np.ones(n)
    noise = noise / noise.sum()
    n_pairs = len(center_arr)
    for _ in range(epochs):
        for start in range(0, n_pairs, batch_size):
            c = center_arr[start:start + batch_size]
            o = context_arr[start:start + batch_size]
            v = w_in[c]
            u = w_out[o]
            g_pos = (1.0 - _sigmoid(np.sum(v * u, axis=1))) * lr
            grad_v = g_pos[:, None] * u
            grad_u = g_pos[:, None] * v
            if negative_samples > 0:
                neg = rng.choice(n, size=(len(c), negative_samples), p=noise)
                u_neg = w_out[neg]
                g_neg = -_sigmoid(np.einsum("bd,bkd->bk", v, u_neg)) * lr
                grad_v += np.einsum("bk,bkd->bd", g_neg, u_neg)
                np.add.at(w_out, neg.reshape(-1),
                          (g_neg[:, :, None] * v[:, None, :]).reshape(-1, dim))
            np.add.at(w_in, c, grad_v)
            np.add.at(w_out, o, grad_u)
    return w_in
