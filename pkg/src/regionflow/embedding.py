"""Stage one: learn node embeddings with GCN, GAT, or flow-weighted GAT.

Training is unsupervised. The loss is a ratio: flow-weighted distances
between interacting node pairs (numerator, pulled together) over mean
distances between non-interacting pairs plus a long-range hop penalty
(denominator, pushed apart). Gradients come from the reverse-mode engine in
`autodiff`; parameters are updated full-batch with Adam.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Adam, Tensor, glorot_uniform
from .errors import ConfigError, NumericalError, TrainingError, ValidationError
from .graph import UNREACHABLE, HopMatrix, SpatialNetwork, compute_hops

MODEL_GCN = "gcn"
MODEL_GAT = "gat"
MODEL_WEIGHTED_GAT = "weighted-gat"
MODELS = (MODEL_GCN, MODEL_GAT, MODEL_WEIGHTED_GAT)

# Mask thresholds mirroring the reference experiment setup per model.
DEFAULT_POS_THRESHOLD = {MODEL_GCN: 0.0, MODEL_GAT: 5.0, MODEL_WEIGHTED_GAT: 200.0}

LEAKY_SLOPE = 0.2
LOSS_DELTA = 1e-8
# Full-batch negatives up to this many nodes; beyond it they are subsampled.
FULL_BATCH_LIMIT = 5000
NEGATIVE_FACTOR = 50


@dataclass
class ModelConfig:
    model: str = MODEL_GCN
    layers: int = 2
    hidden_dim: int = 64
    output_dim: int = 32
    heads: int = 1
    epochs: int = 300
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hop_epsilon: int = 2
    pos_threshold: float | None = None
    weight_threshold: float = 100.0
    seed: int = 0

    def resolved(self) -> "ModelConfig":
        """Validate and fill the model-dependent positive-flow threshold."""
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.hidden_dim < 1 or self.output_dim < 2:
            raise ConfigError("hidden_dim must be >= 1 and output_dim >= 2")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.hop_epsilon < 1:
            raise ConfigError("hop_epsilon must be >= 1 (hop 1 would divide by log 1 = 0)")
        pos = self.pos_threshold
        if pos is None:
            pos = DEFAULT_POS_THRESHOLD[self.model]
        if pos < 0:
            raise ConfigError("pos_threshold must be >= 0")
        if self.weight_threshold < 0:
            raise ConfigError("weight_threshold must be >= 0")
        return replace(self, pos_threshold=pos)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class LayerParams:
    weights: list[Tensor]                 # one weight matrix per head
    attention: list[Tensor] | None = None  # one length-2*out vector per head


@dataclass
class ParamSet:
    layers: list[LayerParams]

    def tensors(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.weights)
            if layer.attention is not None:
                out.extend(layer.attention)
        return out


@dataclass
class PairSets:
    """Positive (interacting) and negative (zero-flow) unordered node pairs."""

    pos_i: np.ndarray
    pos_j: np.ndarray
    pos_weight: np.ndarray  # log of the flow on each positive pair
    neg_i: np.ndarray
    neg_j: np.ndarray

    @property
    def n_pos(self) -> int:
        return len(self.pos_i)

    @property
    def n_neg(self) -> int:
        return len(self.neg_i)


def build_pairs(flows: np.ndarray, threshold: float) -> PairSets:
    """Off-diagonal unordered pairs split by flow: above threshold vs zero.

    Pairs with 0 < flow <= threshold belong to neither set. An empty positive
    set is a training error.
    """
    flows = np.asarray(flows, dtype=np.float64)
    iu, ju = np.triu_indices(flows.shape[0], k=1)
    values = flows[iu, ju]
    pos = values > threshold
    neg = values == 0.0
    if not pos.any():
        raise TrainingError(
            f"no positive pairs: no off-diagonal flow exceeds threshold {threshold}")
    return PairSets(pos_i=iu[pos], pos_j=ju[pos], pos_weight=np.log(values[pos]),
                    neg_i=iu[neg], neg_j=ju[neg])


def hop_penalty_pairs(hops: HopMatrix, epsilon: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unordered pairs farther than `epsilon` hops, with 1/log(hop) coefficients.

    Unreachable pairs are excluded (their hop count is undefined).
    """
    h = hops.hops
    iu, ju = np.triu_indices(h.shape[0], k=1)
    values = h[iu, ju]
    sel = (values > epsilon) & (values != UNREACHABLE)
    return iu[sel], ju[sel], 1.0 / np.log(values[sel].astype(np.float64))


# ---------------------------------------------------------------------------
# loss


def _merged_pairs(n_nodes: int, pairs: PairSets, hop_i: np.ndarray,
                  hop_j: np.ndarray, hop_coeff: np.ndarray,
                  neg_idx: np.ndarray | None = None):
    """Deduplicated pair list with numerator / denominator weights.

    A far zero-flow pair appears in both the negative set and the hop
    penalty; merging lets one distance evaluation serve every term.
    """
    ni, nj = pairs.neg_i, pairs.neg_j
    if neg_idx is not None:
        ni, nj = ni[neg_idx], nj[neg_idx]
    all_i = np.concatenate([pairs.pos_i, ni, hop_i])
    all_j = np.concatenate([pairs.pos_j, nj, hop_j])
    num_w = np.concatenate([pairs.pos_weight / pairs.n_pos,
                            np.zeros(len(ni)), np.zeros(len(hop_i))])
    den_w = np.concatenate([np.zeros(pairs.n_pos),
                            np.full(len(ni), 1.0 / len(ni)) if len(ni) else np.zeros(0),
                            hop_coeff])
    keys = all_i * n_nodes + all_j
    unique, inverse = np.unique(keys, return_inverse=True)
    merged_i = (unique // n_nodes).astype(np.int64)
    merged_j = (unique % n_nodes).astype(np.int64)
    merged_num = np.bincount(inverse, weights=num_w, minlength=len(unique))
    merged_den = np.bincount(inverse, weights=den_w, minlength=len(unique))
    return merged_i, merged_j, merged_num, merged_den


def _loss_from_merged(z: Tensor, merged, delta: float) -> Tensor:
    merged_i, merged_j, num_w, den_w = merged
    distances = z.pair_distances(merged_i, merged_j)
    numerator = (distances * num_w).sum()
    denominator = (distances * den_w).sum()
    return numerator / (denominator + delta)


def _loss_tensor(z: Tensor, pairs: PairSets, hop_i: np.ndarray, hop_j: np.ndarray,
                 hop_coeff: np.ndarray, delta: float = LOSS_DELTA,
                 neg_idx: np.ndarray | None = None) -> Tensor:
    merged = _merged_pairs(z.data.shape[0], pairs, hop_i, hop_j, hop_coeff, neg_idx)
    return _loss_from_merged(z, merged, delta)


def compute_loss(embeddings: np.ndarray, pairs: PairSets, hop_matrix: HopMatrix,
                 hop_epsilon: int, delta: float = LOSS_DELTA) -> float:
    """Value of the community-oriented loss for fixed embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if not np.all(np.isfinite(embeddings)):
        raise NumericalError("embeddings must be finite")
    if pairs.n_pos < 1:
        raise TrainingError("at least one positive pair required")
    if hop_epsilon < 1:
        raise ConfigError("hop_epsilon must be >= 1")
    hi, hj, hcoeff = hop_penalty_pairs(hop_matrix, hop_epsilon)
    value = _loss_tensor(Tensor(embeddings), pairs, hi, hj, hcoeff, delta=delta)
    return float(value.data)


# ---------------------------------------------------------------------------
# GCN


def gcn_propagation(adjacency: np.ndarray) -> np.ndarray:
    """Symmetrically normalized adjacency-with-self-loops propagation matrix."""
    a = np.asarray(adjacency, dtype=np.float64) + np.eye(adjacency.shape[0])
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def _gcn_tensor(prop: Tensor, x: Tensor, params: ParamSet) -> Tensor:
    z = x
    last = len(params.layers) - 1
    for idx, layer in enumerate(params.layers):
        z = prop @ (z @ layer.weights[0])
        if idx < last:  # final layer stays linear
            z = z.relu()
    return z


def gcn_forward(network: SpatialNetwork, params: ParamSet) -> np.ndarray:
    prop = Tensor(gcn_propagation(network.adjacency))
    return _gcn_tensor(prop, Tensor(network.attributes), params).data


# ---------------------------------------------------------------------------
# GAT


def build_gat_input(adjacency: np.ndarray, flows: np.ndarray, threshold: float) -> np.ndarray:
    """Binary neighborhood mask: geographic adjacency plus flows above threshold."""
    if threshold < 0:
        raise ConfigError("threshold must be >= 0")
    adjacency = np.asarray(adjacency)
    strong = np.asarray(flows) > threshold
    np.fill_diagonal(strong, False)
    return ((adjacency == 1) | strong).astype(np.int64)


def normalize_flow_weights(flows: np.ndarray, weight_threshold: float,
                           adjacency: np.ndarray | None = None) -> np.ndarray:
    """Log-rescale flows above `weight_threshold` into [0, 1].

    Entries at or below the threshold become 0. Surviving flows map to
    log(1+s)/log(1+s_max). When `adjacency` is given, contiguity neighbors
    whose flow was thresholded away get the floor weight 1/log(1+s_max)
    (clamped to (0, 1]) so purely geographic edges are never erased.
    """
    if weight_threshold < 0:
        raise ConfigError("weight_threshold must be >= 0")
    flows = np.asarray(flows, dtype=np.float64)
    surviving = flows > weight_threshold
    np.fill_diagonal(surviving, False)
    if not surviving.any():
        raise ValidationError(
            f"no flows above weight_threshold {weight_threshold}; lower the threshold")
    s_max = flows[surviving].max()
    scale = np.log1p(s_max)
    weights = np.zeros_like(flows)
    weights[surviving] = np.log1p(flows[surviving]) / scale
    if adjacency is not None:
        floor = min(1.0, 1.0 / scale)
        dropped = (np.asarray(adjacency) == 1) & ~surviving
        weights[dropped] = floor
    return weights


def _gat_layer_tensor(z: Tensor, layer: LayerParams, mask_self: np.ndarray,
                      flow_mat: np.ndarray | None, final: bool,
                      capture: list | None = None) -> Tensor:
    head_outputs = []
    for w, a in zip(layer.weights, layer.attention):
        h = z @ w
        out_dim = w.data.shape[1]
        a_src = a.take(np.arange(out_dim)).reshape((out_dim, 1))
        a_dst = a.take(np.arange(out_dim, 2 * out_dim)).reshape((out_dim, 1))
        scores = (h @ a_src) + (h @ a_dst).transpose()
        alpha = scores.leaky_relu(LEAKY_SLOPE).masked_softmax(mask_self)
        if capture is not None:
            capture.append(alpha.data.copy())
        if flow_mat is not None:
            alpha = alpha * flow_mat
        out = alpha @ h
        if not final:
            out = out.elu()
        head_outputs.append(out)
    if len(head_outputs) == 1:
        return head_outputs[0]
    if final:  # heads average on the output layer
        acc = head_outputs[0]
        for extra in head_outputs[1:]:
            acc = acc + extra
        return acc * (1.0 / len(head_outputs))
    return Tensor.concat(head_outputs, axis=1)


def _gat_tensor(x: Tensor, params: ParamSet, mask_self: np.ndarray,
                flow_mat: np.ndarray | None, capture: list | None = None) -> Tensor:
    z = x
    last = len(params.layers) - 1
    for idx, layer in enumerate(params.layers):
        z = _gat_layer_tensor(z, layer, mask_self, flow_mat, final=idx == last,
                              capture=capture)
    return z


def _with_self_loops(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) > 0) | np.eye(mask.shape[0], dtype=bool)


def _flow_weight_matrix(flow_weights: np.ndarray) -> np.ndarray:
    mat = np.asarray(flow_weights, dtype=np.float64).copy()
    np.fill_diagonal(mat, 1.0)  # self-loop keeps full weight
    return mat


def gat_forward(network: SpatialNetwork, params: ParamSet,
                neighborhood_mask: np.ndarray,
                flow_weights: np.ndarray | None = None) -> np.ndarray:
    """Attention forward pass; pass flow_weights for the weighted variant."""
    mask_self = _with_self_loops(neighborhood_mask)
    flow_mat = None if flow_weights is None else _flow_weight_matrix(flow_weights)
    return _gat_tensor(Tensor(network.attributes), params, mask_self, flow_mat).data


def gat_attention(network: SpatialNetwork, params: ParamSet,
                  neighborhood_mask: np.ndarray,
                  flow_weights: np.ndarray | None = None) -> list[np.ndarray]:
    """Per-layer, per-head attention matrices (softmax output, before flow weighting)."""
    mask_self = _with_self_loops(neighborhood_mask)
    flow_mat = None if flow_weights is None else _flow_weight_matrix(flow_weights)
    captured: list[np.ndarray] = []
    _gat_tensor(Tensor(network.attributes), params, mask_self, flow_mat,
                capture=captured)
    return captured


# ---------------------------------------------------------------------------
# parameter initialization and the shared forward builder


def init_params(config: ModelConfig, n_features: int,
                rng: np.random.Generator) -> ParamSet:
    config = config.resolved()
    layers = []
    if config.model == MODEL_GCN:
        dims = [n_features] + [config.hidden_dim] * (config.layers - 1) + [config.output_dim]
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = Tensor(glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out),
                       requires_grad=True)
            layers.append(LayerParams(weights=[w]))
    else:
        in_dim = n_features
        for idx in range(config.layers):
            final = idx == config.layers - 1
            out_dim = config.output_dim if final else config.hidden_dim
            weights, attns = [], []
            for _ in range(config.heads):
                weights.append(Tensor(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim),
                                      requires_grad=True))
                attns.append(Tensor(glorot_uniform(rng, (2 * out_dim,), 2 * out_dim, 1),
                                    requires_grad=True))
            layers.append(LayerParams(weights=weights, attention=attns))
            in_dim = out_dim if final else out_dim * config.heads
    return ParamSet(layers=layers)


def _make_forward(network: SpatialNetwork, config: ModelConfig):
    """Closure computing embeddings as a Tensor for the configured model."""
    x = Tensor(network.attributes)
    if config.model == MODEL_GCN:
        prop = Tensor(gcn_propagation(network.adjacency))
        return lambda params: _gcn_tensor(prop, x, params)
    mask = build_gat_input(network.adjacency, network.flows, config.pos_threshold)
    mask_self = _with_self_loops(mask)
    flow_mat = None
    if config.model == MODEL_WEIGHTED_GAT:
        weights = normalize_flow_weights(network.flows, config.weight_threshold,
                                         adjacency=network.adjacency)
        flow_mat = _flow_weight_matrix(weights)
    return lambda params: _gat_tensor(x, params, mask_self, flow_mat)


def _epoch_negatives(pairs: PairSets, n_nodes: int,
                     rng: np.random.Generator) -> np.ndarray | None:
    """Indices of the negatives used this epoch; None means all of them."""
    if n_nodes <= FULL_BATCH_LIMIT:
        return None
    cap = NEGATIVE_FACTOR * pairs.n_pos
    if pairs.n_neg <= cap:
        return None
    return np.sort(rng.choice(pairs.n_neg, size=cap, replace=False))


@dataclass
class TrainResult:
    embeddings: np.ndarray
    loss_history: list[float]
    config: ModelConfig
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float | None:
        return self.loss_history[-1] if self.loss_history else None


def train(network: SpatialNetwork, config: ModelConfig) -> TrainResult:
    """Full-batch Adam training; bit-reproducible for a fixed seed and config."""
    config = config.resolved()
    started = time.perf_counter()
    pairs = build_pairs(network.flows, config.pos_threshold)
    hops = compute_hops(network.adjacency)
    hop_i, hop_j, hop_coeff = hop_penalty_pairs(hops, config.hop_epsilon)
    rng = np.random.default_rng(config.seed)
    params = init_params(config, network.m, rng)
    forward = _make_forward(network, config)
    optimizer = Adam(params.tensors(), lr=config.learning_rate,
                     beta1=config.adam_beta1, beta2=config.adam_beta2,
                     eps=config.adam_eps)
    subsampling = network.n > FULL_BATCH_LIMIT
    if not subsampling:
        merged = _merged_pairs(network.n, pairs, hop_i, hop_j, hop_coeff)
    history: list[float] = []
    last_finite: float | None = None
    for epoch in range(config.epochs):
        z = forward(params)
        if subsampling:
            neg_idx = _epoch_negatives(pairs, network.n, rng)
            merged = _merged_pairs(network.n, pairs, hop_i, hop_j, hop_coeff, neg_idx)
        loss = _loss_from_merged(z, merged, LOSS_DELTA)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(
                f"non-finite loss at epoch {epoch}"
                + (f" (last finite loss {last_finite})" if last_finite is not None else ""))
        history.append(value)
        last_finite = value
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    embeddings = forward(params).data
    if not np.all(np.isfinite(embeddings)):
        raise NumericalError("training produced non-finite embeddings")
    return TrainResult(embeddings=embeddings, loss_history=history, config=config,
                       wall_time=time.perf_counter() - started)


def gradient_check(network: SpatialNetwork, config: ModelConfig,
                   step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Walks every entry of every parameter, so keep the network small (n <= 15).
    """
    config = config.resolved()
    if network.n > 15:
        raise ValidationError("gradient_check is exhaustive; use a network with n <= 15")
    if step <= 0:
        raise ConfigError("step must be > 0")
    pairs = build_pairs(network.flows, config.pos_threshold)
    hops = compute_hops(network.adjacency)
    hop_i, hop_j, hop_coeff = hop_penalty_pairs(hops, config.hop_epsilon)
    rng = np.random.default_rng(config.seed)
    params = init_params(config, network.m, rng)
    forward = _make_forward(network, config)

    def loss_value() -> float:
        return float(_loss_tensor(forward(params), pairs, hop_i, hop_j, hop_coeff).data)

    loss = _loss_tensor(forward(params), pairs, hop_i, hop_j, hop_coeff)
    for p in params.tensors():
        p.grad[...] = 0.0
    loss.backward()
    worst = 0.0
    for p in params.tensors():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + step
            plus = loss_value()
            flat[k] = keep - step
            minus = loss_value()
            flat[k] = keep
            fd = (plus - minus) / (2.0 * step)
            denom = max(abs(grad[k]), abs(fd), 1e-6)
            worst = max(worst, abs(grad[k] - fd) / denom)
    return worst
