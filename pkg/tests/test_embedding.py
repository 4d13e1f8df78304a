import math

import numpy as np
import pytest

from conftest import make_grid_network
from oracles import loss_reference
from regionflow.autodiff import Tensor
from regionflow.embedding import (LayerParams, ModelConfig, PairSets, ParamSet,
                                  _epoch_negatives, build_gat_input, build_pairs,
                                  compute_loss, gat_attention, gat_forward,
                                  gcn_forward, gradient_check, hop_penalty_pairs,
                                  init_params, normalize_flow_weights, train)
from regionflow.errors import ConfigError, NumericalError, TrainingError, \
    ValidationError
from regionflow.graph import HopMatrix, SpatialNetwork, compute_hops


def single_weight_params(*matrices) -> ParamSet:
    return ParamSet(layers=[LayerParams(weights=[Tensor(np.asarray(m, dtype=float),
                                                        requires_grad=True)])
                            for m in matrices])


def gat_params(weight_attn_pairs) -> ParamSet:
    layers = []
    for w, a in weight_attn_pairs:
        layers.append(LayerParams(weights=[Tensor(np.asarray(w, float), requires_grad=True)],
                                  attention=[Tensor(np.asarray(a, float), requires_grad=True)]))
    return ParamSet(layers=layers)


def tiny_network(adjacency, flows, attributes):
    n = len(adjacency)
    return SpatialNetwork(node_ids=[f"n{i}" for i in range(n)],
                          adjacency=np.asarray(adjacency),
                          flows=np.asarray(flows, float),
                          attributes=np.asarray(attributes, float))


class TestModelConfig:
    def test_pos_threshold_defaults_per_model(self):
        assert ModelConfig(model="gcn").resolved().pos_threshold == 0.0
        assert ModelConfig(model="gat").resolved().pos_threshold == 5.0
        assert ModelConfig(model="weighted-gat").resolved().pos_threshold == 200.0

    def test_explicit_threshold_wins(self):
        assert ModelConfig(model="weighted-gat", pos_threshold=3.0).resolved() \
            .pos_threshold == 3.0

    def test_invariants(self):
        with pytest.raises(ConfigError):
            ModelConfig(output_dim=1).resolved()
        with pytest.raises(ConfigError):
            ModelConfig(hop_epsilon=0).resolved()
        with pytest.raises(ConfigError):
            ModelConfig(pos_threshold=-1.0).resolved()
        with pytest.raises(ConfigError):
            ModelConfig(model="mlp").resolved()


class TestGcnForward:
    def test_isolated_node_identity(self):
        net = tiny_network([[0]], [[0.0]], [[1.0]])
        params = single_weight_params([[2.0]], [[1.0]])
        out = gcn_forward(net, params)
        assert out[0, 0] == pytest.approx(2.0)

    def test_zero_weights_zero_output(self, grid12):
        params = single_weight_params(np.zeros((4, 3)), np.zeros((3, 2)))
        assert np.all(gcn_forward(grid12, params) == 0.0)

    def test_path_graph_hand_values(self):
        net = tiny_network([[0, 1, 0], [1, 0, 1], [0, 1, 0]],
                           np.zeros((3, 3)), [[1.0], [0.0], [0.0]])
        params = single_weight_params([[1.0]], [[1.0]])
        out = gcn_forward(net, params)
        # normalized propagation applied twice to the first basis column
        r6 = math.sqrt(6.0)
        expected = [5.0 / 12.0, (0.5 + 1.0 / 3.0) / r6, 1.0 / 6.0]
        assert np.allclose(out[:, 0], expected, atol=1e-12)

    def test_first_layer_hand_values(self):
        net = tiny_network([[0, 1, 0], [1, 0, 1], [0, 1, 0]],
                           np.zeros((3, 3)), [[1.0], [0.0], [0.0]])
        params = single_weight_params([[1.0]])
        out = gcn_forward(net, params)
        assert np.allclose(out[:, 0], [0.5, 1.0 / math.sqrt(6.0), 0.0], atol=1e-12)

    def test_locality_two_layers(self):
        net = make_grid_network(1, 6, seed=3)
        rng = np.random.default_rng(0)
        params = single_weight_params(rng.normal(size=(4, 5)), rng.normal(size=(5, 3)))
        base = gcn_forward(net, params)
        attrs = net.attributes.copy()
        attrs[5] = 1.0 - attrs[5]  # still in [0, 1]
        moved = SpatialNetwork(node_ids=net.node_ids, adjacency=net.adjacency,
                               flows=net.flows, attributes=attrs)
        out = gcn_forward(moved, params)
        hops = compute_hops(net.adjacency).hops
        for i in range(6):
            if hops[i, 5] > 2:
                assert np.array_equal(out[i], base[i])
            else:
                assert not np.array_equal(out[i], base[i])


class TestGatInput:
    def test_adjacency_only_edge(self):
        mask = build_gat_input(np.array([[0, 1], [1, 0]]), np.zeros((2, 2)), 200.0)
        assert mask[0, 1] == 1

    def test_flow_above_threshold_adds_edge(self):
        adjacency = np.zeros((3, 3), dtype=int)
        flows = np.zeros((3, 3))
        flows[0, 2] = flows[2, 0] = 300.0
        mask = build_gat_input(adjacency, flows, 200.0)
        assert mask[0, 2] == 1

    def test_flow_below_threshold_excluded(self):
        adjacency = np.zeros((3, 3), dtype=int)
        flows = np.zeros((3, 3))
        flows[0, 2] = flows[2, 0] = 150.0
        mask = build_gat_input(adjacency, flows, 200.0)
        assert mask[0, 2] == 0


class TestNormalizeFlowWeights:
    def test_equal_flows_normalize_to_one(self):
        flows = np.full((3, 3), 7.0)
        np.fill_diagonal(flows, 0.0)
        weights = normalize_flow_weights(flows, 0.0)
        off = ~np.eye(3, dtype=bool)
        assert np.all(weights[off] == 1.0)

    def test_threshold_is_strict(self):
        flows = np.array([[0.0, 5.0, 9.0], [5.0, 0.0, 0.0], [9.0, 0.0, 0.0]])
        weights = normalize_flow_weights(flows, 5.0)
        assert weights[0, 1] == 0.0
        assert weights[0, 2] == 1.0

    def test_log_scaling_hand_values(self):
        e = math.e
        flows = np.array([[0.0, e - 1, 0.0], [e - 1, 0.0, e * e - 1],
                          [0.0, e * e - 1, 0.0]])
        weights = normalize_flow_weights(flows, 0.0)
        assert weights[0, 1] == pytest.approx(0.5, abs=1e-12)
        assert weights[1, 2] == pytest.approx(1.0, abs=1e-12)

    def test_adjacency_floor(self):
        flows = np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 50.0], [0.0, 50.0, 0.0]])
        adjacency = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        weights = normalize_flow_weights(flows, 1.0, adjacency=adjacency)
        floor = 1.0 / math.log1p(50.0)
        assert weights[0, 1] == pytest.approx(floor)
        assert 0.0 < weights[0, 1] <= 1.0

    def test_no_survivors_is_error(self):
        flows = np.full((2, 2), 3.0)
        with pytest.raises(ValidationError, match="lower"):
            normalize_flow_weights(flows, 10.0)


class TestGatForward:
    def test_self_loop_only(self):
        rng = np.random.default_rng(1)
        attrs = rng.random((2, 3))
        net = tiny_network(np.zeros((2, 2), dtype=int), np.zeros((2, 2)), attrs)
        w = rng.normal(size=(3, 2))
        params = gat_params([(w, rng.normal(size=4))])
        mask = build_gat_input(net.adjacency, net.flows, 0.0)
        out = gat_forward(net, params, mask)
        assert np.allclose(out, attrs @ w, atol=1e-12)

    def test_two_node_hand_evaluation(self):
        attrs = np.array([[0.2, 0.7], [0.9, 0.1]])
        net = tiny_network([[0, 1], [1, 0]], np.zeros((2, 2)), attrs)
        w = np.array([[1.0, -0.5], [0.25, 2.0]])
        a = np.array([0.3, -0.7, 1.1, 0.9])
        params = gat_params([(w, a)])
        mask = build_gat_input(net.adjacency, net.flows, 0.0)
        out = gat_forward(net, params, mask)

        h = attrs @ w
        def leaky(v):
            return v if v > 0 else 0.2 * v
        src = h @ a[:2]
        dst = h @ a[2:]
        expected = np.empty((2, 2))
        for i in range(2):
            scores = {j: leaky(src[i] + dst[j]) for j in (0, 1)}
            mx = max(scores.values())
            weights = {j: math.exp(s - mx) for j, s in scores.items()}
            z = sum(weights.values())
            expected[i] = sum(weights[j] / z * h[j] for j in (0, 1))
        assert np.allclose(out, expected, atol=1e-12)

    def test_weighted_reduces_to_plain_with_unit_weights(self, grid12):
        rng = np.random.default_rng(8)
        params = gat_params([(rng.normal(size=(4, 5)), rng.normal(size=10)),
                             (rng.normal(size=(5, 3)), rng.normal(size=6))])
        mask = build_gat_input(grid12.adjacency, grid12.flows, 0.0)
        plain = gat_forward(grid12, params, mask)
        weighted = gat_forward(grid12, params, mask, flow_weights=np.ones((12, 12)))
        assert np.array_equal(plain, weighted)  # bit-for-bit

    def test_attention_rows_sum_to_one(self, grid12):
        rng = np.random.default_rng(2)
        params = gat_params([(rng.normal(size=(4, 5)), rng.normal(size=10)),
                             (rng.normal(size=(5, 3)), rng.normal(size=6))])
        mask = build_gat_input(grid12.adjacency, grid12.flows, 0.0)
        for alpha in gat_attention(grid12, params, mask):
            assert np.allclose(alpha.sum(axis=1), 1.0, atol=1e-12)

    def test_multi_head_shapes(self, grid12):
        config = ModelConfig(model="gat", layers=2, hidden_dim=3, output_dim=4,
                             heads=3, pos_threshold=0.0).resolved()
        params = init_params(config, grid12.m, np.random.default_rng(0))
        mask = build_gat_input(grid12.adjacency, grid12.flows, 0.0)
        out = gat_forward(grid12, params, mask)
        assert out.shape == (12, 4)  # heads averaged on the final layer
        assert params.layers[1].weights[0].data.shape == (9, 4)  # concat feeds layer 2


class TestPermutationEquivariance:
    @pytest.mark.parametrize("model", ["gcn", "gat", "weighted-gat"])
    def test_forward_permutes_with_nodes(self, model, grid12):
        rng = np.random.default_rng(7)
        perm = rng.permutation(12)
        permuted = SpatialNetwork(
            node_ids=[grid12.node_ids[i] for i in perm],
            adjacency=grid12.adjacency[np.ix_(perm, perm)],
            flows=grid12.flows[np.ix_(perm, perm)],
            attributes=grid12.attributes[perm])
        if model == "gcn":
            params = single_weight_params(rng.normal(size=(4, 5)), rng.normal(size=(5, 3)))
            base = gcn_forward(grid12, params)
            out = gcn_forward(permuted, params)
        else:
            params = gat_params([(rng.normal(size=(4, 5)), rng.normal(size=10)),
                                 (rng.normal(size=(5, 3)), rng.normal(size=6))])
            weights = None
            if model == "weighted-gat":
                weights = normalize_flow_weights(grid12.flows, 0.0,
                                                 adjacency=grid12.adjacency)
            mask = build_gat_input(grid12.adjacency, grid12.flows, 0.0)
            base = gat_forward(grid12, params, mask, flow_weights=weights)
            pmask = build_gat_input(permuted.adjacency, permuted.flows, 0.0)
            pweights = None if weights is None else weights[np.ix_(perm, perm)]
            out = gat_forward(permuted, params, pmask, flow_weights=pweights)
        assert np.allclose(out, base[perm], atol=1e-10)


class TestBuildPairs:
    def test_single_edge(self):
        pairs = build_pairs(np.array([[0.0, 3.0], [3.0, 0.0]]), 0.0)
        assert pairs.n_pos == 1 and pairs.n_neg == 0
        assert pairs.pos_weight[0] == pytest.approx(math.log(3.0))

    def test_unit_flow_gives_zero_weight(self):
        pairs = build_pairs(np.array([[0.0, 1.0], [1.0, 0.0]]), 0.0)
        assert pairs.pos_weight[0] == 0.0

    def test_three_node_enumeration(self):
        flows = np.zeros((3, 3))
        flows[0, 1] = flows[1, 0] = 5.0
        pairs = build_pairs(flows, 0.0)
        assert pairs.n_pos == 1
        assert {(int(i), int(j)) for i, j in zip(pairs.neg_i, pairs.neg_j)} \
            == {(0, 2), (1, 2)}

    def test_between_zero_and_threshold_in_neither_set(self):
        flows = np.zeros((3, 3))
        flows[0, 1] = flows[1, 0] = 5.0
        flows[0, 2] = flows[2, 0] = 1.5
        pairs = build_pairs(flows, 2.0)
        assert pairs.n_pos == 1 and pairs.n_neg == 1

    def test_empty_positive_set(self):
        with pytest.raises(TrainingError, match="positive"):
            build_pairs(np.zeros((3, 3)), 0.0)


def all_close_hops(n):
    return HopMatrix(hops=np.ones((n, n), dtype=int) - np.eye(n, dtype=int))


class TestComputeLoss:
    def make_pairs(self):
        return PairSets(pos_i=np.array([0]), pos_j=np.array([1]),
                        pos_weight=np.array([1.0]),
                        neg_i=np.array([0, 1]), neg_j=np.array([2, 2]))

    def test_identical_embeddings_zero(self):
        z = np.ones((3, 2))
        loss = compute_loss(z, self.make_pairs(), all_close_hops(3), hop_epsilon=2)
        assert loss == 0.0

    def test_scalar_hand_example(self):
        z = np.array([[0.0], [1.0], [3.0]])
        loss = compute_loss(z, self.make_pairs(), all_close_hops(3), hop_epsilon=2)
        assert loss == pytest.approx(1.0 / (2.5 + 1e-8), rel=1e-12)

    def test_hop_penalty_term(self):
        z = np.array([[0.0], [1.0], [3.0]])
        hops = HopMatrix(hops=np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]]))
        loss = compute_loss(z, self.make_pairs(), hops, hop_epsilon=1)
        expected = 1.0 / (2.5 + 3.0 / math.log(2.0) + 1e-8)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(3, 4))
        base = compute_loss(z, self.make_pairs(), all_close_hops(3), 2, delta=0.0)
        for c in (0.1, 10.0):
            scaled = compute_loss(c * z, self.make_pairs(), all_close_hops(3), 2,
                                  delta=0.0)
            assert scaled == pytest.approx(base, rel=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(3, 4))
        shift = rng.normal(size=4)
        base = compute_loss(z, self.make_pairs(), all_close_hops(3), 2)
        moved = compute_loss(z + shift, self.make_pairs(), all_close_hops(3), 2)
        assert moved == pytest.approx(base, abs=1e-9)

    def test_unreachable_pairs_excluded(self):
        hops = HopMatrix(hops=np.array([[0, 1, -1], [1, 0, -1], [-1, -1, 0]]))
        hi, hj, _ = hop_penalty_pairs(hops, epsilon=1)
        assert len(hi) == 0 and len(hj) == 0

    def test_matches_scalar_reference_on_random_networks(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            net = make_grid_network(2, 3, seed=int(rng.integers(1e6)),
                                    flow_density=0.5)
            try:
                pairs = build_pairs(net.flows, 0.0)
            except TrainingError:
                continue
            hops = compute_hops(net.adjacency)
            z = rng.normal(size=(6, 3))
            got = compute_loss(z, pairs, hops, hop_epsilon=1)
            pos = [(int(i), int(j), float(net.flows[i, j]))
                   for i, j in zip(pairs.pos_i, pairs.pos_j)]
            neg = [(int(i), int(j)) for i, j in zip(pairs.neg_i, pairs.neg_j)]
            want = loss_reference(z, pos, neg, hops.hops, epsilon=1)
            assert got == pytest.approx(want, rel=1e-12)


class TestTrain:
    def config(self, model="gcn", **kw):
        base = dict(model=model, hidden_dim=5, output_dim=3, epochs=15, seed=4,
                    pos_threshold=0.0, weight_threshold=0.0)
        base.update(kw)
        return ModelConfig(**base)

    def test_deterministic(self, grid12):
        a = train(grid12, self.config())
        b = train(grid12, self.config())
        assert np.array_equal(a.embeddings, b.embeddings)
        assert a.loss_history == b.loss_history

    def test_epochs_zero_equals_untrained_forward(self, grid12):
        config = self.config(epochs=0).resolved()
        result = train(grid12, config)
        params = init_params(config, grid12.m, np.random.default_rng(config.seed))
        assert np.array_equal(result.embeddings, gcn_forward(grid12, params))
        assert result.loss_history == []

    @pytest.mark.parametrize("model", ["gcn", "gat", "weighted-gat"])
    def test_loss_decreases(self, model):
        net = make_grid_network(4, 4, seed=11, flow_density=0.5)
        result = train(net, self.config(model=model, epochs=40))
        assert result.loss_history[-1] < result.loss_history[0]

    def test_nan_aborts_with_epoch(self, grid12):
        with np.errstate(all="ignore"):  # the overflow is the point
            with pytest.raises(NumericalError, match="epoch"):
                train(grid12, self.config(learning_rate=1e160, epochs=10))

    def test_seed_changes_run(self, grid12):
        a = train(grid12, self.config(seed=1))
        b = train(grid12, self.config(seed=2))
        assert not np.array_equal(a.embeddings, b.embeddings)


class TestNegativeSubsampling:
    def make(self, n_pos, n_neg):
        return PairSets(pos_i=np.zeros(n_pos, int), pos_j=np.ones(n_pos, int),
                        pos_weight=np.ones(n_pos),
                        neg_i=np.arange(n_neg), neg_j=np.arange(n_neg) + 1)

    def test_small_network_uses_all(self):
        pairs = self.make(2, 500)
        assert _epoch_negatives(pairs, 100, np.random.default_rng(0)) is None

    def test_large_network_subsamples(self):
        pairs = self.make(3, 400)
        idx = _epoch_negatives(pairs, 6000, np.random.default_rng(0))
        assert len(idx) == 150  # 50x the positive count
        assert len(np.unique(idx)) == 150
        assert np.all(np.diff(idx) > 0)

    def test_large_network_few_negatives_keeps_all(self):
        pairs = self.make(10, 400)
        assert _epoch_negatives(pairs, 6000, np.random.default_rng(0)) is None


class TestGradientCheck:
    @pytest.mark.parametrize("model", ["gcn", "gat", "weighted-gat"])
    def test_small_network(self, model):
        net = make_grid_network(2, 3, seed=9, flow_density=0.6)
        config = ModelConfig(model=model, hidden_dim=4, output_dim=3, seed=5,
                             pos_threshold=0.0, weight_threshold=0.0)
        assert gradient_check(net, config) < 1e-4

    def test_rejects_large_networks(self):
        net = make_grid_network(4, 4, seed=0)
        with pytest.raises(ValidationError, match="n <= 15"):
            gradient_check(net, ModelConfig(pos_threshold=0.0))
