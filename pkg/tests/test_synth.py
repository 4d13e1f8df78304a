import numpy as np
import pytest

from oracles import brute_ari
from regionflow.cluster import Partition
from regionflow.errors import ConfigError, InfeasibleError, ValidationError
from regionflow.graph import compute_hops, connected_components, derive_adjacency
from regionflow.metrics import join_count_ratio
from regionflow.synth import (SynthConfig, adjusted_rand_index, generate,
                              random_contiguous_partition)


def small_config(**kw):
    base = dict(lattice_size=4, communities=4, lambda_in=6.0, lambda_out=1.0,
                feature_dim=4, feature_sep=0.4, noise_sd=0.1, seed=0)
    base.update(kw)
    return SynthConfig(**base)


class TestGenerate:
    def test_lattice_structure(self):
        network, planted = generate(small_config())
        assert network.n == 16
        assert sorted(set(network.adjacency.sum(axis=1).tolist())) == [2, 3, 4]
        assert sorted(set(planted.tolist())) == [1, 2, 3, 4]
        counts = [int((planted == c).sum()) for c in range(1, 5)]
        assert counts == [4, 4, 4, 4]  # contiguous 2x2 blocks

    def test_planted_blocks_contiguous(self):
        network, planted = generate(small_config(lattice_size=6))
        for c in set(planted.tolist()):
            members = np.flatnonzero(planted == c)
            sub = network.adjacency[np.ix_(members, members)]
            assert int(connected_components(sub).max()) == 0

    def test_zero_lambda_out_no_inter_flows(self):
        network, planted = generate(small_config(lambda_out=0.0))
        inter = planted[:, None] != planted[None, :]
        assert network.flows[inter].sum() == 0.0

    def test_deterministic(self):
        a, pa = generate(small_config(seed=5))
        b, pb = generate(small_config(seed=5))
        assert np.array_equal(a.flows, b.flows)
        assert np.array_equal(a.attributes, b.attributes)
        assert np.array_equal(pa, pb)

    def test_flows_limited_to_hop_window(self):
        network, _ = generate(small_config(lattice_size=8))
        hops = compute_hops(network.adjacency).hops
        assert network.flows[hops > 4].sum() == 0.0

    def test_adjacency_matches_geometry_derivation(self):
        network, _ = generate(small_config())
        derived = derive_adjacency(network.geometries, rule="rook")
        assert np.array_equal(derived, network.adjacency)

    def test_intra_flow_mean_near_lambda(self):
        config = small_config(lattice_size=10, lambda_in=8.0, lambda_out=1.0, seed=3)
        network, planted = generate(config)
        hops = compute_hops(network.adjacency).hops
        iu, ju = np.triu_indices(network.n, k=1)
        window = hops[iu, ju] <= 4
        same = planted[iu] == planted[ju]
        values = network.flows[iu[window & same], ju[window & same]]
        sigma = np.sqrt(config.lambda_in / len(values))
        assert abs(values.mean() - config.lambda_in) < 3 * sigma

    def test_untileable_community_count(self):
        with pytest.raises(ValidationError, match="tile"):
            generate(small_config(lattice_size=5, communities=4))

    def test_bad_rates_rejected(self):
        with pytest.raises(ConfigError):
            generate(small_config(lambda_in=1.0, lambda_out=2.0))

    def test_network_passes_validation(self):
        # SpatialNetwork's own __post_init__ enforces the graph invariants
        network, _ = generate(small_config(noise_sd=0.3))
        assert np.all(network.attributes >= 0) and np.all(network.attributes <= 1)


class TestAdjustedRandIndex:
    def test_identical(self):
        assert adjusted_rand_index([1, 1, 2, 2], [1, 1, 2, 2]) == 1.0

    def test_constant_vs_split_is_zero(self):
        assert adjusted_rand_index([1, 1, 2, 2], [3, 3, 3, 3]) == pytest.approx(0.0)

    def test_relabel_invariance(self):
        a = [1, 1, 2, 3, 3, 2]
        b = [2, 2, 3, 1, 1, 3]
        assert adjusted_rand_index(a, b) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = rng.integers(1, 4, size=10)
            b = rng.integers(1, 4, size=10)
            assert adjusted_rand_index(a, b) == pytest.approx(
                adjusted_rand_index(b, a), abs=1e-15)

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n = int(rng.integers(3, 12))
            a = rng.integers(1, 4, size=n).tolist()
            b = rng.integers(1, 4, size=n).tolist()
            assert adjusted_rand_index(a, b) == pytest.approx(brute_ari(a, b),
                                                              abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            adjusted_rand_index([1, 2], [1, 2, 3])


class TestRandomContiguousPartition:
    def test_contiguous_and_complete(self):
        network, _ = generate(small_config(lattice_size=6))
        for seed in range(10):
            p = random_contiguous_partition(network.adjacency, 4, seed=seed)
            assert p.k == 4
            for members in p.communities():
                sub = network.adjacency[np.ix_(members, members)]
                assert int(connected_components(sub).max()) == 0

    def test_deterministic(self):
        network, _ = generate(small_config())
        a = random_contiguous_partition(network.adjacency, 3, seed=2)
        b = random_contiguous_partition(network.adjacency, 3, seed=2)
        assert np.array_equal(a.labels, b.labels)

    def test_scores_below_planted_on_join_count(self):
        network, planted = generate(small_config(lattice_size=6))
        planted_part = Partition.from_labels(planted.tolist())
        control = random_contiguous_partition(network.adjacency, 4, seed=1)
        assert join_count_ratio(network.adjacency, planted_part) \
            > join_count_ratio(network.adjacency, control)
