import numpy as np
import pytest

from ttsnn.vbmf import (RANK_PRESETS, RESNET18_RANKS, RESNET34_RANKS,
                        energy_rank, estimate_layer_rank, evbmf_rank,
                        load_rank_list, middle_unfolding, resolve_rank_list,
                        save_rank_list)


def planted_matrix(rng, shape=(60, 80), rank=5, noise=0.01):
    u = rng.standard_normal((shape[0], rank))
    v = rng.standard_normal((rank, shape[1]))
    return u @ v + noise * rng.standard_normal(shape)


class TestEVBMF:
    def test_recovers_planted_rank_at_high_snr(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            est = evbmf_rank(planted_matrix(rng, noise=0.01))
            hits += est.rank == 5
        assert hits >= 19  # >= 95% of 20 trials

    def test_snr_ladder_monotone_in_detectability(self):
        # more noise can only hide components, never invent them
        rng = np.random.default_rng(3)
        u, v = rng.standard_normal((60, 5)), rng.standard_normal((5, 80))
        ranks = [evbmf_rank(u @ v + n * np.random.default_rng(0).standard_normal((60, 80))).rank
                 for n in (0.01, 0.5, 5.0)]
        assert ranks[0] == 5 and ranks[0] >= ranks[1] >= ranks[2]

    def test_zero_matrix_gives_rank_zero(self):
        assert evbmf_rank(np.zeros((30, 40))).rank == 0

    def test_nan_rejected(self):
        m = np.zeros((10, 10))
        m[0, 0] = np.nan
        with pytest.raises(ValueError):
            evbmf_rank(m)

    def test_transpose_invariant(self):
        rng = np.random.default_rng(7)
        m = planted_matrix(rng)
        assert evbmf_rank(m).rank == evbmf_rank(m.T).rank


class TestEnergyRank:
    def test_known_spectrum(self):
        # diag(3, 2, 1): cumulative energy 9/14, 13/14, 1
        m = np.diag([3.0, 2.0, 1.0])
        assert energy_rank(m, threshold=0.60).rank == 1
        assert energy_rank(m, threshold=0.90).rank == 2
        assert energy_rank(m, threshold=0.99).rank == 3

    def test_zero_matrix(self):
        assert energy_rank(np.zeros((5, 5))).rank == 0


class TestMiddleUnfolding:
    def test_shape_and_indexing(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((4, 3, 5, 5)).astype(np.float32)  # (O,I,K,K)
        m = middle_unfolding(w)
        assert m.shape == (3 * 5, 5 * 4)
        # entry (i*K + k1, k2*O + o) is w[o, i, k1, k2]
        assert m[2 * 5 + 1, 3 * 4 + 2] == w[2, 2, 1, 3]


class TestEstimateLayerRank:
    def test_fixed_list_positions(self):
        w = np.zeros((8, 8, 3, 3), dtype=np.float32)
        assert estimate_layer_rank(w, "fixed-list",
                                   rank_list=[9, 7, 5], position=1) == 7
        with pytest.raises(ValueError, match="position"):
            estimate_layer_rank(w, "fixed-list", rank_list=[9], position=3)

    def test_clamped_to_unfolding_rank(self):
        w = np.random.default_rng(0).standard_normal((4, 4, 3, 3)).astype(np.float32)
        r = estimate_layer_rank(w, "fixed-list", rank_list=[500], position=0)
        assert 1 <= r <= 12  # min(I*K, K*O) = 12

    def test_vbmf_policy_on_lowrank_layer(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal((4 * 3, 3))
        v = rng.standard_normal((3, 3 * 8))
        w = (u @ v).reshape(4, 3, 3, 8).transpose(3, 0, 1, 2).astype(np.float32)
        # middle unfolding of this construction has rank 3 exactly
        assert estimate_layer_rank(w, "vbmf") == 3


class TestRankPresets:
    def test_lengths_match_decomposable_layer_counts(self):
        assert len(RESNET18_RANKS) == 16
        assert len(RESNET34_RANKS) == 32
        assert RANK_PRESETS["paper-resnet18"] == RESNET18_RANKS
        assert RANK_PRESETS["paper-resnet34"] == RESNET34_RANKS

    def test_fifth_layer_rank(self):
        assert RESNET18_RANKS[4] == 37

    def test_round_trip_and_resolve(self, tmp_path):
        path = tmp_path / "ranks.json"
        save_rank_list(path, [3, 1, 2])
        assert load_rank_list(path) == [3, 1, 2]
        assert resolve_rank_list("paper-resnet18") == RESNET18_RANKS
        assert resolve_rank_list(str(path)) == [3, 1, 2]
        path.write_text('{"not": "a list"}')
        with pytest.raises(ValueError, match="array"):
            load_rank_list(path)
