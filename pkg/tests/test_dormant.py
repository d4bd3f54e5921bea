import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moerl.dormant import DormantConfig, dormant_ratio, neuron_scores
from moerl.errors import ContractError


class TestNeuronScores:
    def test_all_equal_nonzero_scores_one(self):
        acts = np.full((10, 6), 3.7)
        assert np.allclose(neuron_scores(acts), 1.0, atol=1e-12)

    def test_hand_ratio(self):
        # per-sample outputs [0, a, a, a] -> scores [0, 4/3, 4/3, 4/3]
        acts = np.tile([0.0, 2.0, 2.0, 2.0], (5, 1))
        assert np.allclose(neuron_scores(acts), [0.0, 4 / 3, 4 / 3, 4 / 3], atol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        acts = rng.standard_normal((8, 5))
        assert np.allclose(neuron_scores(acts), neuron_scores(17.3 * acts), atol=1e-12)

    def test_all_dead_layer_scores_zero(self):
        assert np.array_equal(neuron_scores(np.zeros((4, 3))), np.zeros(3))

    def test_layer_mean_is_one_when_alive(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            acts = rng.standard_normal((6, int(rng.integers(1, 12))))
            scores = neuron_scores(acts)
            if np.any(acts != 0):
                assert np.mean(scores) == pytest.approx(1.0, abs=1e-9)

    def test_empty_batch_rejected(self):
        with pytest.raises(ContractError):
            neuron_scores(np.zeros((0, 4)))


class TestDormantRatio:
    def test_hand_counted_quarter(self):
        # 1 of 4 hidden neurons silenced -> ratio 0.25 for small tau
        rng = np.random.default_rng(2)
        acts = np.abs(rng.standard_normal((16, 4))) + 0.5
        acts[:, 2] = 0.0
        report = dormant_ratio([("hidden", acts)], tau=0.1)
        assert report.ratio == 0.25
        assert report.per_layer[0].dormant_count == 1

    def test_tau_zero_all_alive(self):
        acts = np.abs(np.random.default_rng(3).standard_normal((8, 5))) + 0.1
        assert dormant_ratio([("h", acts)], tau=0.0).ratio == 0.0

    def test_tau_above_max_score_all_dormant(self):
        acts = np.abs(np.random.default_rng(4).standard_normal((8, 5))) + 0.1
        max_score = neuron_scores(acts).max()
        assert dormant_ratio([("h", acts)], tau=max_score + 1e-9).ratio == 1.0

    def test_multi_layer_aggregation(self):
        a1 = np.full((4, 2), 1.0)  # no dormant
        a2 = np.zeros((4, 3))      # all dormant
        report = dormant_ratio([("l1", a1), ("l2", a2)], tau=0.05)
        assert report.ratio == pytest.approx(3 / 5)

    @given(st.floats(0.0, 0.5), st.floats(0.5, 2.0))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_tau(self, tau_lo, tau_hi):
        rng = np.random.default_rng(5)
        layers = [("h", rng.standard_normal((6, 9)))]
        assert dormant_ratio(layers, tau_lo).ratio <= dormant_ratio(layers, tau_hi).ratio

    def test_activation_rescaling_invariance(self):
        rng = np.random.default_rng(6)
        acts = rng.standard_normal((10, 7))
        r1 = dormant_ratio([("h", acts)], tau=0.3).ratio
        r2 = dormant_ratio([("h", 250.0 * acts)], tau=0.3).ratio
        assert r1 == r2

    def test_no_layers_rejected(self):
        with pytest.raises(ContractError):
            dormant_ratio([], tau=0.1)

    def test_negative_tau_rejected_in_config(self):
        with pytest.raises(ContractError):
            DormantConfig(tau=-0.1)
