"""Boosted forest: binning, greedy tree growth, RealBoost, staged bootstrapping."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samhead.errors import ConfigError, DataError
from samhead.forest import (
    BoostConfig,
    FeatureBinner,
    Forest,
    TrainConfig,
    TrainingError,
    basic_training_config,
    bootstrap_train,
    full_training_config,
    realboost_fit,
    select_hard_negatives,
    train_tree,
)

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([-1.0, 1.0, 1.0, -1.0])
UNIFORM4 = np.full(4, 0.25)


def separable_blobs(n_per_class=40, seed=123):
    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=(2.0, 2.0), scale=0.4, size=(n_per_class, 2))
    neg = rng.normal(loc=(-2.0, -2.0), scale=0.4, size=(n_per_class, 2))
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    return X, y


class TestFeatureBinner:
    def test_sparse_feature_gets_midpoint_cuts(self):
        X = np.array([[0.0], [1.0], [1.0], [3.0]])
        binner = FeatureBinner(X, max_bins=8)
        np.testing.assert_allclose(binner.cuts[0], [0.5, 2.0])
        np.testing.assert_array_equal(binner.bins[:, 0], [0, 1, 1, 2])
        assert binner.width == 3

    def test_dense_feature_capped_by_quantiles(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(500, 1))
        binner = FeatureBinner(X, max_bins=16)
        assert binner.cuts[0].size <= 15
        assert binner.bins[:, 0].max() <= 15

    def test_binning_respects_cut_semantics(self):
        # bin b collects values <= cuts[b] (and the overflow bin above all cuts).
        X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
        binner = FeatureBinner(X, max_bins=16)
        col = X[:, 0]
        for value, b in zip(col, binner.bins[:, 0]):
            if b > 0:
                assert value > binner.cuts[0][b - 1]
            if b < binner.cuts[0].size:
                assert value <= binner.cuts[0][b]

    def test_max_bins_validation(self):
        X = np.zeros((4, 1))
        with pytest.raises(ConfigError):
            FeatureBinner(X, max_bins=1)
        with pytest.raises(ConfigError):
            FeatureBinner(X, max_bins=257)

    def test_requires_matrix(self):
        with pytest.raises(TrainingError):
            FeatureBinner(np.zeros(4))


class TestTrainTree:
    def test_stump_finds_the_separating_threshold(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        eps = 0.01
        tree = train_tree(FeatureBinner(X), UNIFORM4, y, max_depth=1, eps=eps)
        assert tree.feature[0] == 0
        assert tree.threshold[0] == 2.5
        preds = tree.apply(X)
        assert np.all(np.sign(preds) == y)
        # Pure leaves carry the smoothed half log-odds exactly.
        want = 0.5 * math.log((0.5 + eps) / eps)
        np.testing.assert_allclose(preds[2:], want)
        np.testing.assert_allclose(preds[:2], -want)

    def test_xor_needs_depth_two(self):
        binner = FeatureBinner(XOR_X)
        shallow = train_tree(binner, UNIFORM4, XOR_Y, max_depth=1, eps=0.01)
        np.testing.assert_allclose(shallow.apply(XOR_X), 0.0)
        deep = train_tree(binner, UNIFORM4, XOR_Y, max_depth=2, eps=0.01)
        assert np.all(np.sign(deep.apply(XOR_X)) == XOR_Y)

    def test_feature_tie_breaks_to_smallest_index(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        tree = train_tree(FeatureBinner(X), UNIFORM4, y, max_depth=1, eps=0.01)
        assert tree.feature[0] == 0

    def test_threshold_tie_breaks_to_smallest_cut(self):
        # Splitting off either the first or last sample is equally good.
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([1.0, -1.0, -1.0, 1.0])
        tree = train_tree(FeatureBinner(X), UNIFORM4, y, max_depth=1, eps=0.01)
        assert tree.threshold[0] == 1.5

    def test_pure_node_stops_early(self):
        X = np.array([[1.0], [2.0], [3.0]])
        y = np.ones(3)
        tree = train_tree(FeatureBinner(X), np.full(3, 1 / 3), y, max_depth=4, eps=0.01)
        assert tree.n_nodes == 1
        assert tree.feature[0] == -1

    def test_validation(self):
        binner = FeatureBinner(XOR_X)
        with pytest.raises(ConfigError):
            train_tree(binner, UNIFORM4, XOR_Y, max_depth=0, eps=0.01)
        with pytest.raises(TrainingError):
            train_tree(binner, np.full(3, 0.25), XOR_Y, max_depth=1, eps=0.01)


class TestRealboost:
    def test_separable_data_drives_loss_down(self):
        X, y = separable_blobs()
        forest, log = realboost_fit(X, y, rounds=32, config=BoostConfig(max_depth=2))
        assert log.losses[-1] < 0.05
        assert np.all(np.sign(forest.score(X)) == y)

    def test_weight_sums_stay_normalized(self):
        X, y = separable_blobs(seed=7)
        _, log = realboost_fit(X, y, rounds=16, config=BoostConfig(max_depth=2))
        assert len(log.weight_sum_errors) == 16
        assert max(log.weight_sum_errors) < 1e-9

    def test_loss_never_increases(self):
        X, y = separable_blobs(seed=9)
        _, log = realboost_fit(X, y, rounds=24, config=BoostConfig(max_depth=1))
        assert all(b <= a + 1e-12 for a, b in zip(log.losses, log.losses[1:]))

    def test_priors_act_as_round_zero_margin(self):
        X, y = separable_blobs(n_per_class=10)
        priors = np.linspace(-1.0, 1.0, 20)
        forest, _ = realboost_fit(
            X, y, rounds=0, config=BoostConfig(prior_weight=2.5), priors=priors
        )
        np.testing.assert_array_equal(forest.score(X, priors), 2.5 * priors)

    def test_margin_clamp_is_counted(self):
        X = np.array([[0.0, 1.0], [1.0, 0.0]])
        y = np.array([1.0, -1.0])
        priors = np.array([60.0, -60.0])
        _, log = realboost_fit(X, y, rounds=0, priors=priors)
        assert log.clamp_events == 2

    def test_deterministic(self):
        X, y = separable_blobs(seed=3)
        a, _ = realboost_fit(X, y, rounds=8, config=BoostConfig(max_depth=2))
        b, _ = realboost_fit(X, y, rounds=8, config=BoostConfig(max_depth=2))
        assert a.to_dict() == b.to_dict()

    def test_validation(self):
        X, y = separable_blobs(n_per_class=4)
        with pytest.raises(TrainingError):
            realboost_fit(X, np.zeros(8), rounds=1)
        with pytest.raises(TrainingError):
            realboost_fit(np.empty((0, 2)), np.empty(0), rounds=1)
        with pytest.raises(ConfigError):
            realboost_fit(X, y, rounds=-1)
        with pytest.raises(TrainingError):
            realboost_fit(X, y[:-1], rounds=1)


class TestForest:
    def test_score_is_prior_plus_tree_sum(self):
        X, y = separable_blobs(seed=11)
        priors = np.tanh(X[:, 0])
        forest, _ = realboost_fit(
            X, y, rounds=6, config=BoostConfig(max_depth=2, prior_weight=1.7),
            priors=priors,
        )
        manual = 1.7 * priors.copy()
        for tree in forest.trees:
            manual = manual + tree.apply(X)
        np.testing.assert_array_equal(forest.score(X, priors), manual)

    def test_feature_count_enforced(self):
        X, y = separable_blobs(n_per_class=5)
        forest, _ = realboost_fit(X, y, rounds=2)
        with pytest.raises(DataError):
            forest.score(np.zeros((3, 5)))
        with pytest.raises(DataError):
            forest.score(X, priors=np.zeros(3))

    def test_dict_round_trip_preserves_scores_bitwise(self):
        X, y = separable_blobs(seed=17)
        forest, _ = realboost_fit(X, y, rounds=10, config=BoostConfig(max_depth=3))
        clone = Forest.from_dict(json.loads(json.dumps(forest.to_dict())))
        rng = np.random.default_rng(0)
        probe = rng.normal(size=(50, 2)).astype(np.float32)
        np.testing.assert_array_equal(forest.score(probe), clone.score(probe))
        assert clone.prior_weight == forest.prior_weight
        assert clone.n_features == forest.n_features


class TestSchedules:
    def test_full_schedule_constants(self):
        cfg = full_training_config()
        assert cfg.stage_tree_counts == (64, 128, 256, 512, 1024, 2048)
        assert cfg.initial_negatives == 30000
        assert cfg.hard_negatives_per_stage == 5000

    def test_basic_schedule_constants(self):
        cfg = basic_training_config()
        assert cfg.stage_tree_counts == (32, 64, 128, 256, 512)
        assert cfg.initial_negatives == 10000
        assert cfg.hard_negatives_per_stage == 1000

    def test_overrides(self):
        cfg = full_training_config(seed=9, max_depth=3)
        assert cfg.seed == 9
        assert cfg.max_depth == 3
        assert cfg.stage_tree_counts == (64, 128, 256, 512, 1024, 2048)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(stage_tree_counts=())
        with pytest.raises(ConfigError):
            TrainConfig(stage_tree_counts=(4, 0))
        with pytest.raises(ConfigError):
            TrainConfig(initial_negatives=0)
        with pytest.raises(ConfigError):
            TrainConfig(pos_iou=0.3, neg_iou=0.5)


def hard_negative_oracle(scores, keys, k, exclude):
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    picked = [i for i in ranked if keys[i] not in exclude]
    return picked[:k]


class TestSelectHardNegatives:
    def test_frozen_example(self):
        scores = np.array([5.0, 1.0, 5.0, 3.0])
        keys = ["a", "b", "c", "d"]
        assert select_hard_negatives(scores, keys, 2, {"a"}) == [2, 3]

    def test_zero_budget(self):
        assert select_hard_negatives(np.array([1.0]), ["a"], 0, set()) == []

    @given(seed=st.integers(0, 5000), k=st.integers(0, 12))
    @settings(max_examples=60)
    def test_matches_oracle(self, seed, k):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(0, 15))
        scores = rng.integers(0, 6, size=n).astype(np.float64)  # ties on purpose
        keys = [int(v) for v in rng.integers(0, 10, size=n)]
        exclude = set(int(v) for v in rng.integers(0, 10, size=3))
        assert select_hard_negatives(scores, keys, k, exclude) == \
            hard_negative_oracle(scores, keys, k, exclude)


class _StubSource:
    """In-memory bootstrap source with a controllable hard-negative pool."""

    def __init__(self, pool_size=20, seed=0):
        rng = np.random.default_rng(seed)
        self._pos = rng.normal(loc=2.0, scale=0.3, size=(6, 3))
        self._pool = rng.normal(loc=0.5, scale=0.5, size=(pool_size, 3))
        self._pool_priors = rng.uniform(0.2, 0.9, size=pool_size)
        self._pool_keys = [("pool", i) for i in range(pool_size)]
        self.bg_requests = []

    def positives(self):
        return self._pos, np.full(len(self._pos), 0.8)

    def background_negatives(self, count, seed):
        self.bg_requests.append((count, seed))
        rng = np.random.default_rng(seed)
        X = rng.normal(loc=-2.0, scale=0.3, size=(count, 3))
        return X, np.full(count, 0.1), [("bg", i) for i in range(count)]

    def negative_pool(self):
        return self._pool, self._pool_priors, self._pool_keys


class TestBootstrapTrain:
    CFG = dict(max_depth=2, max_bins=32, leaf_smoothing=0.01)

    def test_stage_history_follows_schedule(self):
        source = _StubSource(pool_size=20)
        cfg = TrainConfig(stage_tree_counts=(2, 3, 4), initial_negatives=5,
                          hard_negatives_per_stage=3, seed=42, **self.CFG)
        forest = bootstrap_train(source, cfg)
        assert len(forest.trees) == 4  # final stage only; earlier stages discarded
        assert [s.stage for s in forest.stage_history] == [0, 1, 2]
        assert [s.tree_count for s in forest.stage_history] == [2, 3, 4]
        assert [s.negatives for s in forest.stage_history] == [5, 8, 11]
        assert [s.hard_added for s in forest.stage_history] == [0, 3, 3]
        assert [s.hard_requested for s in forest.stage_history] == [0, 3, 3]
        assert source.bg_requests == [(5, 42)]

    def test_small_pool_comes_up_short(self):
        source = _StubSource(pool_size=4)
        cfg = TrainConfig(stage_tree_counts=(2, 2, 2), initial_negatives=5,
                          hard_negatives_per_stage=3, **self.CFG)
        forest = bootstrap_train(source, cfg)
        assert [s.hard_added for s in forest.stage_history] == [0, 3, 1]
        assert [s.negatives for s in forest.stage_history] == [5, 8, 9]

    def test_exhausted_pool_adds_nothing(self):
        source = _StubSource(pool_size=2)
        cfg = TrainConfig(stage_tree_counts=(2, 2, 2), initial_negatives=4,
                          hard_negatives_per_stage=2, **self.CFG)
        forest = bootstrap_train(source, cfg)
        assert [s.hard_added for s in forest.stage_history] == [0, 2, 0]

    def test_needs_positives(self):
        source = _StubSource()
        source._pos = np.empty((0, 3))
        cfg = TrainConfig(stage_tree_counts=(2,), initial_negatives=4, **self.CFG)
        with pytest.raises(TrainingError):
            bootstrap_train(source, cfg)
