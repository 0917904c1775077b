import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from rppg_depression.errors import (
    EmptyTrainingSet,
    KeyMismatch,
    NonFiniteInput,
    RegistryMismatch,
    ShapeMismatch,
    VideoSetMismatch,
)
from rppg_depression.persistence import model_text
from rppg_depression.pipeline import WindowedFeatures
from rppg_depression.regression.evaluation import evaluate, fuse_post, fuse_pre
from rppg_depression.regression.forest import ForestConfig, bootstrap_counts, fit_tree, train_rf, unpack_trees
from rppg_depression.regression.mlp import MlpConfig, train_mlp
from rppg_depression.regression.model import predict

SMALL = ForestConfig(n_estimators=20, max_depth=15, seed=3)


def mixed_data(seed, n=120, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    X[:, 1] = np.round(X[:, 1])  # ties
    y = 3 * X[:, 0] - X[:, 1] ** 2 + rng.normal(size=n)
    return X, y


class TestForest:
    def test_constant_target(self):
        X, _ = mixed_data(0)
        model = train_rf(X, np.full(len(X), 12.0), SMALL)
        assert np.all(predict(model, X) == 12.0)

    def test_identity_overfit(self):
        x = np.linspace(0, 50, 200)[:, None]
        model = train_rf(x, x[:, 0], ForestConfig(n_estimators=30, seed=1))
        assert np.mean(np.abs(predict(model, x) - x[:, 0])) < 0.5

    def test_deterministic_and_thread_independent(self):
        X, y = mixed_data(1)
        a = model_text(train_rf(X, y, SMALL, threads=1))
        b = model_text(train_rf(X, y, SMALL, threads=1))
        c = model_text(train_rf(X, y, SMALL, threads=4))
        assert a == b == c

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    @example(seed=63)
    def test_predictions_within_target_range(self, seed):
        X, y = mixed_data(seed, n=60)
        model = train_rf(X, y, ForestConfig(n_estimators=5, seed=seed))
        probe = np.random.default_rng(seed + 1).normal(scale=10, size=(50, X.shape[1]))
        out = predict(model, probe)
        assert np.all(out >= y.min()) and np.all(out <= y.max())

    def test_overfit_rows_recover_targets(self):
        X, y = mixed_data(2)
        model = train_rf(X, y, ForestConfig(n_estimators=50, seed=0, bootstrap=False))
        assert np.allclose(predict(model, X), y)

    def test_row_permutation_gives_identical_tree(self):
        X, y = mixed_data(4)
        counts = bootstrap_counts(len(y), 9, 0)
        perm = np.random.default_rng(5).permutation(len(y))
        a = fit_tree(X, y, counts, SMALL)
        b = fit_tree(X[perm], y[perm], counts[perm], SMALL)
        for name in ("feature", "threshold", "left", "right", "value"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    @pytest.mark.parametrize("depth", [1, 2, 3, 4])
    def test_matches_reference_cart(self, depth):
        tree_mod = pytest.importorskip("sklearn.tree")
        X, y = mixed_data(6, n=150)
        ours = fit_tree(X, y, np.ones(len(y), dtype=np.int64), ForestConfig(max_depth=depth))
        ref = tree_mod.DecisionTreeRegressor(max_depth=depth, random_state=0).fit(X, y)
        assert np.allclose(ours.predict(X), ref.predict(X), atol=1e-9)

    def test_pack_round_trip(self):
        X, y = mixed_data(7)
        model = train_rf(X, y, SMALL)
        trees = unpack_trees(model.params)
        assert len(trees) == 20
        manual = np.mean([t.predict(X) for t in trees], axis=0)
        assert np.allclose(manual, predict(model, X), atol=1e-12)

    def test_bad_training_data(self):
        with pytest.raises(EmptyTrainingSet):
            train_rf(np.ones((1, 3)), [1.0], SMALL)
        with pytest.raises(NonFiniteInput):
            train_rf([[1.0], [np.nan]], [1.0, 2.0], SMALL)
        with pytest.raises(ShapeMismatch):
            train_rf(np.ones((3, 2)), [1.0, 2.0], SMALL)


FAST_MLP = MlpConfig(hidden_sizes=(32, 16, 8), max_epochs=300, seed=0)


class TestMlp:
    def test_linear_convergence(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-3, 3, size=(600, 1))
        y = 2 * x[:, 0] + 1
        model = train_mlp(x[:500], y[:500], MlpConfig())
        assert np.mean(np.abs(predict(model, x[500:]) - y[500:])) < 0.1

    def test_constant_target(self):
        X, _ = mixed_data(0)
        model = train_mlp(X, np.full(len(X), 9.0), MlpConfig())
        assert np.allclose(predict(model, X), 9.0, atol=1e-3)

    def test_deterministic(self):
        X, y = mixed_data(1)
        a = predict(train_mlp(X, y, FAST_MLP), X)
        b = predict(train_mlp(X, y, FAST_MLP), X)
        assert np.array_equal(a, b)

    def test_column_scale_invariance(self):
        X, y = mixed_data(2)
        cfg = MlpConfig(hidden_sizes=(16, 8, 4), max_epochs=40, seed=1)
        scaled = X.copy()
        scaled[:, 0] *= 1000.0
        scaled[:, 3] *= 0.01
        a = predict(train_mlp(X, y, cfg), X)
        b = predict(train_mlp(scaled, y, cfg), scaled)
        assert np.allclose(a, b, atol=1e-6)

    def test_dev_early_stopping_recorded(self):
        X, y = mixed_data(3)
        model = train_mlp(X[:80], y[:80], MlpConfig(hidden_sizes=(8, 8, 8), max_epochs=30),
                           X_val=X[80:], y_val=y[80:])
        assert model.meta["early_stopping_on_dev"]
        assert len(model.meta["dev_loss_trace"]) == model.meta["epochs"]


class TestPredictGuards:
    def test_shape_mismatch(self):
        X, y = mixed_data(0)
        model = train_rf(X, y, ForestConfig(n_estimators=2))
        with pytest.raises(ShapeMismatch):
            predict(model, X[:, :3])

    def test_registry_mismatch(self):
        X, y = mixed_data(0)
        model = train_rf(X, y, ForestConfig(n_estimators=2), registry_hash="abc")
        assert predict(model, X, registry_hash="abc").shape == (len(X),)
        with pytest.raises(RegistryMismatch):
            predict(model, X, registry_hash="def")


class TestEvaluate:
    def test_identical(self):
        r = evaluate({"a": 1, "b": 2, "c": 3}, {"a": 1, "b": 2, "c": 3})
        assert r.mae == 0 and r.rmse == 0

    def test_hand_values(self):
        r = evaluate({"a": 0, "b": 0}, {"a": 3, "b": 4})
        assert r.mae == pytest.approx(3.5, abs=1e-12)
        assert r.rmse == pytest.approx(math.sqrt(12.5), abs=1e-9)
        assert [row[0] for row in r.per_video] == ["a", "b"]

    def test_disjoint_ids(self):
        with pytest.raises(VideoSetMismatch):
            evaluate({"a": 1}, {"b": 1})

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 63), st.floats(0, 63)), min_size=1, max_size=30))
    def test_rmse_at_least_mae(self, pairs):
        preds = {f"v{i}": p for i, (p, _) in enumerate(pairs)}
        truth = {f"v{i}": t for i, (_, t) in enumerate(pairs)}
        r = evaluate(preds, truth)
        assert r.rmse >= r.mae - 1e-12


class TestFusion:
    def test_post_mean(self):
        assert fuse_post([{"v": 6.0}, {"v": 8.0}]) == {"v": 7.0}
        assert fuse_post([{"v": 3.0}, {"v": 6.0}, {"v": 9.0}]) == {"v": 6.0}
        assert fuse_post([{"v": 4.5, "w": 1.0}]) == {"v": 4.5, "w": 1.0}

    def test_post_mismatch(self):
        with pytest.raises(VideoSetMismatch):
            fuse_post([{"v": 1.0}, {"w": 1.0}])

    @staticmethod
    def block(n_cols, n_rows=5, prefix="c"):
        return WindowedFeatures("v", tuple(f"{prefix}{i}" for i in range(n_cols)), "h", "1",
                                np.arange(n_rows), np.arange(n_rows) / 3.0, np.ones(n_rows, bool),
                                np.ones((n_rows, n_cols)))

    def test_pre_additive(self):
        out = fuse_pre([("rppg", self.block(71)), ("ext", self.block(168))])
        assert len(out.columns) == 239 and out.values.shape == (5, 239)
        assert out.columns[0] == "rppg:c0" and out.columns[-1] == "ext:c167"

    def test_pre_single_block(self):
        b = self.block(4)
        out = fuse_pre([("x", b)])
        assert out.columns == tuple("x:" + c for c in b.columns)
        assert np.array_equal(out.values, b.values)

    def test_pre_missing_rows(self):
        with pytest.raises(KeyMismatch):
            fuse_pre([("a", self.block(3)), ("b", self.block(3, n_rows=4))])
