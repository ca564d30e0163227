import math

import numpy as np
import pytest

from gazeforge import (
    LogRegModel,
    RfModel,
    encode_labels,
    load_model,
    logreg_loss_grad,
    predict_proba,
    save_model,
    train_classifier,
    train_logreg,
    train_rf,
)
from gazeforge.classifiers import TreeNode, _sigmoid

SMALL_GRID = {"n_trees": [25], "max_depth": [None], "min_leaf": [1]}


def finite_difference_grad(w, b, X, y, l2, eps=1e-6):
    grad_w = np.zeros_like(w)
    for j in range(len(w)):
        delta = np.zeros_like(w)
        delta[j] = eps
        lp, *_ = logreg_loss_grad(w + delta, b, X, y, l2)
        lm, *_ = logreg_loss_grad(w - delta, b, X, y, l2)
        grad_w[j] = (lp - lm) / (2 * eps)
    lp, *_ = logreg_loss_grad(w, b + eps, X, y, l2)
    lm, *_ = logreg_loss_grad(w, b - eps, X, y, l2)
    return grad_w, (lp - lm) / (2 * eps)


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        n, d = int(rng.integers(5, 40)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        w = rng.normal(size=d)
        b = float(rng.normal())
        l2 = float(rng.uniform(0.01, 2.0))
        _, gw, gb = logreg_loss_grad(w, b, X, y, l2)
        fw, fb = finite_difference_grad(w, b, X, y, l2)
        scale = max(1.0, float(np.max(np.abs(fw))), abs(fb))
        assert np.max(np.abs(gw - fw)) / scale <= 1e-4
        assert abs(gb - fb) / scale <= 1e-4


def test_converged_gradient_is_small(rng):
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] + 0.5 * rng.normal(size=60) > 0).astype(float)
    model = train_logreg(X, y, l2=1.0)
    Z = (X - model.mu) / model.sigma
    _, gw, gb = logreg_loss_grad(model.weights, model.bias, Z, y, 1.0)
    assert max(np.max(np.abs(gw)), abs(gb)) <= 1e-6


def test_separable_1d():
    X = np.array([[-1.0]] * 20 + [[1.0]] * 20)
    y = np.array([0.0] * 20 + [1.0] * 20)
    model = train_logreg(X, y, l2=1e-4)
    p = model.predict_proba(X)
    assert np.all((p >= 0.5) == (y == 1.0))
    # Decision boundary near 0: probability at the origin is 1/2 by symmetry.
    assert model.predict_proba(np.array([[0.0]]))[0] == pytest.approx(0.5, abs=1e-6)


def test_intercept_only_fit_returns_prior():
    X = np.zeros((10, 2))
    y = np.array([1.0] * 7 + [0.0] * 3)
    model = train_logreg(X, y, l2=1.0)
    np.testing.assert_allclose(model.predict_proba(X), 0.7, atol=1e-6)


def test_gaussian_classes_recover_bayes_direction():
    # Bayes boundary for equal spherical covariances is along the mean difference.
    mean_delta = np.array([2.0, 1.0])
    angles = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = np.vstack([
            rng.normal(size=(100, 2)),
            rng.normal(size=(100, 2)) + mean_delta,
        ])
        y = np.array([0.0] * 100 + [1.0] * 100)
        model = train_logreg(X, y, l2=1.0)
        w = model.weights / model.sigma  # back to raw feature space
        cos = w @ mean_delta / (np.linalg.norm(w) * np.linalg.norm(mean_delta))
        angles.append(math.degrees(math.acos(min(1.0, max(-1.0, cos)))))
    assert np.mean(angles) < 10.0


def test_logreg_affine_rescaling_invariance(rng):
    X = rng.normal(size=(50, 3))
    y = (X @ np.array([1.0, -2.0, 0.5]) > 0).astype(float)
    base = train_logreg(X, y, l2=1.0)
    scale = np.array([100.0, 0.01, 5.0])
    shift = np.array([-3.0, 7.0, 0.0])
    other = train_logreg(X * scale + shift, y, l2=1.0)
    probe = rng.normal(size=(20, 3))
    np.testing.assert_allclose(
        base.predict_proba(probe), other.predict_proba(probe * scale + shift), atol=1e-9
    )


def test_logreg_zero_model_is_half():
    model = LogRegModel(["a"], np.zeros(1), 0.0, np.zeros(1), np.ones(1))
    assert model.predict_proba(np.array([[123.4]]))[0] == 0.5


def test_single_class_and_nonfinite_rejected():
    with pytest.raises(ValueError, match="single class"):
        train_logreg(np.ones((5, 1)), np.ones(5))
    with pytest.raises(ValueError, match="finite"):
        train_logreg(np.array([[np.inf], [1.0]]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="single class"):
        train_rf(np.ones((5, 1)), np.ones(5), grid=SMALL_GRID)


def test_rf_degenerate_forest():
    leaf = TreeNode(fractions=np.array([0.25, 0.75]))
    model = RfModel(["a"], [leaf], {}, 0)
    np.testing.assert_allclose(model.predict_proba(np.array([[0.0], [99.0]])), 0.75)


def test_rf_xor():
    rng = np.random.default_rng(42)
    X = rng.uniform(-1, 1, size=(200, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    model = train_rf(X, y, grid={"n_trees": [50], "max_depth": [None], "min_leaf": [1]}, seed=3)
    acc = np.mean((model.predict_proba(X) >= 0.5) == (y == 1.0))
    assert acc >= 0.95


def test_rf_deterministic():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] > 0).astype(float)
    probe = rng.normal(size=(30, 3))
    a = train_rf(X, y, grid=SMALL_GRID, seed=11).predict_proba(probe)
    b = train_rf(X, y, grid=SMALL_GRID, seed=11).predict_proba(probe)
    np.testing.assert_array_equal(a, b)


def test_rf_tree_removal_bound(rng):
    X = rng.normal(size=(80, 3))
    y = (X[:, 0] + rng.normal(size=80) > 0).astype(float)
    model = train_rf(X, y, grid={"n_trees": [20], "max_depth": [3], "min_leaf": [1]}, seed=5)
    probe = rng.normal(size=(25, 3))
    full = model.predict_proba(probe)
    T = len(model.trees)
    for drop in range(0, T, 5):
        reduced = RfModel(model.feature_names, model.trees[:drop] + model.trees[drop + 1 :],
                          model.hyperparams, model.rng_seed)
        assert np.max(np.abs(reduced.predict_proba(probe) - full)) <= 1.0 / T + 1e-12


def test_rf_grid_search_improves_over_bad_point(rng):
    # Grid search must pick a point at least as good as any single candidate.
    X = rng.normal(size=(100, 4))
    y = ((X[:, 0] + X[:, 1] ** 2) > 0.5).astype(float)
    grid = {"n_trees": [10, 40], "max_depth": [1, None], "min_leaf": [1]}
    model = train_rf(X, y, grid=grid, seed=0)
    assert model.hyperparams["n_trees"] in (10, 40)
    assert set(model.hyperparams) == {"n_trees", "max_depth", "min_leaf"}


def test_shuffled_labels_give_chance_accuracy():
    # Null-label training yields held-out accuracy near 50 % for both models.
    accs = {"logreg": [], "rf": []}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(120, 3))
        y = rng.permutation(np.array([0.0, 1.0] * 60))
        X_train, X_test = X[:80], X[80:]
        y_train, y_test = y[:80], y[80:]
        logreg = train_logreg(X_train, y_train, l2=1.0)
        accs["logreg"].append(np.mean((logreg.predict_proba(X_test) >= 0.5) == (y_test == 1.0)))
        rf = train_rf(X_train, y_train, grid={"n_trees": [15], "max_depth": [3], "min_leaf": [2]}, seed=seed)
        accs["rf"].append(np.mean((rf.predict_proba(X_test) >= 0.5) == (y_test == 1.0)))
    assert abs(np.mean(accs["logreg"]) - 0.5) <= 0.05
    assert abs(np.mean(accs["rf"]) - 0.5) <= 0.05


def test_predict_proba_schema_checks(rng):
    X = rng.normal(size=(30, 2))
    y = (X[:, 0] > 0).astype(float)
    model = train_logreg(X, y, feature_names=["alpha", "beta"])
    p = predict_proba(model, {"alpha": 0.1, "beta": -0.2})
    assert 0.0 <= p <= 1.0
    with pytest.raises(ValueError, match="schema"):
        predict_proba(model, {"beta": -0.2, "alpha": 0.1})
    with pytest.raises(ValueError, match="schema"):
        model.predict_proba(np.zeros((1, 3)))


def test_probabilities_in_unit_interval_and_monotone(rng):
    X = rng.normal(size=(60, 2))
    y = (X[:, 0] - X[:, 1] > 0).astype(float)
    model = train_logreg(X, y, l2=0.5)
    probe = rng.normal(size=(40, 2))
    p = model.predict_proba(probe)
    assert np.all((p >= 0.0) & (p <= 1.0))
    # p is monotone in each feature along its weight sign
    for j, w in enumerate(model.weights):
        bumped = probe.copy()
        bumped[:, j] += 1.0
        diff = model.predict_proba(bumped) - p
        assert np.all(np.sign(diff[np.abs(diff) > 1e-12]) == np.sign(w))


def test_model_save_load_roundtrip(tmp_path, rng):
    X = rng.normal(size=(50, 3))
    y = (X[:, 1] > 0).astype(float)
    probe = rng.normal(size=(20, 3))
    for kind in ("logreg", "rf"):
        model = train_classifier(kind, X, y, seed=2, rf_grid=SMALL_GRID, feature_names=["a", "b", "c"])
        path = tmp_path / f"{kind}.json"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_allclose(loaded.predict_proba(probe), model.predict_proba(probe), atol=1e-15)
    with pytest.raises(ValueError, match="format"):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "other", "version": 9}')
        load_model(bad)


def test_train_classifier_dispatch():
    with pytest.raises(ValueError, match="unknown classifier"):
        train_classifier("svm", np.zeros((4, 1)), np.array([0.0, 1.0, 0.0, 1.0]))


def test_sigmoid_stability():
    z = np.array([-800.0, 0.0, 800.0])
    p = _sigmoid(z)
    assert p[0] == 0.0 and p[1] == 0.5 and p[2] == 1.0


def test_encode_labels():
    np.testing.assert_array_equal(encode_labels(["F", "M", "F"]), [1.0, 0.0, 1.0])
