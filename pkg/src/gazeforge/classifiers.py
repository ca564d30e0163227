"""The two classifier families: logistic regression and random forest.

Both models consume a numeric matrix with binary labels encoded as 1 for the
positive class (female) and 0 otherwise, and expose calibrated-ish
probabilities P(female). Logistic regression standardizes its inputs and is
fit by damped Newton iterations on the L2-penalized log-likelihood; the
random forest uses bootstrapped Gini trees with per-split feature
subsampling and a grid search scored by internal stratified k-fold accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from typing import Mapping, Sequence

import numpy as np

POSITIVE_LABEL = "F"  # probability outputs are P(female) throughout

DEFAULT_RF_GRID: dict[str, list] = {
    "n_trees": [100, 300],
    "max_depth": [3, 5, None],
    "min_leaf": [1, 5],
}

MODEL_FORMAT = "gazeforge-model"
MODEL_VERSION = 1


def encode_labels(labels: Sequence[str]) -> np.ndarray:
    """Map gender codes to the numeric target, 1 = positive class."""
    return np.asarray([1.0 if lab == POSITIVE_LABEL else 0.0 for lab in labels])


def _validate_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be encoded as 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    return X, y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss_grad(
    weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, float]:
    """Penalized negative log-likelihood and its analytic gradient.

    The L2 penalty 0.5*l2*||w||^2 applies to the weights only, never the
    bias. Exposed separately so the gradient can be checked against finite
    differences.
    """
    z = X @ weights + bias
    # log(1 + exp(z)) - y*z, computed stably
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(weights @ weights)
    p = _sigmoid(z)
    grad_w = X.T @ (p - y) + l2 * weights
    grad_b = float(np.sum(p - y))
    return loss, grad_w, grad_b


@dataclass
class LogRegModel:
    """Standardizing logistic regression with an explicit coefficient vector."""

    feature_names: list[str]
    weights: np.ndarray
    bias: float
    mu: np.ndarray
    sigma: np.ndarray
    l2: float = 1.0

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.weights):
            raise ValueError("feature schema mismatch: wrong feature count")
        z = ((X - self.mu) / self.sigma) @ self.weights + self.bias
        return _sigmoid(z)


def train_logreg(
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 1.0,
    feature_names: Sequence[str] | None = None,
    grad_tol: float = 1e-10,
    max_iter: int = 500,
) -> LogRegModel:
    """Fit L2-penalized logistic regression by damped Newton iterations.

    Features are standardized on the training data (zero-variance features
    get unit scale). Iterations stop when the max-norm of the gradient falls
    below ``grad_tol`` or after ``max_iter`` steps; the default tolerance is
    far stricter than the 1e-6 contract so downstream probability
    comparisons are stable.
    """
    X, y = _validate_xy(X, y)
    n, d = X.shape
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma = np.where(sigma > 0, sigma, 1.0)
    Z = (X - mu) / sigma

    w = np.zeros(d)
    b = 0.0
    loss, grad_w, grad_b = logreg_loss_grad(w, b, Z, y, l2)
    for _ in range(max_iter):
        if max(np.max(np.abs(grad_w), initial=0.0), abs(grad_b)) <= grad_tol:
            break
        p = _sigmoid(Z @ w + b)
        r = np.maximum(p * (1.0 - p), 1e-12)
        H = np.empty((d + 1, d + 1))
        H[:d, :d] = Z.T @ (r[:, None] * Z) + l2 * np.eye(d)
        H[:d, d] = H[d, :d] = Z.T @ r
        H[d, d] = r.sum()
        g = np.concatenate([grad_w, [grad_b]])
        step = np.linalg.solve(H, g)
        # Backtrack if the full Newton step overshoots.
        scale = 1.0
        for _ in range(40):
            w_new = w - scale * step[:d]
            b_new = b - scale * step[d]
            loss_new, grad_w_new, grad_b_new = logreg_loss_grad(w_new, b_new, Z, y, l2)
            if loss_new <= loss:
                break
            scale *= 0.5
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, grad_w_new, grad_b_new

    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(d)]
    return LogRegModel(names, w, float(b), mu, sigma, l2=l2)


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    fractions: np.ndarray | None = None  # leaf: (P(class 0), P(class 1))

    @property
    def is_leaf(self) -> bool:
        return self.fractions is not None


def _best_split(
    X: np.ndarray, y: np.ndarray, feat_indices: np.ndarray, min_leaf: int
) -> tuple[int, float, np.ndarray] | None:
    """Lowest-Gini (feature, threshold, left mask) over candidate features.

    Thresholds are midpoints between consecutive distinct sorted values;
    candidates leaving fewer than ``min_leaf`` rows on a side are skipped.
    """
    n = len(y)
    total1 = y.sum()
    best = None
    best_gini = np.inf
    for f in feat_indices:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        pos = np.flatnonzero(xs[1:] != xs[:-1]) + 1
        pos = pos[(pos >= min_leaf) & (pos <= n - min_leaf)]
        if pos.size == 0:
            continue
        cum1 = np.cumsum(ys)
        left_n = pos.astype(float)
        left1 = cum1[pos - 1]
        left0 = left_n - left1
        right_n = n - left_n
        right1 = total1 - left1
        right0 = right_n - right1
        gini = (
            left_n * (1.0 - (left0**2 + left1**2) / left_n**2)
            + right_n * (1.0 - (right0**2 + right1**2) / right_n**2)
        ) / n
        j = int(np.argmin(gini))
        if gini[j] < best_gini - 1e-15:
            split_at = pos[j]
            threshold = 0.5 * (xs[split_at - 1] + xs[split_at])
            best_gini = float(gini[j])
            best = (int(f), float(threshold), X[:, f] <= threshold)
    return best


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_depth: int | None,
    min_leaf: int,
    n_sub_features: int,
    depth: int = 0,
) -> TreeNode:
    n = len(y)
    n1 = y.sum()
    if (
        n1 == 0
        or n1 == n
        or n < 2 * min_leaf
        or (max_depth is not None and depth >= max_depth)
    ):
        return TreeNode(fractions=np.array([(n - n1) / n, n1 / n]))
    feat_indices = np.sort(rng.choice(X.shape[1], size=n_sub_features, replace=False))
    split = _best_split(X, y, feat_indices, min_leaf)
    if split is None:
        return TreeNode(fractions=np.array([(n - n1) / n, n1 / n]))
    f, threshold, left_mask = split
    left = _grow_tree(X[left_mask], y[left_mask], rng, max_depth, min_leaf, n_sub_features, depth + 1)
    right = _grow_tree(X[~left_mask], y[~left_mask], rng, max_depth, min_leaf, n_sub_features, depth + 1)
    return TreeNode(feature=f, threshold=threshold, left=left, right=right)


def _tree_proba(node: TreeNode, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return float(node.fractions[1])


@dataclass
class RfModel:
    """Bagged Gini forest; probability is the mean of leaf class fractions."""

    feature_names: list[str]
    trees: list[TreeNode]
    hyperparams: dict
    rng_seed: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.feature_names):
            raise ValueError("feature schema mismatch: wrong feature count")
        out = np.zeros(len(X))
        for i, row in enumerate(X):
            out[i] = np.mean([_tree_proba(t, row) for t in self.trees])
        return out


def _fit_forest(
    X: np.ndarray, y: np.ndarray, n_trees: int, max_depth: int | None, min_leaf: int, seed_seq
) -> list[TreeNode]:
    n, d = X.shape
    n_sub = max(1, int(round(math.sqrt(d))))
    trees = []
    for child in seed_seq.spawn(n_trees):
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[idx], y[idx], rng, max_depth, min_leaf, n_sub))
    return trees


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Index folds with both classes represented in every fold."""
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        for i, j in enumerate(idx):
            folds[i % k].append(int(j))
    return [np.sort(np.array(f)) for f in folds]


def train_rf(
    X: np.ndarray,
    y: np.ndarray,
    grid: Mapping[str, Sequence] | None = None,
    seed: int = 0,
    feature_names: Sequence[str] | None = None,
    cv_folds: int = 5,
) -> RfModel:
    """Grid-searched random forest, deterministic under a fixed seed.

    Every grid point is scored by stratified k-fold accuracy on the training
    data only; the best point (ties to the earlier grid point) is refit on
    all rows.
    """
    X, y = _validate_xy(X, y)
    grid = dict(grid) if grid is not None else DEFAULT_RF_GRID
    for key, candidates in grid.items():
        if key not in DEFAULT_RF_GRID:
            raise ValueError(f"unknown hyperparameter {key!r}")
        if not candidates:
            raise ValueError(f"empty candidate list for {key!r}")
    points = [
        dict(zip(grid.keys(), combo)) for combo in product(*grid.values())
    ]

    if len(points) > 1:
        k = min(cv_folds, int(np.sum(y == 0)), int(np.sum(y == 1)))
        if k < 2:
            raise ValueError("too few samples per class for internal cross-validation")
        fold_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
        folds = _stratified_folds(y, k, fold_rng)
        best_point = None
        best_score = -1.0
        for p_idx, point in enumerate(points):
            correct = 0
            for f_idx, test_idx in enumerate(folds):
                train_mask = np.ones(len(y), dtype=bool)
                train_mask[test_idx] = False
                trees = _fit_forest(
                    X[train_mask],
                    y[train_mask],
                    point["n_trees"],
                    point["max_depth"],
                    point["min_leaf"],
                    np.random.SeedSequence([seed, p_idx, f_idx]),
                )
                probs = np.array([np.mean([_tree_proba(t, row) for t in trees]) for row in X[test_idx]])
                correct += int(np.sum((probs >= 0.5) == (y[test_idx] == 1.0)))
            score = correct / len(y)
            if score > best_score:
                best_score = score
                best_point = point
    else:
        best_point = points[0]

    trees = _fit_forest(
        X, y, best_point["n_trees"], best_point["max_depth"], best_point["min_leaf"],
        np.random.SeedSequence([seed, 0x7EE5]),
    )
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    return RfModel(names, trees, dict(best_point), seed)


def train_classifier(
    kind: str,
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    l2: float = 1.0,
    rf_grid: Mapping[str, Sequence] | None = None,
    feature_names: Sequence[str] | None = None,
):
    """Dispatch to one of the two classifier families by name."""
    if kind == "logreg":
        return train_logreg(X, y, l2=l2, feature_names=feature_names)
    if kind == "rf":
        return train_rf(X, y, grid=rf_grid, seed=seed, feature_names=feature_names)
    raise ValueError(f"unknown classifier kind {kind!r} (expected 'logreg' or 'rf')")


def predict_proba(model, x) -> np.ndarray:
    """P(female) for one feature vector, a matrix, or a named mapping."""
    if isinstance(x, Mapping):
        if list(x.keys()) != list(model.feature_names):
            raise ValueError("feature schema mismatch: names or order differ from training")
        x = np.array([list(x.values())], dtype=float)
        return model.predict_proba(x)[0]
    return model.predict_proba(x)


def _tree_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"leaf": list(map(float, node.fractions))}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_to_dict(node.left),
        "right": _tree_to_dict(node.right),
    }


def _tree_from_dict(d: dict) -> TreeNode:
    if "leaf" in d:
        return TreeNode(fractions=np.asarray(d["leaf"], dtype=float))
    return TreeNode(
        feature=int(d["feature"]),
        threshold=float(d["threshold"]),
        left=_tree_from_dict(d["left"]),
        right=_tree_from_dict(d["right"]),
    )


def save_model(model, path) -> None:
    """Serialize a trained model to the versioned JSON schema."""
    if isinstance(model, LogRegModel):
        payload = {
            "kind": "logreg",
            "feature_names": model.feature_names,
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "mu": model.mu.tolist(),
            "sigma": model.sigma.tolist(),
            "l2": model.l2,
        }
    elif isinstance(model, RfModel):
        payload = {
            "kind": "random_forest",
            "feature_names": model.feature_names,
            "hyperparams": model.hyperparams,
            "rng_seed": model.rng_seed,
            "trees": [_tree_to_dict(t) for t in model.trees],
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    payload = {"format": MODEL_FORMAT, "version": MODEL_VERSION, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
        raise ValueError("unrecognized model file format/version")
    if payload["kind"] == "logreg":
        return LogRegModel(
            payload["feature_names"],
            np.asarray(payload["weights"], dtype=float),
            float(payload["bias"]),
            np.asarray(payload["mu"], dtype=float),
            np.asarray(payload["sigma"], dtype=float),
            l2=float(payload["l2"]),
        )
    if payload["kind"] == "random_forest":
        return RfModel(
            payload["feature_names"],
            [_tree_from_dict(t) for t in payload["trees"]],
            payload["hyperparams"],
            int(payload["rng_seed"]),
        )
    raise ValueError(f"unknown model kind {payload['kind']!r}")
