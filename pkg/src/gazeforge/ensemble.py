"""Fusion of the fixation and saccade classifiers.

The two channel probabilities are combined convexly, p = w_fix*p_fix +
w_sac*p_sac with w_fix + w_sac = 1, and the weight pair is found with the
Nelder-Mead downhill simplex method, minimizing the negative cross-validated
accuracy of the fused classifier on training data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classifiers import _stratified_folds, encode_labels, train_classifier
from .features import FeatureTable


@dataclass(frozen=True)
class EnsembleWeights:
    w_fix: float
    w_sac: float

    def __post_init__(self):
        if not (0.0 <= self.w_fix <= 1.0 and 0.0 <= self.w_sac <= 1.0):
            raise ValueError("weights must lie in [0, 1]")
        if abs(self.w_fix + self.w_sac - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @classmethod
    def from_fix(cls, w_fix: float) -> "EnsembleWeights":
        return cls(w_fix, 1.0 - w_fix)


EQUAL_WEIGHTS = EnsembleWeights(0.5, 0.5)


def fuse(p_fix, p_sac, weights: EnsembleWeights):
    """Convex combination of the two channel probabilities."""
    return weights.w_fix * np.asarray(p_fix) + weights.w_sac * np.asarray(p_sac)


@dataclass(frozen=True)
class NmConfig:
    """Simplex coefficients (reflection/expansion/contraction/shrink) and stops.

    Iteration ends when the simplex diameter drops to ``x_tol`` or the
    objective spread drops to ``f_tol``, whichever happens first. A negative
    ``f_tol`` disables the spread test; useful for objectives that are exactly
    symmetric around the minimum, where the spread can hit zero while the
    simplex still straddles it.
    """

    alpha: float = 1.0
    gamma: float = 2.0
    rho: float = 0.5
    sigma: float = 0.5
    x_tol: float = 1e-4
    f_tol: float = 1e-6
    max_iters: int = 200

    def __post_init__(self):
        if not (self.alpha > 0 and self.gamma > 1 and 0 < self.rho < 1 and 0 < self.sigma < 1):
            raise ValueError("require alpha > 0, gamma > 1, 0 < rho < 1, 0 < sigma < 1")


@dataclass
class NmResult:
    x: np.ndarray
    fx: float
    n_iters: int
    converged: bool
    #: Best objective seen after each iteration; non-increasing.
    best_history: list[float] = field(default_factory=list)


def _initial_simplex(x0: np.ndarray, step) -> np.ndarray:
    # Matlab-style perturbations unless an explicit step is given.
    d = len(x0)
    simplex = np.tile(x0, (d + 1, 1))
    for i in range(d):
        if step is not None:
            simplex[i + 1, i] += np.broadcast_to(step, (d,))[i]
        elif x0[i] != 0.0:
            simplex[i + 1, i] *= 1.05
        else:
            simplex[i + 1, i] = 0.00025
    return simplex


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    config: NmConfig = NmConfig(),
    initial_step=None,
) -> NmResult:
    """Minimize ``f`` with the full Nelder-Mead simplex algorithm.

    Runs order / reflect / expand / contract (outside and inside) / shrink
    until the simplex diameter falls below ``x_tol``, the objective spread
    falls below ``f_tol``, or ``max_iters`` is reached. Ties in the simplex
    ordering break toward the earlier vertex, which keeps the search
    deterministic on flat objective regions. Returns the best vertex seen.
    """
    x0 = np.asarray(x0, dtype=float)
    xs = _initial_simplex(x0, initial_step)
    fs = np.array([float(f(x)) for x in xs])
    if not np.all(np.isfinite(fs)):
        raise ValueError("objective not finite at the initial simplex")

    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        order = np.argsort(fs, kind="stable")
        xs, fs = xs[order], fs[order]
        history.append(float(fs[0]))
        diameter = np.max(np.abs(xs[1:] - xs[0])) if len(xs) > 1 else 0.0
        if diameter <= config.x_tol or fs[-1] - fs[0] <= config.f_tol:
            converged = True
            break

        centroid = xs[:-1].mean(axis=0)
        xr = centroid + config.alpha * (centroid - xs[-1])
        fr = float(f(xr))
        if fr < fs[0]:
            xe = centroid + config.gamma * (xr - centroid)
            fe = float(f(xe))
            xs[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[-2]:
            xs[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:  # outside contraction
                xc = centroid + config.rho * (xr - centroid)
                fc = float(f(xc))
                accept = fc <= fr
            else:  # inside contraction
                xc = centroid + config.rho * (xs[-1] - centroid)
                fc = float(f(xc))
                accept = fc < fs[-1]
            if accept:
                xs[-1], fs[-1] = xc, fc
            else:
                xs[1:] = xs[0] + config.sigma * (xs[1:] - xs[0])
                fs[1:] = [float(f(x)) for x in xs[1:]]

    order = np.argsort(fs, kind="stable")
    xs, fs = xs[order], fs[order]
    history.append(float(fs[0]))
    return NmResult(x=xs[0].copy(), fx=float(fs[0]), n_iters=it, converged=converged, best_history=history)


@dataclass
class WeightOptimization:
    weights: EnsembleWeights
    #: Negative fused accuracy at the returned weights (the minimized value).
    objective: float
    #: Same objective evaluated at equal weights, the search start point.
    objective_at_equal: float


def fused_accuracy(p_fix: np.ndarray, p_sac: np.ndarray, y: np.ndarray, weights: EnsembleWeights) -> float:
    fused = fuse(p_fix, p_sac, weights)
    return float(np.mean((fused >= 0.5) == (y == 1.0)))


def optimize_weights_for_probs(
    p_fix: np.ndarray,
    p_sac: np.ndarray,
    y: np.ndarray,
    config: NmConfig = NmConfig(),
) -> WeightOptimization:
    """Nelder-Mead over the scalar weight parameter, given fixed probabilities.

    The fixation weight is clamp(theta, 0, 1) of a free scalar theta started
    at 0.5 with a second simplex vertex at 1.0, so both halves of the range
    are reachable by the first reflection.
    """

    def objective(theta: np.ndarray) -> float:
        w = EnsembleWeights.from_fix(float(np.clip(theta[0], 0.0, 1.0)))
        return -fused_accuracy(p_fix, p_sac, y, w)

    result = nelder_mead(objective, [0.5], config, initial_step=[0.5])
    w_fix = float(np.clip(result.x[0], 0.0, 1.0))
    return WeightOptimization(
        EnsembleWeights.from_fix(w_fix),
        result.fx,
        -fused_accuracy(p_fix, p_sac, y, EQUAL_WEIGHTS),
    )


def optimize_weights(
    table_fix: FeatureTable,
    table_sac: FeatureTable,
    classifier_kind: str = "logreg",
    seed: int = 0,
    config: NmConfig = NmConfig(),
    cv_folds: int = 5,
    l2: float = 1.0,
    rf_grid=None,
) -> WeightOptimization:
    """Tune the fusion weights on training data only.

    Channel classifiers are fit per stratified fold and their out-of-fold
    probabilities assembled once; the simplex search then minimizes the
    negative fused accuracy over those held-out predictions, so no test
    participant ever influences the weights.
    """
    if table_fix.ids != table_sac.ids:
        raise ValueError("channel tables must cover the same participants")
    y = encode_labels(table_fix.labels)
    if not np.array_equal(y, encode_labels(table_sac.labels)):
        raise ValueError("channel tables disagree on labels")

    k = min(cv_folds, int(np.sum(y == 0)), int(np.sum(y == 1)))
    if k < 2:
        raise ValueError("too few participants per class to cross-validate weights")
    fold_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCF01d5]))
    folds = _stratified_folds(y, k, fold_rng)

    p_fix = np.zeros(len(y))
    p_sac = np.zeros(len(y))
    for f_idx, test_idx in enumerate(folds):
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[test_idx] = False
        for channel_idx, (table, out) in enumerate(((table_fix, p_fix), (table_sac, p_sac))):
            model = train_classifier(
                classifier_kind,
                table.values[train_mask],
                y[train_mask],
                seed=int(np.random.SeedSequence([seed, f_idx, channel_idx]).generate_state(1)[0]),
                l2=l2,
                rf_grid=rf_grid,
                feature_names=table.feature_names,
            )
            out[test_idx] = model.predict_proba(table.values[test_idx])
    return optimize_weights_for_probs(p_fix, p_sac, y, config)
