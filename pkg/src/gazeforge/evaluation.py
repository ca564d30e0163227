"""End-to-end experiment harness.

One experiment repeats class-balanced random 80:20 splits of the cohort:
per run, features are ranked on the training split, the top-k features per
channel feed a fixation classifier and a saccade classifier, their fused
accuracy is scored on the held-out participants, and mean/SD/SEM across
runs are reported. Feature-count sweeps, the 45-participant comparison
protocol, SD-versus-cohort-size curves and descriptive cohort statistics
reuse the same per-run machinery.

Given identical cohort, configuration and seed, every report is
bit-identical; per-run seeds are derived from (seed, run_index), so runs are
independent and may execute in parallel.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .classifiers import DEFAULT_RF_GRID, encode_labels, train_classifier
from .ensemble import (
    EQUAL_WEIGHTS,
    EnsembleWeights,
    NmConfig,
    fuse,
    optimize_weights,
    optimize_weights_for_probs,
)
from .features import (
    EmptyChannelError,
    FIXATION_FEATURES,
    SACCADE_FEATURES,
    FeatureTable,
    SpatialGrid,
    anova_rank,
    extract_channel_features,
    extract_sota_features,
    segment_displacement_deg,
    select_top_k,
)
from .ingest import FEMALE, GOF_GEOMETRY, MALE, GazeTrajectory, ScreenGeometry
from .segmentation import (
    DEFAULT_MFD_MS,
    DEFAULT_VT_GRID,
    FIXATION,
    SACCADE,
    IvtParams,
    ivt_segment,
    segments_of_kind,
    select_vt,
)
from .signal import SmoothingConfig, kinematics, smooth_trajectory

logger = logging.getLogger(__name__)

WEIGHT_MODES = ("equal", "optimized", "manual")
RANK_MODES = ("train", "all")
TUNE_MODES = ("train", "test-leaky")
CLASSIFIER_KINDS = ("logreg", "rf")
STAT_TESTS = ("mannwhitney", "ttest")


def sem(values: Sequence[float]) -> tuple[float, float, float]:
    """Mean, sample SD (n-1 denominator) and standard error of the mean."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        raise ValueError("sem needs at least 2 values")
    sd = float(np.std(values, ddof=1))
    return float(np.mean(values)), sd, sd / math.sqrt(n)


@dataclass(frozen=True)
class PipelineConfig:
    """Signal-to-features settings shared by every experiment."""

    smoothing: SmoothingConfig = SmoothingConfig()
    vt: float | None = None  # None selects the threshold from vt_grid
    mfd: float = DEFAULT_MFD_MS
    vt_grid: tuple[float, ...] = DEFAULT_VT_GRID
    aggregate: str = "pooled"
    geometry: ScreenGeometry = GOF_GEOMETRY
    density_grid_n: int = 8


@dataclass(frozen=True)
class ExperimentConfig:
    n_runs: int = 50
    split_ratio: float = 0.8
    k_features_per_channel: int = 1
    classifier_kind: str = "logreg"
    weight_mode: str = "equal"
    manual_weights: tuple[float, float] | None = None  # (w_fix, w_sac)
    rank_on: str = "train"
    tune_on: str = "train"
    seed: int = 0
    subset_size: int | None = None
    logreg_l2: float = 1.0
    rf_grid: Mapping[str, Sequence] | None = None
    nm: NmConfig = NmConfig()
    n_jobs: int = 1
    pipeline: PipelineConfig = PipelineConfig()

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.k_features_per_channel < 1:
            raise ValueError("k_features_per_channel must be >= 1")
        if self.classifier_kind not in CLASSIFIER_KINDS:
            raise ValueError(f"classifier_kind must be one of {CLASSIFIER_KINDS}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.rank_on not in RANK_MODES:
            raise ValueError(f"rank_on must be one of {RANK_MODES}")
        if self.tune_on not in TUNE_MODES:
            raise ValueError(f"tune_on must be one of {TUNE_MODES}")
        if self.weight_mode == "manual":
            if self.manual_weights is None:
                raise ValueError("manual weight mode needs manual_weights=(w_fix, w_sac)")
            EnsembleWeights(*self.manual_weights)  # validates range and sum
        if self.subset_size is not None and (self.subset_size < 2 or self.subset_size % 2):
            raise ValueError("subset_size must be even and >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")


@dataclass
class EvalReport:
    """Per-run accuracies plus aggregates and the configuration echo."""

    label: str
    accuracies: list[float]
    mean_accuracy: float
    sd: float
    sem: float
    weights: list[tuple[float, float]] | None
    n_participants: int
    n_excluded: int
    excluded_ids: list[str]
    config: dict
    leaky_weights: bool = False

    def to_text(self) -> str:
        lines = [
            "gazeforge evaluation report",
            f"label: {self.label}",
            f"participants: {self.n_participants} (excluded: {self.n_excluded})",
            f"runs: {len(self.accuracies)}",
            f"mean accuracy: {100 * self.mean_accuracy:.2f} %  SD: {100 * self.sd:.2f} %  SEM: {100 * self.sem:.2f} %",
        ]
        if self.leaky_weights:
            lines.append("WARNING: fusion weights were tuned on the test split (leaky protocol emulation)")
        if self.weights is not None:
            mean_fix = float(np.mean([w[0] for w in self.weights]))
            lines.append(f"mean weights: fix={mean_fix:.3f} sac={1 - mean_fix:.3f}")
        lines.append("run,accuracy" + (",w_fix,w_sac" if self.weights is not None else ""))
        for i, acc in enumerate(self.accuracies):
            row = f"{i},{acc:.6f}"
            if self.weights is not None:
                row += f",{self.weights[i][0]:.6f},{self.weights[i][1]:.6f}"
            lines.append(row)
        lines.append(f"config: {self.config}")
        return "\n".join(lines) + "\n"


def balanced_split(
    y: np.ndarray, ratio: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random split: floor(ratio*n_c) rows train, the rest test.

    With a class-balanced cohort both sides stay exactly balanced.
    """
    train, test = [], []
    for cls in (0.0, 1.0):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        n_train = int(math.floor(ratio * len(members)))
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def _segment_cohort(
    cohort: Sequence[GazeTrajectory], pipeline: PipelineConfig
) -> tuple[list, float, list[str]]:
    """Smooth, differentiate and segment every usable trajectory.

    Returns (records, chosen_vt, excluded_ids) where each record is
    (trajectory, series, segments). Trajectories too short for the filter or
    the difference scheme are excluded with a warning.
    """
    prepared = []
    excluded = []
    for traj in cohort:
        if len(traj) < max(pipeline.smoothing.frame_size, 3):
            logger.warning("excluding %s: trajectory too short (%d samples)", traj.participant_id, len(traj))
            excluded.append(traj.participant_id)
            continue
        smoothed = smooth_trajectory(traj, pipeline.smoothing)
        series = kinematics(smoothed, pipeline.geometry)
        prepared.append((smoothed, series))

    if not prepared:
        raise ValueError("no usable trajectories in cohort")
    if pipeline.vt is not None:
        vt = pipeline.vt
    else:
        vt = select_vt([(series, traj.t_ms) for traj, series in prepared], pipeline.mfd, pipeline.vt_grid)
    params = IvtParams(vt=vt, mfd=pipeline.mfd)
    records = [(traj, series, ivt_segment(series, traj.t_ms, params)) for traj, series in prepared]
    return records, vt, excluded


def prepare_channel_tables(
    cohort: Sequence[GazeTrajectory], pipeline: PipelineConfig = PipelineConfig()
) -> tuple[FeatureTable, FeatureTable, list[str]]:
    """Fixation-channel and saccade-channel feature tables for a cohort.

    Participants with an empty channel are excluded from both tables and
    reported back (and logged) rather than imputed.
    """
    records, _, excluded = _segment_cohort(cohort, pipeline)
    rows_fix: dict[str, dict] = {}
    rows_sac: dict[str, dict] = {}
    labels: dict[str, str] = {}
    for traj, series, segments in records:
        try:
            fix = extract_channel_features(
                segments_of_kind(segments, FIXATION), series, traj, pipeline.aggregate
            )
            sac = extract_channel_features(
                segments_of_kind(segments, SACCADE), series, traj, pipeline.aggregate
            )
        except EmptyChannelError as exc:
            logger.warning("excluding %s: %s", traj.participant_id, exc)
            excluded.append(traj.participant_id)
            continue
        rows_fix[traj.participant_id] = fix
        rows_sac[traj.participant_id] = sac
        labels[traj.participant_id] = traj.gender
    if not rows_fix:
        raise ValueError("every participant was excluded; nothing to analyze")
    table_fix = FeatureTable.from_rows(rows_fix, labels, "fixation", FIXATION_FEATURES)
    table_sac = FeatureTable.from_rows(rows_sac, labels, "saccade", SACCADE_FEATURES)
    return table_fix, table_sac, excluded


def prepare_sota_table(
    cohort: Sequence[GazeTrajectory], pipeline: PipelineConfig = PipelineConfig()
) -> tuple[FeatureTable, list[str]]:
    """Six-feature reference table (single channel, no fusion)."""
    records, _, excluded = _segment_cohort(cohort, pipeline)
    grid = SpatialGrid(
        n=pipeline.density_grid_n,
        width_px=pipeline.geometry.width_px,
        height_px=pipeline.geometry.height_px,
    )
    rows: dict[str, dict] = {}
    labels: dict[str, str] = {}
    for traj, series, segments in records:
        try:
            rows[traj.participant_id] = extract_sota_features(segments, series, traj, grid)
        except EmptyChannelError as exc:
            logger.warning("excluding %s: %s", traj.participant_id, exc)
            excluded.append(traj.participant_id)
            continue
        labels[traj.participant_id] = traj.gender
    if not rows:
        raise ValueError("every participant was excluded; nothing to analyze")
    return FeatureTable.from_rows(rows, labels, "sota"), excluded


def _derived_seed(*path: int) -> int:
    return int(np.random.SeedSequence(list(path)).generate_state(1)[0])


def _run_single(table_fix: FeatureTable, table_sac: FeatureTable, config: ExperimentConfig, run_idx: int) -> dict:
    """One train/test run; pure function of its arguments."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, run_idx]))
    y = encode_labels(table_fix.labels)
    train_idx, test_idx = balanced_split(y, config.split_ratio, rng)
    assert not set(train_idx.tolist()) & set(test_idx.tolist())

    channel_tables = []
    for table in (table_fix, table_sac):
        rank_table = table.subset(train_idx) if config.rank_on == "train" else table
        names = select_top_k(anova_rank(rank_table), config.k_features_per_channel)
        channel_tables.append(table.select_features(names))
    slim_fix, slim_sac = channel_tables

    y_train, y_test = y[train_idx], y[test_idx]
    models = []
    for channel_idx, table in enumerate((slim_fix, slim_sac)):
        models.append(
            train_classifier(
                config.classifier_kind,
                table.values[train_idx],
                y_train,
                seed=_derived_seed(config.seed, run_idx, 10 + channel_idx),
                l2=config.logreg_l2,
                rf_grid=config.rf_grid,
                feature_names=table.feature_names,
            )
        )
    p_fix_test = models[0].predict_proba(slim_fix.values[test_idx])
    p_sac_test = models[1].predict_proba(slim_sac.values[test_idx])

    if config.weight_mode == "equal":
        weights = EQUAL_WEIGHTS
    elif config.weight_mode == "manual":
        weights = EnsembleWeights(*config.manual_weights)
    elif config.tune_on == "test-leaky":
        weights = optimize_weights_for_probs(p_fix_test, p_sac_test, y_test, config.nm).weights
    else:
        weights = optimize_weights(
            slim_fix.subset(train_idx),
            slim_sac.subset(train_idx),
            classifier_kind=config.classifier_kind,
            seed=_derived_seed(config.seed, run_idx, 3),
            config=config.nm,
            l2=config.logreg_l2,
            rf_grid=config.rf_grid,
        ).weights

    fused = fuse(p_fix_test, p_sac_test, weights)
    accuracy = float(np.mean((fused >= 0.5) == (y_test == 1.0)))
    return {"accuracy": accuracy, "weights": (weights.w_fix, weights.w_sac)}


def _run_single_table(table: FeatureTable, config: ExperimentConfig, run_idx: int) -> dict:
    """Single-classifier run used by the reference-feature protocol."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, run_idx]))
    y = encode_labels(table.labels)
    train_idx, test_idx = balanced_split(y, config.split_ratio, rng)
    assert not set(train_idx.tolist()) & set(test_idx.tolist())
    model = train_classifier(
        config.classifier_kind,
        table.values[train_idx],
        y[train_idx],
        seed=_derived_seed(config.seed, run_idx, 10),
        l2=config.logreg_l2,
        rf_grid=config.rf_grid,
        feature_names=table.feature_names,
    )
    p = model.predict_proba(table.values[test_idx])
    return {"accuracy": float(np.mean((p >= 0.5) == (y[test_idx] == 1.0))), "weights": None}


def _subset_tables(
    tables: Sequence[FeatureTable], subset_size: int, seed: int
) -> list[FeatureTable]:
    """Class-balanced random subset, deterministic in (seed, subset_size)."""
    labels = tables[0].labels
    per_class = subset_size // 2
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B5E7, subset_size]))
    chosen: list[int] = []
    for cls in (FEMALE, MALE):
        members = np.flatnonzero(labels == cls)
        if len(members) < per_class:
            raise ValueError(f"subset needs {per_class} of class {cls}, cohort has {len(members)}")
        chosen.extend(members[rng.permutation(len(members))][:per_class].tolist())
    chosen = sorted(chosen)
    return [t.subset(chosen) for t in tables]


def _collect_runs(worker, args_list, n_jobs: int) -> list[dict]:
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(worker, *zip(*args_list)))
    return [worker(*args) for args in args_list]


def _aggregate(label: str, results: list[dict], config: ExperimentConfig, n_participants: int, excluded: list[str]) -> EvalReport:
    accuracies = [r["accuracy"] for r in results]
    if len(accuracies) >= 2:
        mean, sd, se = sem(accuracies)
    else:
        mean, sd, se = accuracies[0], 0.0, 0.0
    weights = None
    if config.weight_mode == "optimized" and results and results[0]["weights"] is not None:
        weights = [r["weights"] for r in results]
    return EvalReport(
        label=label,
        accuracies=accuracies,
        mean_accuracy=mean,
        sd=sd,
        sem=se,
        weights=weights,
        n_participants=n_participants,
        n_excluded=len(excluded),
        excluded_ids=list(excluded),
        config=dataclasses.asdict(config),
        leaky_weights=(config.weight_mode == "optimized" and config.tune_on == "test-leaky"),
    )


def run_experiment_on_tables(
    table_fix: FeatureTable,
    table_sac: FeatureTable,
    config: ExperimentConfig,
    excluded: Sequence[str] = (),
    label: str = "experiment",
) -> EvalReport:
    """The repeated-split protocol on prebuilt channel tables."""
    if table_fix.ids != table_sac.ids:
        raise ValueError("channel tables must cover the same participants")
    if config.subset_size is not None:
        if config.subset_size > len(table_fix):
            raise ValueError("subset_size exceeds the usable cohort size")
        table_fix, table_sac = _subset_tables((table_fix, table_sac), config.subset_size, config.seed)
    args = [(table_fix, table_sac, config, r) for r in range(config.n_runs)]
    results = _collect_runs(_run_single, args, config.n_jobs)
    return _aggregate(label, results, config, len(table_fix), list(excluded))


def run_experiment(cohort: Sequence[GazeTrajectory], config: ExperimentConfig) -> EvalReport:
    """Build feature tables for the cohort and run the repeated-split protocol."""
    table_fix, table_sac, excluded = prepare_channel_tables(cohort, config.pipeline)
    return run_experiment_on_tables(table_fix, table_sac, config, excluded)


def sweep_feature_counts(
    cohort: Sequence[GazeTrajectory], ks: Sequence[int], config: ExperimentConfig
) -> list[EvalReport]:
    """run_experiment per feature count, with identical per-run splits across ks."""
    table_fix, table_sac, excluded = prepare_channel_tables(cohort, config.pipeline)
    reports = []
    for k in ks:
        cfg = dataclasses.replace(config, k_features_per_channel=k)
        reports.append(
            run_experiment_on_tables(table_fix, table_sac, cfg, excluded, label=f"k={k} per channel")
        )
    return reports


def sota_protocol(
    cohort: Sequence[GazeTrajectory],
    config: ExperimentConfig,
    n_female: int = 20,
    n_male: int = 25,
) -> tuple[EvalReport, EvalReport]:
    """Small-cohort comparison: pipeline features versus the reference six.

    The cohort is restricted to a seeded random subsample with the requested
    per-class counts (defaults mirror the reference study demographics);
    reports carry the across-run SD alongside the SEM.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x507A]))
    by_class = {FEMALE: [], MALE: []}
    for traj in cohort:
        by_class[traj.gender].append(traj)
    chosen = []
    for cls, count in ((FEMALE, n_female), (MALE, n_male)):
        members = by_class[cls]
        if len(members) < count:
            raise ValueError(f"cohort has {len(members)} of class {cls}, need {count}")
        order = rng.permutation(len(members))[:count]
        chosen.extend(members[i] for i in sorted(order.tolist()))

    table_fix, table_sac, excluded_pipe = prepare_channel_tables(chosen, config.pipeline)
    pipeline_report = run_experiment_on_tables(
        table_fix, table_sac, config, excluded_pipe, label="pipeline features"
    )
    table_sota, excluded_sota = prepare_sota_table(chosen, config.pipeline)
    args = [(table_sota, config, r) for r in range(config.n_runs)]
    results = _collect_runs(_run_single_table, args, config.n_jobs)
    sota_report = _aggregate("sota features", results, config, len(table_sota), excluded_sota)
    return pipeline_report, sota_report


def sd_vs_users(
    cohort: Sequence[GazeTrajectory], sizes: Sequence[int], config: ExperimentConfig
) -> list[tuple[int, EvalReport]]:
    """Accuracy-SD as a function of cohort size, on balanced random subsets."""
    sizes = list(sizes)
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be ascending")
    table_fix, table_sac, excluded = prepare_channel_tables(cohort, config.pipeline)
    out = []
    for size in sizes:
        cfg = dataclasses.replace(config, subset_size=size)
        report = run_experiment_on_tables(table_fix, table_sac, cfg, excluded, label=f"n={size}")
        out.append((size, report))
    return out


def sd_curve(results: Sequence[tuple[int, EvalReport]]) -> list[tuple[int, float]]:
    return [(size, report.sd) for size, report in results]


@dataclass(frozen=True)
class AoiSpec:
    """Named screen rectangles (x0, y0, x1, y1) in pixels."""

    rects: Mapping[str, tuple[float, float, float, float]]

    def __post_init__(self):
        for name, (x0, y0, x1, y1) in self.rects.items():
            if not (x0 < x1 and y0 < y1) or min(x0, y0) < 0:
                raise ValueError(f"AOI {name!r}: need 0 <= x0 < x1 and 0 <= y0 < y1")

    def validate_bounds(self, geometry: ScreenGeometry) -> None:
        for name, (x0, y0, x1, y1) in self.rects.items():
            if x1 > geometry.width_px or y1 > geometry.height_px:
                raise ValueError(f"AOI {name!r} exceeds the screen bounds")

    def contains(self, name: str, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.rects[name]
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass
class MeasureStats:
    female_mean: float
    female_sd: float
    male_mean: float
    male_sd: float
    n_female: int
    n_male: int
    p_value: float


@dataclass
class CohortStats:
    measures: dict[str, MeasureStats]
    stat_test: str
    vt: float

    def to_text(self) -> str:
        lines = [
            "cohort statistics (mean +/- SD per gender)",
            f"significance test: {self.stat_test}; velocity threshold: {self.vt} deg/s",
            "measure,female_mean,female_sd,male_mean,male_sd,p_value",
        ]
        for name, m in self.measures.items():
            lines.append(
                f"{name},{m.female_mean:.4g},{m.female_sd:.4g},{m.male_mean:.4g},{m.male_sd:.4g},{m.p_value:.4g}"
            )
        return "\n".join(lines) + "\n"


def _two_group_p(a: np.ndarray, b: np.ndarray, stat_test: str) -> float:
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return 1.0  # zero-variance ties carry no evidence
    if stat_test == "mannwhitney":
        return float(scipy_stats.mannwhitneyu(a, b, alternative="two-sided").pvalue)
    if stat_test == "ttest":
        return float(scipy_stats.ttest_ind(a, b, equal_var=False).pvalue)
    raise ValueError(f"stat_test must be one of {STAT_TESTS}")


def cohort_stats(
    cohort: Sequence[GazeTrajectory],
    aoi: AoiSpec,
    pipeline: PipelineConfig = PipelineConfig(),
    stat_test: str = "mannwhitney",
) -> CohortStats:
    """Descriptive per-gender gaze statistics with significance tests.

    Reports path length (px), mean saccade amplitude (deg) and the share of
    fixations whose centroid falls inside each AOI rectangle, as mean +/- SD
    per gender with a two-sided p-value per measure.
    """
    aoi.validate_bounds(pipeline.geometry)
    records, vt, _ = _segment_cohort(cohort, pipeline)

    per_measure: dict[str, dict[str, list[float]]] = {}

    def add(measure: str, gender: str, value: float) -> None:
        per_measure.setdefault(measure, {FEMALE: [], MALE: []})[gender].append(value)

    for traj, series, segments in records:
        x, y = traj.x_px, traj.y_px
        add("path_length_px", traj.gender, float(np.sum(np.hypot(np.diff(x), np.diff(y)))))
        saccades = segments_of_kind(segments, SACCADE)
        if saccades:
            amp = float(np.mean([segment_displacement_deg(series, traj.t_ms, s) for s in saccades]))
            add("saccade_amplitude_deg", traj.gender, amp)
        fixations = segments_of_kind(segments, FIXATION)
        if fixations:
            centroids = [
                (float(np.mean(x[s.indices])), float(np.mean(y[s.indices]))) for s in fixations
            ]
            for name in aoi.rects:
                share = 100.0 * np.mean([aoi.contains(name, cx, cy) for cx, cy in centroids])
                add(f"aoi_share_{name}", traj.gender, float(share))

    measures = {}
    for name, groups in per_measure.items():
        f_vals = np.asarray(groups[FEMALE])
        m_vals = np.asarray(groups[MALE])
        if len(f_vals) < 2 or len(m_vals) < 2:
            raise ValueError(f"measure {name!r}: need at least 2 participants per gender")
        measures[name] = MeasureStats(
            female_mean=float(np.mean(f_vals)),
            female_sd=float(np.std(f_vals, ddof=1)),
            male_mean=float(np.mean(m_vals)),
            male_sd=float(np.std(m_vals, ddof=1)),
            n_female=len(f_vals),
            n_male=len(m_vals),
            p_value=_two_group_p(f_vals, m_vals, stat_test),
        )
    return CohortStats(measures=measures, stat_test=stat_test, vt=vt)
