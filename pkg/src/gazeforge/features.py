"""Per-participant gaze features and ANOVA feature ranking.

Two feature channels are extracted per participant: one over fixation
segments and one over saccade segments. Each channel combines pooled
statistics (mean, median, max, min, SD, skewness, kurtosis) of the six
kinematic series with per-segment aggregates; the saccade channel adds
saccade amplitude and saccade ratio. A separate six-feature set mirrors the
reference feature family used for cross-study comparison.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TYPE_CHECKING

import numpy as np

from .segmentation import FIXATION, SACCADE, Segment, segments_of_kind

if TYPE_CHECKING:
    from .ingest import GazeTrajectory
    from .signal import KinematicSeries

_STATS = ("mean", "median", "max", "min", "sd", "skew", "kurt")
_SERIES = ("v", "vx", "vy", "a", "ax", "ay")
_SEGMENT_AGGREGATES = (
    "mean_duration_ms",
    "mean_dispersion_px",
    "mean_path_length_px",
    "mean_prev_dist_px",
    "mean_prev_angle_rad",
)
_SACCADE_EXTRAS = ("mean_amplitude_deg", "mean_saccade_ratio")

_POOLED_STATS = tuple(f"{stat}_{series}" for series in _SERIES for stat in _STATS)

#: Canonical catalog order of the two channels.
FIXATION_FEATURES = _POOLED_STATS + _SEGMENT_AGGREGATES
SACCADE_FEATURES = _POOLED_STATS + _SEGMENT_AGGREGATES + _SACCADE_EXTRAS

SOTA_FEATURES = (
    "mean_fixation_duration_ms",
    "spatial_density",
    "rfdsd",
    "n_saccades",
    "mean_saccade_amplitude_deg",
    "total_path_length_px",
)

AGGREGATE_MODES = ("pooled", "per-segment-mean")


class EmptyChannelError(ValueError):
    """Raised when a participant has no segments of the requested kind."""


@dataclass(frozen=True)
class SpatialGrid:
    """n x n occupancy grid over the screen for the spatial-density feature."""

    n: int = 8
    width_px: float = 1280.0
    height_px: float = 1024.0

    def __post_init__(self):
        if self.n < 1 or self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("grid dimensions must be positive")

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = min(self.n - 1, max(0, int(x / self.width_px * self.n)))
        iy = min(self.n - 1, max(0, int(y / self.height_px * self.n)))
        return ix, iy


def _stats(x: np.ndarray) -> dict[str, float]:
    """mean/median/max/min/SD plus g1 skewness and g2 excess kurtosis.

    Zero-variance input yields 0 for skewness and kurtosis, keeping every
    feature finite for degenerate segments.
    """
    x = np.asarray(x, dtype=float)
    mu = float(np.mean(x))
    m2 = float(np.mean((x - mu) ** 2))
    if m2 > 0.0:
        m3 = float(np.mean((x - mu) ** 3))
        m4 = float(np.mean((x - mu) ** 4))
        skew = m3 / m2**1.5
        kurt = m4 / m2**2 - 3.0
    else:
        skew = 0.0
        kurt = 0.0
    return {
        "mean": mu,
        "median": float(np.median(x)),
        "max": float(np.max(x)),
        "min": float(np.min(x)),
        "sd": math.sqrt(m2),
        "skew": skew,
        "kurt": kurt,
    }


def _centroid(traj: GazeTrajectory, seg: Segment) -> tuple[float, float]:
    sl = seg.indices
    return float(np.mean(traj.x_px[sl])), float(np.mean(traj.y_px[sl]))


def _path_length(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(np.sum(np.hypot(np.diff(x), np.diff(y))))


def _angle_to_prev(dx: float, dy: float) -> float:
    angle = math.atan2(dy, dx)
    return math.pi if angle == -math.pi else angle


def segment_displacement_deg(series: KinematicSeries, t_ms: np.ndarray, seg: Segment) -> float:
    """Angular start-to-end displacement, integrated from directional velocities."""
    if seg.start == seg.end:
        return 0.0
    dt_s = np.diff(t_ms[seg.start : seg.end + 1]) / 1000.0
    dx = float(np.sum(series.vx[seg.start : seg.end] * dt_s))
    dy = float(np.sum(series.vy[seg.start : seg.end] * dt_s))
    return math.hypot(dx, dy)


def _series_arrays(series: KinematicSeries) -> dict[str, np.ndarray]:
    return {name: getattr(series, name) for name in _SERIES}


def extract_channel_features(
    segments: Sequence[Segment],
    series: KinematicSeries,
    traj: GazeTrajectory,
    aggregate: str = "pooled",
) -> dict[str, float]:
    """Feature vector of one channel (all segments must share one kind).

    ``aggregate`` selects whether the M3S2K statistics pool every sample of
    the channel ("pooled", default) or average per-segment statistics
    ("per-segment-mean").
    """
    if aggregate not in AGGREGATE_MODES:
        raise ValueError(f"aggregate must be one of {AGGREGATE_MODES}")
    if not segments:
        raise EmptyChannelError("empty channel: no segments of the requested kind")
    kind = segments[0].kind
    if any(s.kind != kind for s in segments):
        raise ValueError("segments of mixed kinds passed to one channel")

    arrays = _series_arrays(series)
    out: dict[str, float] = {}
    if aggregate == "pooled":
        for name, arr in arrays.items():
            pooled = np.concatenate([arr[s.indices] for s in segments])
            stats = _stats(pooled)
            for stat in _STATS:
                out[f"{stat}_{name}"] = stats[stat]
    else:
        for name, arr in arrays.items():
            per_seg = [_stats(arr[s.indices]) for s in segments]
            for stat in _STATS:
                out[f"{stat}_{name}"] = float(np.mean([p[stat] for p in per_seg]))

    out["mean_duration_ms"] = float(np.mean([s.duration_ms for s in segments]))
    dispersions = []
    paths = []
    for s in segments:
        sl = s.indices
        x, y = traj.x_px[sl], traj.y_px[sl]
        dispersions.append(float(x.max() - x.min() + y.max() - y.min()))
        paths.append(_path_length(x, y))
    out["mean_dispersion_px"] = float(np.mean(dispersions))
    out["mean_path_length_px"] = float(np.mean(paths))

    if len(segments) >= 2:
        centroids = [_centroid(traj, s) for s in segments]
        dists = []
        angles = []
        for (x0, y0), (x1, y1) in zip(centroids, centroids[1:]):
            dists.append(math.hypot(x1 - x0, y1 - y0))
            angles.append(_angle_to_prev(x1 - x0, y1 - y0))
        out["mean_prev_dist_px"] = float(np.mean(dists))
        out["mean_prev_angle_rad"] = float(np.mean(angles))
    else:
        out["mean_prev_dist_px"] = 0.0
        out["mean_prev_angle_rad"] = 0.0

    if kind == SACCADE:
        amplitudes = [segment_displacement_deg(series, traj.t_ms, s) for s in segments]
        ratios = [float(np.max(series.v[s.indices])) / (s.duration_ms / 1000.0) for s in segments]
        out["mean_amplitude_deg"] = float(np.mean(amplitudes))
        out["mean_saccade_ratio"] = float(np.mean(ratios))

    catalog = SACCADE_FEATURES if kind == SACCADE else FIXATION_FEATURES
    return {name: out[name] for name in catalog}


def extract_sota_features(
    segments: Sequence[Segment],
    series: KinematicSeries,
    traj: GazeTrajectory,
    grid: SpatialGrid,
) -> dict[str, float]:
    """The six-feature reference set used for cross-study comparison."""
    fixations = segments_of_kind(segments, FIXATION)
    saccades = segments_of_kind(segments, SACCADE)
    if not fixations or not saccades:
        raise EmptyChannelError("empty channel: need at least one fixation and one saccade")

    cells = {grid.cell_of(*_centroid(traj, s)) for s in fixations}
    total_fix = sum(s.duration_ms for s in fixations)
    total_sac = sum(s.duration_ms for s in saccades)
    amplitudes = [segment_displacement_deg(series, traj.t_ms, s) for s in saccades]
    return {
        "mean_fixation_duration_ms": float(np.mean([s.duration_ms for s in fixations])),
        "spatial_density": len(cells) / grid.n**2,
        "rfdsd": total_fix / total_sac,
        "n_saccades": float(len(saccades)),
        "mean_saccade_amplitude_deg": float(np.mean(amplitudes)),
        "total_path_length_px": _path_length(traj.x_px, traj.y_px),
    }


@dataclass
class FeatureTable:
    """Participants x features matrix with class labels for one channel."""

    ids: list[str]
    labels: np.ndarray
    feature_names: list[str]
    values: np.ndarray
    channel: str

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=object)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.ids), len(self.feature_names)):
            raise ValueError("values shape does not match ids x feature_names")
        if len(self.labels) != len(self.ids):
            raise ValueError("labels must cover exactly the participant rows")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @classmethod
    def from_rows(
        cls,
        rows: Mapping[str, Mapping[str, float]],
        labels: Mapping[str, str],
        channel: str,
        feature_names: Sequence[str] | None = None,
    ) -> "FeatureTable":
        ids = sorted(rows)
        if set(labels) != set(ids):
            raise ValueError("labels must cover exactly the row keys")
        if feature_names is None:
            feature_names = list(rows[ids[0]])
        values = np.array([[rows[pid][name] for name in feature_names] for pid in ids])
        return cls(ids, np.array([labels[pid] for pid in ids], dtype=object), list(feature_names), values, channel)

    def __len__(self) -> int:
        return len(self.ids)

    def select_features(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureTable(list(self.ids), self.labels.copy(), list(names), self.values[:, idx], self.channel)

    def subset(self, row_indices: Sequence[int]) -> "FeatureTable":
        row_indices = list(row_indices)
        return FeatureTable(
            [self.ids[i] for i in row_indices],
            self.labels[row_indices],
            list(self.feature_names),
            self.values[row_indices],
            self.channel,
        )

    def to_csv(self, path) -> None:
        """Export as ``participant_id,label,<features...>`` with 12 significant digits."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["participant_id", "label", *self.feature_names])
            for i, pid in enumerate(self.ids):
                writer.writerow([pid, self.labels[i], *(format(v, ".12g") for v in self.values[i])])

    @classmethod
    def from_csv(cls, path, channel: str) -> "FeatureTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["participant_id", "label"]:
                raise ValueError("bad feature-table header")
            names = header[2:]
            ids, labels, rows = [], [], []
            for row in reader:
                ids.append(row[0])
                labels.append(row[1])
                rows.append([float(v) for v in row[2:]])
        return cls(ids, np.array(labels, dtype=object), names, np.array(rows), channel)


def anova_rank(table: FeatureTable) -> list[tuple[str, float]]:
    """Rank features by the one-way two-group F score, descending.

    F is the between-group mean square over the within-group mean square; a
    feature with zero variance in both directions scores 0, and ties are
    broken by catalog order.
    """
    classes = sorted(set(table.labels))
    if len(classes) != 2:
        raise ValueError("ANOVA ranking needs exactly two classes")
    mask_a = table.labels == classes[0]
    mask_b = table.labels == classes[1]
    if mask_a.sum() < 2 or mask_b.sum() < 2:
        raise ValueError("each class needs at least 2 members")

    scores = [
        anova_f(table.values[mask_a, j], table.values[mask_b, j])
        for j in range(len(table.feature_names))
    ]
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return [(table.feature_names[j], scores[j]) for j in order]


def anova_f(a: np.ndarray, b: np.ndarray) -> float:
    """One-way F statistic for two groups."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    grand = (a.sum() + b.sum()) / (na + nb)
    ssb = na * (a.mean() - grand) ** 2 + nb * (b.mean() - grand) ** 2
    ssw = float(((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum())
    msw = ssw / (na + nb - 2)
    if msw == 0.0:
        return 0.0 if ssb == 0.0 else math.inf
    return float(ssb / msw)


def select_top_k(ranking: Sequence[tuple[str, float]], k: int) -> list[str]:
    """Top-k feature names of a ranking, preserving rank order."""
    if k > len(ranking):
        raise ValueError("k exceeds the catalog size")
    return [name for name, _ in ranking[:k]]
