"""I-VT segmentation of gaze samples into fixations and saccades.

A maximal run of samples whose angular speed is strictly below the velocity
threshold (VT) and whose duration is strictly longer than the minimum
fixation duration (MFD) is a fixation; every other sample belongs to a
saccade, with adjacent saccade material (including sub-MFD slow runs) merged
into one segment. Segments partition the trajectory and alternate in kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .signal import KinematicSeries

FIXATION = "fixation"
SACCADE = "saccade"

DEFAULT_MFD_MS = 100.0
#: Default candidate grid for automatic VT selection, deg/s.
DEFAULT_VT_GRID = tuple(float(v) for v in range(5, 55, 5))


@dataclass(frozen=True)
class IvtParams:
    vt: float
    mfd: float = DEFAULT_MFD_MS

    def __post_init__(self):
        if self.vt <= 0:
            raise ValueError("vt must be > 0")
        if self.mfd < 0:
            raise ValueError("mfd must be >= 0")


@dataclass(frozen=True)
class Segment:
    """One classified segment: inclusive sample-index range plus duration."""

    kind: str
    start: int
    end: int
    duration_ms: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("start must be <= end")

    @property
    def indices(self) -> slice:
        return slice(self.start, self.end + 1)

    @property
    def n_samples(self) -> int:
        return self.end - self.start + 1


def _run_bounds(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive [start, end] bounds of maximal constant runs of a bool mask."""
    n = len(mask)
    changes = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = np.concatenate([[0], changes + 1])
    ends = np.concatenate([changes, [n - 1]])
    return list(zip(starts.tolist(), ends.tolist()))


def _duration_ms(t_ms: np.ndarray, start: int, end: int) -> float:
    """Segment duration: t[end+1]-t[start], or one sampling period past the end."""
    if end + 1 < len(t_ms):
        return float(t_ms[end + 1] - t_ms[start])
    period = float(t_ms[-1] - t_ms[-2]) if len(t_ms) > 1 else 0.0
    return float(t_ms[end] - t_ms[start]) + period


def ivt_segment(series: KinematicSeries, t_ms: np.ndarray, params: IvtParams) -> list[Segment]:
    """Segment a kinematic series into alternating fixations and saccades."""
    t_ms = np.asarray(t_ms, dtype=float)
    n = len(series.v)
    if n == 0:
        raise ValueError("empty series")
    if len(t_ms) != n:
        raise ValueError("timestamps and series length differ")

    slow = series.v < params.vt
    fix_mask = np.zeros(n, dtype=bool)
    for start, end in _run_bounds(slow):
        if slow[start] and _duration_ms(t_ms, start, end) > params.mfd:
            fix_mask[start : end + 1] = True

    segments = []
    for start, end in _run_bounds(fix_mask):
        kind = FIXATION if fix_mask[start] else SACCADE
        segments.append(Segment(kind, start, end, _duration_ms(t_ms, start, end)))
    return segments


def segments_of_kind(segments: Sequence[Segment], kind: str) -> list[Segment]:
    return [s for s in segments if s.kind == kind]


def select_vt(
    cohort: Sequence[tuple[KinematicSeries, np.ndarray]],
    mfd: float,
    candidate_vts: Sequence[float] = DEFAULT_VT_GRID,
) -> float:
    """Pick a velocity threshold from a candidate grid.

    For each candidate the per-participant fixation counts are tabulated.
    With M the mean over participants of each participant's maximum count
    across the grid, the chosen threshold is the smallest candidate for which
    every participant has at least one fixation and whose mean fixation count
    is nearest to M.
    """
    candidates = [float(v) for v in candidate_vts]
    if not candidates:
        raise ValueError("candidate grid is empty")
    if any(b <= a for a, b in zip(candidates, candidates[1:])):
        raise ValueError("candidate grid must be strictly ascending")
    if not cohort:
        raise ValueError("empty cohort")

    counts = np.empty((len(cohort), len(candidates)))
    for i, (series, t_ms) in enumerate(cohort):
        for j, vt in enumerate(candidates):
            segs = ivt_segment(series, t_ms, IvtParams(vt=vt, mfd=mfd))
            counts[i, j] = sum(1 for s in segs if s.kind == FIXATION)

    target = counts.max(axis=1).mean()
    eligible = np.flatnonzero(counts.min(axis=0) >= 1)
    if eligible.size == 0:
        raise ValueError(
            "no candidate velocity threshold gives every participant a fixation; "
            "grid too coarse or too low"
        )
    mean_counts = counts[:, eligible].mean(axis=0)
    best = eligible[int(np.argmin(np.abs(mean_counts - target)))]
    return candidates[best]
