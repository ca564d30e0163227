"""Loading, validation and synthesis of gaze-trajectory cohorts.

The on-disk format is a flat CSV with header
``participant_id,gender,trial_id,t_ms,x_px,y_px`` (gender F or M, UTF-8,
decimal point). Rows may arrive unsorted; they are grouped per participant,
sorted by (trial_id, t_ms), and the trials are concatenated onto a single
merged timeline capped at a configurable duration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

FEMALE = "F"
MALE = "M"
GENDERS = (FEMALE, MALE)

#: Missing-value markers accepted in coordinate columns; such rows are dropped.
NA_MARKERS = frozenset({"", "na", "nan", "n/a", "null"})

DEFAULT_CAP_MS = 120_000.0

CSV_HEADER = ("participant_id", "gender", "trial_id", "t_ms", "x_px", "y_px")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class GazeSample(NamedTuple):
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class ScreenGeometry:
    """Physical screen setup used to convert pixels to visual angle."""

    width_px: int
    height_px: int
    diagonal_cm: float
    viewing_distance_cm: float

    def __post_init__(self):
        for name in ("width_px", "height_px", "diagonal_cm", "viewing_distance_cm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def pixel_pitch_cm(self) -> float:
        """Physical size of one (square) pixel."""
        return self.diagonal_cm / math.hypot(self.width_px, self.height_px)


#: 19-inch 1280x1024 LCD viewed from 57 cm (the GOF recording setup).
GOF_GEOMETRY = ScreenGeometry(
    width_px=1280, height_px=1024, diagonal_cm=48.26, viewing_distance_cm=57.0
)


@dataclass
class GazeTrajectory:
    """Time-ordered gaze samples of one participant.

    ``t_ms``, ``x_px`` and ``y_px`` are equal-length float arrays; timestamps
    are strictly increasing and non-negative. Instances are treated as
    immutable values and may be shared freely across workers.
    """

    participant_id: str
    gender: str
    t_ms: np.ndarray
    x_px: np.ndarray
    y_px: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=float)
        self.x_px = np.asarray(self.x_px, dtype=float)
        self.y_px = np.asarray(self.y_px, dtype=float)
        if self.gender not in GENDERS:
            raise DataError(f"unknown gender code {self.gender!r}")
        if not (len(self.t_ms) == len(self.x_px) == len(self.y_px)):
            raise ValueError("t/x/y arrays must have equal length")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if len(self.t_ms):
            if not np.all(np.isfinite(self.t_ms)) or self.t_ms[0] < 0:
                raise ValueError("timestamps must be finite and non-negative")
            if np.any(np.diff(self.t_ms) <= 0):
                raise ValueError("timestamps must be strictly increasing")
            if not (np.all(np.isfinite(self.x_px)) and np.all(np.isfinite(self.y_px))):
                raise ValueError("coordinates must be finite")

    def __len__(self) -> int:
        return len(self.t_ms)

    @property
    def duration_ms(self) -> float:
        return float(self.t_ms[-1] - self.t_ms[0]) if len(self) else 0.0

    def samples(self) -> Iterable[GazeSample]:
        for t, x, y in zip(self.t_ms, self.x_px, self.y_px):
            yield GazeSample(float(t), float(x), float(y))


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of the synthetic cohort generator.

    ``class_effect`` maps a gender code to additive speed offsets (deg/s),
    keys ``fixation_speed`` and/or ``saccade_speed``; offsets shift the mean
    of the dwell-phase and jump-phase velocity processes of that class.
    """

    n_participants: int
    duration_ms: float = 30_000.0
    sample_rate_hz: float = 250.0
    class_effect: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    noise_sd_px: float = 1.0
    seed: int = 0
    geometry: ScreenGeometry = GOF_GEOMETRY

    def __post_init__(self):
        if self.n_participants < 2 or self.n_participants % 2:
            raise ValueError("n_participants must be even and >= 2")
        if self.noise_sd_px < 0:
            raise ValueError("noise_sd_px must be >= 0")
        if self.duration_ms <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("duration_ms and sample_rate_hz must be positive")
        for cls, offsets in self.class_effect.items():
            if cls not in GENDERS:
                raise ValueError(f"class_effect key {cls!r} is not a gender code")
            unknown = set(offsets) - {"fixation_speed", "saccade_speed"}
            if unknown:
                raise ValueError(f"unknown class_effect offsets: {sorted(unknown)}")


def concat_trials(
    trials: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    cap_ms: float,
    sample_rate_hz: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate per-trial (t, x, y) arrays onto one merged timeline.

    The first sample of each subsequent trial is placed one sampling period
    after the last sample of the previous trial, so the merged timeline has
    neither gaps nor zero-duration jumps. The result is truncated to samples
    within ``cap_ms`` of the first sample.
    """
    if not trials:
        raise ValueError("empty trial list")
    period_ms = 1000.0 / sample_rate_hz
    ts, xs, ys = [], [], []
    offset = None
    for t, x, y in trials:
        t = np.asarray(t, dtype=float)
        if len(t) == 0:
            raise ValueError("empty trial")
        if offset is None:
            shifted = t
        else:
            shifted = t - t[0] + offset
        ts.append(shifted)
        xs.append(np.asarray(x, dtype=float))
        ys.append(np.asarray(y, dtype=float))
        offset = shifted[-1] + period_ms
    t_all = np.concatenate(ts)
    keep = (t_all - t_all[0]) < cap_ms
    return t_all[keep], np.concatenate(xs)[keep], np.concatenate(ys)[keep]


def _parse_coord(token: str, line_no: int, column: str) -> float | None:
    """Parse a coordinate value; None means "drop this row"."""
    if token.strip().lower() in NA_MARKERS:
        return None
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"line {line_no}: malformed {column} value {token!r}") from None
    return value if math.isfinite(value) else None


def load_cohort(path, cap_ms: float = DEFAULT_CAP_MS, sample_rate_hz: float | None = None) -> list[GazeTrajectory]:
    """Load a cohort from the canonical gaze CSV schema.

    Rows with non-finite coordinates are dropped; malformed rows, duplicate
    (participant, trial, t) keys and unknown gender codes raise DataError.
    When ``sample_rate_hz`` is None the rate is inferred per participant from
    the median intra-trial sampling interval.
    """
    per_participant: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file: missing header") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"bad header {header!r}, expected {','.join(CSV_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"line {line_no}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            pid, gender, trial_s, t_s, x_s, y_s = (c.strip() for c in row)
            if gender not in GENDERS:
                raise DataError(f"line {line_no}: unknown gender code {gender!r}")
            try:
                trial = int(trial_s)
            except ValueError:
                raise DataError(f"line {line_no}: malformed trial_id {trial_s!r}") from None
            try:
                t = float(t_s)
            except ValueError:
                raise DataError(f"line {line_no}: malformed t_ms {t_s!r}") from None
            if not math.isfinite(t):
                raise DataError(f"line {line_no}: non-finite t_ms")
            x = _parse_coord(x_s, line_no, "x_px")
            y = _parse_coord(y_s, line_no, "y_px")
            entry = per_participant.setdefault(pid, {"gender": gender, "trials": {}, "keys": set()})
            if entry["gender"] != gender:
                raise DataError(f"line {line_no}: participant {pid!r} has conflicting gender codes")
            if (trial, t) in entry["keys"]:
                raise DataError(f"line {line_no}: duplicate (participant, trial, t) key ({pid}, {trial}, {t})")
            entry["keys"].add((trial, t))
            if x is None or y is None:
                continue  # drop rule for missing coordinates
            entry["trials"].setdefault(trial, []).append((t, x, y))

    cohort = []
    for pid in sorted(per_participant):
        entry = per_participant[pid]
        trials = []
        intervals = []
        for trial_id in sorted(entry["trials"]):
            rows = sorted(entry["trials"][trial_id])
            arr = np.asarray(rows, dtype=float)
            trials.append((arr[:, 0], arr[:, 1], arr[:, 2]))
            if len(arr) > 1:
                intervals.append(np.diff(arr[:, 0]))
        if not trials:
            continue  # all rows of this participant were dropped
        if sample_rate_hz is not None:
            rate = sample_rate_hz
        elif intervals:
            rate = 1000.0 / float(np.median(np.concatenate(intervals)))
        else:
            raise DataError(f"participant {pid!r}: cannot infer sample rate from single-sample trials")
        t, x, y = concat_trials(trials, cap_ms, rate)
        cohort.append(GazeTrajectory(pid, entry["gender"], t, x, y, rate))
    return cohort


def save_cohort(cohort: Sequence[GazeTrajectory], path, trial_id: int = 1) -> None:
    """Write trajectories back to the canonical CSV schema (lossless floats)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for traj in cohort:
            for t, x, y in zip(traj.t_ms, traj.x_px, traj.y_px):
                writer.writerow([traj.participant_id, traj.gender, trial_id, repr(float(t)), repr(float(x)), repr(float(y))])


def load_geometry(path) -> ScreenGeometry:
    """Read a ``key = value`` geometry config file.

    Recognized keys: width_px, height_px, diagonal_cm, viewing_distance_cm.
    Missing keys fall back to the GOF defaults.
    """
    values = {
        "width_px": GOF_GEOMETRY.width_px,
        "height_px": GOF_GEOMETRY.height_px,
        "diagonal_cm": GOF_GEOMETRY.diagonal_cm,
        "viewing_distance_cm": GOF_GEOMETRY.viewing_distance_cm,
    }
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"geometry line {line_no}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in values:
                raise DataError(f"geometry line {line_no}: unknown key {key!r}")
            try:
                values[key] = float(raw.strip())
            except ValueError:
                raise DataError(f"geometry line {line_no}: malformed value {raw.strip()!r}") from None
    return ScreenGeometry(
        width_px=int(values["width_px"]),
        height_px=int(values["height_px"]),
        diagonal_cm=values["diagonal_cm"],
        viewing_distance_cm=values["viewing_distance_cm"],
    )


# Dwell/jump base kinematics of the synthetic generator, deg/s and ms.
_BASE_FIX_SPEED = 6.0
_BASE_SAC_SPEED = 150.0
_FIX_SPEED_JITTER = 1.5
_SAC_SPEED_JITTER = 25.0
_DWELL_MS = (150.0, 400.0)
_JUMP_MS = (20.0, 60.0)
_EDGE_MARGIN_PX = 40.0


def _participant_walk(rng, spec: CohortSpec, fix_speed: float, sac_speed: float) -> tuple[np.ndarray, np.ndarray]:
    """Alternating dwell/jump velocity walk, integrated to pixel positions."""
    from .signal import deg_per_px  # runtime import only; signal depends on these types

    kx, ky = deg_per_px(spec.geometry)
    n = int(round(spec.duration_ms * spec.sample_rate_hz / 1000.0))
    dt_s = 1.0 / spec.sample_rate_hz
    geom = spec.geometry
    x = np.empty(n)
    y = np.empty(n)
    pos = np.array([geom.width_px / 2.0, geom.height_px / 2.0])
    px_per_deg = np.array([1.0 / kx, 1.0 / ky])
    lo = np.array([_EDGE_MARGIN_PX, _EDGE_MARGIN_PX])
    hi = np.array([geom.width_px - _EDGE_MARGIN_PX, geom.height_px - _EDGE_MARGIN_PX])

    i = 0
    dwelling = True
    heading = rng.uniform(0.0, 2.0 * np.pi)
    while i < n:
        if dwelling:
            length = int(max(1, round(rng.uniform(*_DWELL_MS) * spec.sample_rate_hz / 1000.0)))
            length = min(length, n - i)
            headings = heading + np.cumsum(rng.normal(0.0, 0.8, length))
            speeds = np.maximum(0.0, fix_speed + rng.normal(0.0, 0.25 * max(fix_speed, 1.0), length))
        else:
            length = int(max(1, round(rng.uniform(*_JUMP_MS) * spec.sample_rate_hz / 1000.0)))
            length = min(length, n - i)
            target = rng.uniform(lo, hi)
            direction = math.atan2(target[1] - pos[1], target[0] - pos[0])
            headings = np.full(length, direction) + rng.normal(0.0, 0.05, length)
            speeds = np.maximum(0.0, sac_speed + rng.normal(0.0, 0.1 * sac_speed, length))
        steps_deg = speeds * dt_s
        dx = np.cos(headings) * steps_deg * px_per_deg[0]
        dy = np.sin(headings) * steps_deg * px_per_deg[1]
        seg_x = pos[0] + np.cumsum(dx)
        seg_y = pos[1] + np.cumsum(dy)
        np.clip(seg_x, 0.0, geom.width_px - 1.0, out=seg_x)
        np.clip(seg_y, 0.0, geom.height_px - 1.0, out=seg_y)
        x[i : i + length] = seg_x
        y[i : i + length] = seg_y
        pos = np.array([seg_x[-1], seg_y[-1]])
        heading = headings[-1]
        i += length
        dwelling = not dwelling
    if spec.noise_sd_px > 0:
        x = x + rng.normal(0.0, spec.noise_sd_px, n)
        y = y + rng.normal(0.0, spec.noise_sd_px, n)
    return x, y


def generate_synthetic_cohort(spec: CohortSpec) -> list[GazeTrajectory]:
    """Generate a balanced, seeded synthetic cohort.

    Each participant alternates low-speed dwell phases and ballistic jump
    phases, so I-VT segmentation finds fixations and saccades for every
    trajectory. Per-class speed offsets from ``spec.class_effect`` are added
    to the phase mean speeds, which makes downstream separability
    controllable. Fixed seeds reproduce the cohort bit for bit.
    """
    cohort = []
    period_ms = 1000.0 / spec.sample_rate_hz
    for idx in range(spec.n_participants):
        gender = FEMALE if idx % 2 == 0 else MALE
        offsets = spec.class_effect.get(gender, {})
        rng = np.random.default_rng([spec.seed, idx])
        fix_speed = _BASE_FIX_SPEED + rng.uniform(-_FIX_SPEED_JITTER, _FIX_SPEED_JITTER)
        sac_speed = _BASE_SAC_SPEED + rng.uniform(-_SAC_SPEED_JITTER, _SAC_SPEED_JITTER)
        fix_speed += offsets.get("fixation_speed", 0.0)
        sac_speed += offsets.get("saccade_speed", 0.0)
        x, y = _participant_walk(rng, spec, fix_speed, sac_speed)
        t = np.arange(len(x)) * period_ms
        cohort.append(GazeTrajectory(f"p{idx:04d}", gender, t, x, y, spec.sample_rate_hz))
    return cohort
