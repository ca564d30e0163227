"""Position smoothing and angular kinematics.

Positions are smoothed per coordinate channel with a Savitzky-Golay filter
(defaults: polynomial order 6, frame size 15) before any velocity is
computed. Velocities and accelerations are forward differences expressed in
degrees of visual angle per second, using small-angle per-pixel conversion
factors derived from the screen geometry.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.signal import savgol_filter

if TYPE_CHECKING:
    from .ingest import GazeTrajectory, ScreenGeometry


@dataclass(frozen=True)
class SmoothingConfig:
    poly_order: int = 6
    frame_size: int = 15

    def __post_init__(self):
        if self.poly_order < 0:
            raise ValueError("poly_order must be >= 0")
        if self.frame_size % 2 == 0 or self.frame_size <= self.poly_order:
            raise ValueError("frame_size must be odd and greater than poly_order")


@dataclass
class KinematicSeries:
    """Per-sample angular kinematics, index-aligned with the trajectory.

    ``v`` is angular speed (deg/s, non-negative), ``vx``/``vy`` its signed
    directional components; ``a`` is the signed rate of change of speed
    (deg/s^2) and ``ax``/``ay`` the forward differences of ``vx``/``vy``.
    Entries past the last defined forward difference repeat the final
    defined value so all arrays share the trajectory length.
    """

    v: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    a: np.ndarray
    ax: np.ndarray
    ay: np.ndarray

    def __len__(self) -> int:
        return len(self.v)


def savgol_smooth(values, config: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """Smooth one coordinate channel by local least-squares polynomial fit.

    Interior samples use the centered frame; at the boundaries the polynomial
    fitted to the first/last full frame is evaluated at the edge positions
    (standard polynomial extrapolation), so output length equals input length
    and sampled polynomials of degree <= poly_order are reproduced exactly.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("expected a 1-D coordinate sequence")
    if len(values) < config.frame_size:
        raise ValueError(
            f"too short to filter: {len(values)} samples < frame size {config.frame_size}"
        )
    return savgol_filter(values, config.frame_size, config.poly_order, mode="interp")


def smooth_trajectory(traj: GazeTrajectory, config: SmoothingConfig = SmoothingConfig()) -> GazeTrajectory:
    """Return a copy of the trajectory with both position channels smoothed."""
    return dataclasses.replace(
        traj,
        x_px=savgol_smooth(traj.x_px, config),
        y_px=savgol_smooth(traj.y_px, config),
    )


def deg_per_px(geometry: ScreenGeometry) -> tuple[float, float]:
    """Degrees of visual angle subtended per pixel at screen center.

    Uses the arctangent of one physical pixel pitch at the viewing distance;
    pixels are square under the single-diagonal geometry model, so the
    horizontal and vertical factors coincide.
    """
    k = math.degrees(math.atan(geometry.pixel_pitch_cm / geometry.viewing_distance_cm))
    return k, k


def kinematics(traj: GazeTrajectory, geometry: ScreenGeometry) -> KinematicSeries:
    """Forward-difference angular velocity and acceleration of a trajectory.

    vx[i] = kx * (x[i+1] - x[i]) / dt[i] and likewise vy; v is the Euclidean
    speed. Accelerations are forward differences of the defined velocity
    region. Trailing undefined entries repeat the last defined value.
    """
    n = len(traj)
    if n < 3:
        raise ValueError("trajectory too short: kinematics needs at least 3 samples")
    kx, ky = deg_per_px(geometry)
    dt_s = np.diff(traj.t_ms) / 1000.0
    vx = kx * np.diff(traj.x_px) / dt_s
    vy = ky * np.diff(traj.y_px) / dt_s

    # Velocities are defined at 0..n-2; accelerations at 0..n-3.
    ax = np.diff(vx) / dt_s[:-1]
    ay = np.diff(vy) / dt_s[:-1]
    v = np.hypot(vx, vy)
    a = np.diff(v) / dt_s[:-1]

    def _pad(arr: np.ndarray, total: int) -> np.ndarray:
        return np.concatenate([arr, np.full(total - len(arr), arr[-1])])

    return KinematicSeries(
        v=_pad(v, n),
        vx=_pad(vx, n),
        vy=_pad(vy, n),
        a=_pad(a, n),
        ax=_pad(ax, n),
        ay=_pad(ay, n),
    )
