"""Simulated visual odometry, UWB mesh ranging and sun-sensor heading."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .coretypes import (
    Bounds,
    Pose2D,
    RangeMeasurement,
    RobotId,
    VelocityCommand,
    VoMeasurement,
    YawMeasurement,
    wrap_angle,
)

# Reported variance floor so noise-free sensors still give a usable R.
MIN_VARIANCE = 1e-10


@dataclass
class NoiseMap:
    """Grid of VO noise scale factors over the workspace.

    ``scale[row, col]`` covers the cell whose lower-left corner is
    ``origin + (col, row) * cell_size``.
    """

    scale: np.ndarray
    cell_size: float
    origin: Tuple[float, float]
    base_sigma: float = 0.05
    velocity_gain: float = 0.25

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        if self.scale.ndim != 2 or self.scale.size == 0:
            raise ValueError("noise map scale must be a non-empty 2D grid")
        if np.any(self.scale < 0):
            raise ValueError("noise map scale factors must be >= 0")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    def scale_at(self, position) -> float:
        """Scale factor of the cell containing ``position`` (clamped to the grid)."""
        rows, cols = self.scale.shape
        col = int(math.floor((position[0] - self.origin[0]) / self.cell_size))
        row = int(math.floor((position[1] - self.origin[1]) / self.cell_size))
        col = min(max(col, 0), cols - 1)
        row = min(max(row, 0), rows - 1)
        return float(self.scale[row, col])

    @classmethod
    def uniform(cls, bounds: Bounds, scale: float = 1.0, cell_size: float = 0.1, **kw) -> "NoiseMap":
        return build_noise_map(bounds, [], default_scale=scale, cell_size=cell_size, **kw)


def build_noise_map(
    bounds: Bounds,
    patches: Sequence[Tuple[Tuple[float, float], float, float]],
    default_scale: float = 1.0,
    cell_size: float = 0.1,
    base_sigma: float = 0.05,
    velocity_gain: float = 0.25,
) -> NoiseMap:
    """Rasterize circular ``(center, radius, scale)`` patches onto a grid.

    A cell belongs to a patch when its center lies inside the circle. Later
    patches overwrite earlier ones.
    """
    cols = max(1, int(math.ceil((bounds.xmax - bounds.xmin) / cell_size - 1e-9)))
    rows = max(1, int(math.ceil((bounds.ymax - bounds.ymin) / cell_size - 1e-9)))
    grid = np.full((rows, cols), float(default_scale))
    cx = bounds.xmin + (np.arange(cols) + 0.5) * cell_size
    cy = bounds.ymin + (np.arange(rows) + 0.5) * cell_size
    X, Y = np.meshgrid(cx, cy)
    for center, radius, scale in patches:
        if radius <= 0:
            raise ValueError(f"patch radius must be positive, got {radius}")
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius**2
        grid[inside] = float(scale)
    return NoiseMap(grid, cell_size, (bounds.xmin, bounds.ymin), base_sigma, velocity_gain)


@dataclass
class SensorConfig:
    uwb_sigma: float = 0.05
    sun_sigma: float = 0.02
    vo_base_sigma: float = 0.05
    vo_velocity_gain: float = 0.25
    noise_patches: List[Tuple[Tuple[float, float], float, float]] = field(default_factory=list)
    noise_default_scale: float = 1.0
    noise_cell_size: float = 0.1

    def __post_init__(self):
        for name in ("uwb_sigma", "sun_sigma", "vo_base_sigma", "vo_velocity_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def noise_map(self, bounds: Bounds) -> NoiseMap:
        return build_noise_map(
            bounds,
            self.noise_patches,
            default_scale=self.noise_default_scale,
            cell_size=self.noise_cell_size,
            base_sigma=self.vo_base_sigma,
            velocity_gain=self.vo_velocity_gain,
        )


def vo_noise_sigma(position, speed_sum: float, noise_map: NoiseMap) -> float:
    """VO position noise sd: local scale times an affine function of speed."""
    if speed_sum < 0:
        raise ValueError("speed_sum must be >= 0")
    return noise_map.scale_at(position) * (
        noise_map.base_sigma + noise_map.velocity_gain * speed_sum
    )


def simulate_vo(
    true_pose: Pose2D,
    cmd: VelocityCommand,
    noise_map: NoiseMap,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> VoMeasurement:
    sigma = vo_noise_sigma(true_pose.xy, abs(cmd.v) + abs(cmd.omega), noise_map)
    dx, dy = rng.normal(0.0, 1.0, size=2) * sigma
    return VoMeasurement(
        true_pose.x + dx, true_pose.y + dy, max(sigma * sigma, MIN_VARIANCE), timestamp
    )


def simulate_uwb_ranges(
    true_positions: Dict[RobotId, Tuple[float, float]],
    self_id: RobotId,
    sigma: float,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> List[RangeMeasurement]:
    """Mesh ranging: one measurement from ``self_id`` to every other robot."""
    if self_id not in true_positions:
        raise KeyError(f"robot {self_id} has no true position")
    sx, sy = true_positions[self_id]
    out = []
    for rid in sorted(true_positions):
        if rid == self_id:
            continue
        ox, oy = true_positions[rid]
        r = math.hypot(ox - sx, oy - sy) + rng.normal(0.0, 1.0) * sigma
        out.append(
            RangeMeasurement(self_id, rid, max(r, 0.0), max(sigma * sigma, MIN_VARIANCE), timestamp)
        )
    return out


def simulate_sun_sensor(
    true_yaw: float, sigma: float, rng: np.random.Generator, timestamp: float = 0.0
) -> YawMeasurement:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    yaw = wrap_angle(true_yaw + rng.normal(0.0, 1.0) * sigma)
    return YawMeasurement(yaw, max(sigma * sigma, MIN_VARIANCE), timestamp)
