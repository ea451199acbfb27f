"""Per-robot loosely-coupled EKF over (x, y, yaw).

Neighbor positions enter the range model as known constants; only the
robot's own pose is estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .sensors import MIN_VARIANCE
from .coretypes import (
    MeasurementBundle,
    Pose2D,
    RobotId,
    VelocityCommand,
    validate_covariance,
    wrap_angle,
)

COINCIDENT_TOL = 1e-9
# chi-square, 3 dof, 0.997 quantile
DEFAULT_GATE = 13.8


@dataclass(frozen=True)
class EkfState:
    mean: Pose2D
    covariance: np.ndarray
    last_update_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "covariance", validate_covariance(self.covariance))


@dataclass(frozen=True)
class NeighborEstimate:
    robot_id: RobotId
    x: float
    y: float
    scalar_uncertainty: float
    timestamp: float

    def __post_init__(self):
        if self.scalar_uncertainty < 0:
            raise ValueError("scalar_uncertainty must be >= 0")

    @property
    def xy(self) -> Tuple[float, float]:
        return (self.x, self.y)


def default_process_noise() -> np.ndarray:
    return np.diag([1e-4, 1e-4, 1e-5])


@dataclass
class NoiseConfig:
    """Process noise (per second) and update options.

    Measurement variances come from each measurement's own report.
    """

    Q: np.ndarray = field(default_factory=default_process_noise)
    gating: bool = True
    gate_threshold: float = DEFAULT_GATE

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.shape != (3, 3) or np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))[0] < -1e-12:
            raise ValueError("Q must be a 3x3 PSD matrix")


def predict(state: EkfState, cmd: VelocityCommand, dt: float, Q=None) -> EkfState:
    """Propagate the mean through the unicycle model and linearize for the covariance."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    Q = default_process_noise() if Q is None else np.asarray(Q, dtype=float)
    m = state.mean
    c, s = math.cos(m.yaw), math.sin(m.yaw)
    mean = Pose2D(m.x + cmd.v * dt * c, m.y + cmd.v * dt * s, m.yaw + cmd.omega * dt)
    F = np.eye(3)
    F[0, 2] = -cmd.v * dt * s
    F[1, 2] = cmd.v * dt * c
    P = F @ state.covariance @ F.T + Q * dt
    return EkfState(mean, P, state.last_update_time + dt)


def _usable(state: EkfState, neighbors: Sequence[NeighborEstimate]) -> List[NeighborEstimate]:
    m = state.mean
    return [n for n in neighbors if math.hypot(m.x - n.x, m.y - n.y) >= COINCIDENT_TOL]


def predicted_measurement(state: EkfState, neighbors: Sequence[NeighborEstimate]) -> np.ndarray:
    """``[r_1 .. r_n, x, y, yaw]`` in the given neighbor order, coincident neighbors dropped."""
    m = state.mean
    ranges = [math.hypot(m.x - n.x, m.y - n.y) for n in _usable(state, neighbors)]
    return np.array(ranges + [m.x, m.y, m.yaw])


def jacobian(state: EkfState, neighbors: Sequence[NeighborEstimate]) -> np.ndarray:
    m = state.mean
    rows = []
    for n in _usable(state, neighbors):
        r = math.hypot(m.x - n.x, m.y - n.y)
        rows.append([(m.x - n.x) / r, (m.y - n.y) / r, 0.0])
    rows.extend(np.eye(3).tolist())
    return np.array(rows)


def scalar_uncertainty(state: EkfState) -> float:
    P = state.covariance
    return math.sqrt(max(P[0, 0] + P[1, 1], 0.0))


def _kalman_step(mean, P, y, H, R):
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    new_mean = mean + K @ y
    IKH = np.eye(3) - K @ H
    new_P = IKH @ P @ IKH.T + K @ R @ K.T
    return new_mean, new_P


def update(
    state: EkfState,
    bundle: MeasurementBundle,
    neighbors: Sequence[NeighborEstimate],
    noise: Optional[NoiseConfig] = None,
) -> EkfState:
    """Fuse one measurement bundle.

    Ranges are paired with neighbor estimates by robot id; ranges without a
    matching neighbor, and neighbors without a range, are ignored. Rows are
    processed in robot-id order so the result does not depend on the order
    of ``neighbors``.
    """
    noise = noise or NoiseConfig()
    m = state.mean
    P = state.covariance
    x = m.as_array()

    by_id = {n.robot_id: n for n in _usable(state, neighbors)}
    pairs = []
    for meas in sorted(bundle.ranges, key=lambda r: r.to_id):
        n = by_id.get(meas.to_id)
        if n is not None:
            pairs.append((meas, n))

    z, h, H_rows, var = [], [], [], []
    for meas, n in pairs:
        r = math.hypot(m.x - n.x, m.y - n.y)
        z.append(meas.range)
        h.append(r)
        H_rows.append([(m.x - n.x) / r, (m.y - n.y) / r, 0.0])
        var.append(meas.variance)
    n_range = len(z)
    if bundle.vo is not None:
        z += [bundle.vo.x, bundle.vo.y]
        h += [m.x, m.y]
        H_rows += [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
        var += [bundle.vo.variance, bundle.vo.variance]
    yaw_row = None
    if bundle.sun is not None:
        yaw_row = len(z)
        z.append(bundle.sun.yaw)
        h.append(m.yaw)
        H_rows.append([0.0, 0.0, 1.0])
        var.append(bundle.sun.variance)
    if not z:
        return state

    z = np.array(z)
    H = np.array(H_rows)
    # exact sensors would make S singular once P has collapsed
    R = np.diag(np.maximum(var, MIN_VARIANCE))
    y = z - np.array(h)
    if yaw_row is not None:
        y[yaw_row] = wrap_angle(y[yaw_row])

    if noise.gating and n_range:
        S_diag = np.einsum("ij,jk,ik->i", H[:n_range], P, H[:n_range]) + R.diagonal()[:n_range]
        nis = y[:n_range] ** 2 / S_diag
        keep = np.concatenate([nis <= noise.gate_threshold, np.ones(len(z) - n_range, bool)])
        if not keep.all():
            H, y, R = H[keep], y[keep], R[np.ix_(keep, keep)]
        if len(y) == 0:
            return state

    new_x, new_P = _kalman_step(x, P, y, H, R)
    return EkfState(Pose2D.from_array(new_x), validate_covariance(new_P), state.last_update_time)
