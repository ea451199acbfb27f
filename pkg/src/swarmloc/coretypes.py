"""Shared value types for poses, covariances, commands and measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

RobotId = int

SYM_TOL = 1e-9
PSD_TOL = 1e-9


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def validate_covariance(M) -> np.ndarray:
    """Return a symmetric PSD 3x3 covariance.

    Symmetric matrices with no negative eigenvalue are returned unchanged
    (as a float copy). Otherwise the matrix is symmetrized and negative
    eigenvalues, however small, are clamped at zero.
    """
    M = np.array(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError(f"covariance must be 3x3, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("covariance has non-finite entries")
    if np.array_equal(M, M.T) and np.linalg.eigvalsh(M)[0] >= 0.0:
        return M
    S = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(S)
    if w[0] >= 0.0:
        return S
    w = np.clip(w, 0.0, None)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def xy(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Pose2D":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def distance_to(self, point) -> float:
        return math.hypot(self.x - point[0], self.y - point[1])


@dataclass(frozen=True)
class VelocityCommand:
    v: float = 0.0
    omega: float = 0.0

    def clamped(self, v_max: float, omega_max: float) -> "VelocityCommand":
        return VelocityCommand(
            min(max(self.v, -v_max), v_max), min(max(self.omega, -omega_max), omega_max)
        )


@dataclass(frozen=True)
class RangeMeasurement:
    from_id: RobotId
    to_id: RobotId
    range: float
    variance: float
    timestamp: float

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValueError("range measurement to self")
        if self.range < 0:
            raise ValueError(f"negative range {self.range}")


@dataclass(frozen=True)
class VoMeasurement:
    x: float
    y: float
    variance: float
    timestamp: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"VO variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class YawMeasurement:
    yaw: float
    variance: float
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass(frozen=True)
class MeasurementBundle:
    """One epoch of measurements for a single robot."""

    ranges: Tuple[RangeMeasurement, ...] = ()
    vo: Optional[VoMeasurement] = None
    sun: Optional[YawMeasurement] = None

    def range_to(self, robot_id: RobotId):
        for m in self.ranges:
            if m.to_id == robot_id:
                return m
        return None


@dataclass(frozen=True)
class TimedPlan:
    """Timestamped waypoints a robot has committed to.

    Points are ``(t, x, y)`` with strictly increasing ``t``.
    """

    robot_id: RobotId
    points: Tuple[Tuple[float, float, float], ...]
    plan_epoch: int = 0

    def __post_init__(self):
        pts = tuple((float(t), float(x), float(y)) for t, x, y in self.points)
        object.__setattr__(self, "points", pts)
        for (t0, _, _), (t1, _, _) in zip(pts, pts[1:]):
            if not t1 > t0:
                raise ValueError("plan timestamps must be strictly increasing")

    def __len__(self):
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def xy(self) -> np.ndarray:
        return np.array([(p[1], p[2]) for p in self.points]).reshape(-1, 2)

    @property
    def final(self) -> Tuple[float, float]:
        return self.points[-1][1:]

    def max_step(self) -> float:
        xy = self.xy
        if len(xy) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(np.diff(xy, axis=0), axis=1)))

    def to_dict(self) -> dict:
        return {
            "robot_id": self.robot_id,
            "plan_epoch": self.plan_epoch,
            "points": [list(p) for p in self.points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimedPlan":
        return cls(int(d["robot_id"]), tuple(tuple(p) for p in d["points"]), int(d["plan_epoch"]))


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned rectangular workspace."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate workspace bounds {self}")

    def contains(self, p, tol: float = 0.0) -> bool:
        return (
            self.xmin - tol <= p[0] <= self.xmax + tol
            and self.ymin - tol <= p[1] <= self.ymax + tol
        )

    def clip(self, p) -> Tuple[float, float]:
        return (
            min(max(float(p[0]), self.xmin), self.xmax),
            min(max(float(p[1]), self.ymin), self.ymax),
        )

    def clip_array(self, pts: np.ndarray) -> np.ndarray:
        out = np.array(pts, dtype=float)
        out[..., 0] = np.clip(out[..., 0], self.xmin, self.xmax)
        out[..., 1] = np.clip(out[..., 1], self.ymin, self.ymax)
        return out

    def as_list(self) -> List[float]:
        return [self.xmin, self.xmax, self.ymin, self.ymax]

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "Bounds":
        xmin, xmax, ymin, ymax = (float(v) for v in seq)
        return cls(xmin, xmax, ymin, ymax)
