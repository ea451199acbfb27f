"""Decentralized state/plan broadcasting, neighbor tables and plan synchronization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .coretypes import RobotId, TimedPlan
from .estimator import NeighborEstimate

log = logging.getLogger(__name__)

MESSAGE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class StateBroadcast:
    robot_id: RobotId
    x: float
    y: float
    scalar_uncertainty: float
    plan: TimedPlan
    sent_at: float

    def __post_init__(self):
        if len(self.plan) == 0:
            raise ValueError("broadcast plan must be non-empty")

    def to_dict(self) -> dict:
        """Versioned record layout used in traces."""
        return {
            "schema": MESSAGE_SCHEMA_VERSION,
            "robot_id": self.robot_id,
            "x": self.x,
            "y": self.y,
            "scalar_uncertainty": self.scalar_uncertainty,
            "sent_at": self.sent_at,
            "plan": self.plan.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateBroadcast":
        if d.get("schema") != MESSAGE_SCHEMA_VERSION:
            raise ValueError(f"unsupported message schema {d.get('schema')!r}")
        return cls(
            int(d["robot_id"]),
            float(d["x"]),
            float(d["y"]),
            float(d["scalar_uncertainty"]),
            TimedPlan.from_dict(d["plan"]),
            float(d["sent_at"]),
        )

    def as_estimate(self) -> NeighborEstimate:
        return NeighborEstimate(self.robot_id, self.x, self.y, self.scalar_uncertainty, self.sent_at)


@dataclass
class NeighborTable:
    """Latest broadcast per peer plus the time it arrived."""

    entries: Dict[RobotId, Tuple[StateBroadcast, float]] = field(default_factory=dict)

    def receive(self, msg: StateBroadcast, now: float) -> None:
        prev = self.entries.get(msg.robot_id)
        if prev is not None and prev[0].sent_at > msg.sent_at:
            return
        self.entries[msg.robot_id] = (msg, now)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Neighbor:
    estimate: NeighborEstimate
    plan: TimedPlan
    received_at: float


def neighbor_set(table: NeighborTable, now: float, staleness_window: float = 5.0) -> List[Neighbor]:
    """Peers heard from within ``staleness_window`` seconds (inclusive), by id."""
    out = []
    for rid in sorted(table.entries):
        msg, received = table.entries[rid]
        if now - received <= staleness_window:
            out.append(Neighbor(msg.as_estimate(), msg.plan, received))
    return out


class MessageBus:
    """All-to-all broadcast channel with optional fixed delay and random drops.

    In lockstep use, call :meth:`deliver` once per step after every agent has
    broadcast; messages whose delivery time has come are handed to the
    receivers in (send time, sender id, receiver id) order.
    """

    def __init__(self, delay: float = 0.0, drop_rate: float = 0.0, rng: Optional[np.random.Generator] = None):
        if delay < 0 or not 0.0 <= drop_rate <= 1.0:
            raise ValueError("bus delay must be >= 0 and drop_rate in [0, 1]")
        self.delay = delay
        self.drop_rate = drop_rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.tables: Dict[RobotId, NeighborTable] = {}
        self._pending: List[Tuple[float, RobotId, RobotId, StateBroadcast]] = []
        self.delivered = 0
        self.dropped = 0

    def register(self, robot_id: RobotId) -> NeighborTable:
        return self.tables.setdefault(robot_id, NeighborTable())

    def unregister(self, robot_id: RobotId) -> None:
        self.tables.pop(robot_id, None)
        self._pending = [p for p in self._pending if p[2] != robot_id]

    def broadcast(self, msg: StateBroadcast) -> None:
        for rid in sorted(self.tables):
            if rid == msg.robot_id:
                continue
            # one draw per link keeps the RNG stream independent of drop_rate
            if self.rng.random() < self.drop_rate:
                self.dropped += 1
                continue
            self._pending.append((msg.sent_at + self.delay, msg.robot_id, rid, msg))

    def deliver(self, now: float, eps: float = 1e-9) -> int:
        due = [p for p in self._pending if p[0] <= now + eps]
        self._pending = [p for p in self._pending if p[0] > now + eps]
        due.sort(key=lambda p: (p[3].sent_at, p[1], p[2]))
        for t_due, _, rid, msg in due:
            table = self.tables.get(rid)
            if table is not None:
                table.receive(msg, t_due)
        self.delivered += len(due)
        return len(due)


def broadcast(robot_id, x, y, scalar_uncertainty, plan: TimedPlan, now: float, bus: MessageBus) -> StateBroadcast:
    msg = StateBroadcast(robot_id, float(x), float(y), float(scalar_uncertainty), plan, float(now))
    bus.broadcast(msg)
    return msg


def make_grid(start: float, dt: float, steps: int) -> np.ndarray:
    if dt <= 0:
        raise ValueError("grid dt must be positive")
    return start + dt * np.arange(steps)


def synchronize_plans(
    plans: Sequence[TimedPlan],
    grid_times,
    fallback_positions: Optional[Dict[RobotId, Tuple[float, float]]] = None,
) -> np.ndarray:
    """Interpolate every plan onto ``grid_times``; shape ``(len(plans), T, 2)``.

    Plans hold their first point before they start and their last point
    after they end. An empty plan uses ``fallback_positions[robot_id]``.
    """
    grid = np.asarray(grid_times, dtype=float)
    out = np.empty((len(plans), len(grid), 2))
    for k, plan in enumerate(plans):
        if len(plan) == 0:
            if not fallback_positions or plan.robot_id not in fallback_positions:
                raise ValueError(f"empty plan for robot {plan.robot_id} and no fallback position")
            out[k] = np.asarray(fallback_positions[plan.robot_id], dtype=float)
            continue
        t = plan.times
        xy = plan.xy
        out[k, :, 0] = np.interp(grid, t, xy[:, 0])
        out[k, :, 1] = np.interp(grid, t, xy[:, 1])
    return out
