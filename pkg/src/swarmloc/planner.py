"""Sampling waypoint planner trading goal progress against swarm geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .coretypes import Bounds, Pose2D, RobotId, TimedPlan
from .estimator import EkfState, NeighborEstimate, scalar_uncertainty
from .geometry import SINGULAR_PENALTY, swarm_dop_sum
from .swarmnet import Neighbor, synchronize_plans


@dataclass
class PlannerConfig:
    candidate_count: int = 64
    sample_radius: float = 1.0
    d_avoid: float = 0.4
    epsilon: float = 1e-6
    plan_horizon: float = 5.0
    plan_dt: float = 0.5
    replan_period: float = 2.0
    singular_penalty: float = SINGULAR_PENALTY
    alpha_override: Optional[float] = None
    v_max: float = 0.3
    goal_tolerance: float = 0.15
    staleness_window: float = 5.0

    def __post_init__(self):
        if self.candidate_count < 4:
            raise ValueError("candidate_count must be >= 4")
        if self.sample_radius <= 0 or self.d_avoid <= 0:
            raise ValueError("sample_radius and d_avoid must be positive")
        if self.plan_dt <= 0 or self.plan_horizon < self.plan_dt or self.v_max <= 0:
            raise ValueError("need plan_dt > 0, plan_horizon >= plan_dt and v_max > 0")
        if self.alpha_override is not None and not 0.0 <= self.alpha_override <= 1.0:
            raise ValueError("alpha_override must lie in [0, 1]")

    @property
    def plan_steps(self) -> int:
        return int(round(self.plan_horizon / self.plan_dt))


@dataclass
class CandidateEvaluation:
    waypoint: Tuple[float, float]
    c_goal_raw: float
    c_goal: float
    c_collision: float
    c_dop_raw: float
    c_dop: float
    alpha: float
    beta: float
    c_total: float
    plan: TimedPlan

    def to_dict(self) -> dict:
        return {
            "waypoint": list(self.waypoint),
            "c_goal_raw": self.c_goal_raw,
            "c_goal": self.c_goal,
            "c_collision": self.c_collision,
            "c_dop_raw": self.c_dop_raw,
            "c_dop": self.c_dop,
            "alpha": self.alpha,
            "beta": self.beta,
            "c_total": self.c_total,
        }


def total_cost(alpha, beta, c_dop, c_goal, c_collision):
    return alpha * c_dop + beta * c_goal + c_collision


def sample_candidates(
    current: Pose2D,
    goal,
    cfg: PlannerConfig,
    bounds: Bounds,
    rng: np.random.Generator,
) -> np.ndarray:
    """Candidate waypoints, shape ``(candidate_count + 2, 2)``.

    Row 0 is the current position, row 1 the point toward the goal at
    ``min(sample_radius, distance to goal)``, the rest are uniform in the
    sampling disc. Everything is clipped to ``bounds``.
    """
    here = np.array([current.x, current.y])
    to_goal = np.asarray(goal, dtype=float) - here
    dist = float(np.hypot(*to_goal))
    toward = here + (to_goal / dist * min(cfg.sample_radius, dist) if dist > 0 else 0.0)
    r = cfg.sample_radius * np.sqrt(rng.random(cfg.candidate_count))
    th = 2.0 * np.pi * rng.random(cfg.candidate_count)
    disc = here + np.column_stack([r * np.cos(th), r * np.sin(th)])
    return bounds.clip_array(np.vstack([here, toward, disc]))


def _plan_positions(start, waypoints, cfg: PlannerConfig) -> np.ndarray:
    """Straight-line constant-speed positions at ``k * plan_dt``, ``k = 0..plan_steps``."""
    start = np.asarray(start, dtype=float)
    wps = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    delta = wps - start
    dist = np.hypot(delta[:, 0], delta[:, 1])
    travel = np.arange(cfg.plan_steps + 1) * cfg.v_max * cfg.plan_dt
    s = np.minimum(travel[None, :], dist[:, None])
    unit = np.divide(delta, dist[:, None], out=np.zeros_like(delta), where=dist[:, None] > 0)
    return start + s[..., None] * unit[:, None, :]


def local_plan(
    current: Pose2D,
    waypoint,
    cfg: PlannerConfig,
    t0: float = 0.0,
    robot_id: RobotId = 0,
    plan_epoch: int = 0,
) -> TimedPlan:
    """Drive straight at ``v_max`` to ``waypoint``, then hold until the horizon ends."""
    pos = _plan_positions(current.xy, waypoint, cfg)[0]
    times = t0 + np.arange(cfg.plan_steps + 1) * cfg.plan_dt
    return TimedPlan(robot_id, tuple(zip(times, pos[:, 0], pos[:, 1])), plan_epoch)


def goal_cost(candidates, goal) -> np.ndarray:
    raw = np.linalg.norm(np.asarray(candidates, dtype=float).reshape(-1, 2) - np.asarray(goal, dtype=float), axis=1)
    top = raw.max()
    return raw / top if top > 0 else np.zeros_like(raw)


def _collision_from_positions(self_pos, neighbor_pos, cfg: PlannerConfig) -> np.ndarray:
    """``self_pos`` (C, T, 2), ``neighbor_pos`` (M, T, 2) -> (C,)."""
    if neighbor_pos.shape[0] == 0:
        return np.zeros(self_pos.shape[0])
    d = self_pos[:, None, :, :] - neighbor_pos[None, :, :, :]
    d_min = np.sqrt(np.sum(d * d, axis=-1)).min(axis=(1, 2))
    return cfg.d_avoid / (d_min + cfg.epsilon)


def collision_cost(
    candidate_plan: TimedPlan,
    neighbor_plans: Sequence[TimedPlan],
    cfg: PlannerConfig,
    grid_times=None,
) -> float:
    """``d_avoid / (d_min + eps)`` with ``d_min`` over the synchronized grid; 0 with no neighbors."""
    if not neighbor_plans:
        return 0.0
    if grid_times is None:
        grid_times = candidate_plan.times
    pos = synchronize_plans([candidate_plan] + list(neighbor_plans), grid_times)
    return float(_collision_from_positions(pos[:1], pos[1:], cfg)[0])


def dop_cost_normalized(raw) -> np.ndarray:
    """Divide by the lower median so at least half the costs are <= 1."""
    raw = np.asarray(raw, dtype=float)
    med = np.sort(raw)[(len(raw) - 1) // 2]
    return raw / med if med > 0 else np.zeros_like(raw)


def alpha_weight(sigma_max: float, cfg: Optional[PlannerConfig] = None) -> Tuple[float, float]:
    if cfg is not None and cfg.alpha_override is not None:
        a = float(cfg.alpha_override)
        return a, 1.0 - a
    if sigma_max < 0:
        raise ValueError("sigma_max must be >= 0")
    a = 1.0 / (1.0 + math.exp(5.0 - 10.0 * sigma_max))
    return a, 1.0 - a


def sigma_max(
    self_state: EkfState,
    neighbor_estimates: Sequence[NeighborEstimate],
    now: Optional[float] = None,
    staleness_window: Optional[float] = None,
) -> float:
    """Largest scalar uncertainty among self and (non-stale) neighbors."""
    values = [scalar_uncertainty(self_state)]
    for n in neighbor_estimates:
        if now is not None and staleness_window is not None and now - n.timestamp > staleness_window:
            continue
        values.append(n.scalar_uncertainty)
    return max(values)


def future_grid(t0: float, cfg: PlannerConfig) -> np.ndarray:
    """Synchronized future timesteps ``t0 + k * plan_dt``, ``k = 1..plan_steps``."""
    return t0 + np.arange(1, cfg.plan_steps + 1) * cfg.plan_dt


@dataclass
class PlanResult:
    waypoint: Tuple[float, float]
    plan: TimedPlan
    evaluations: List[CandidateEvaluation]
    chosen: int
    alpha: float
    beta: float


def select_waypoint(
    current: Pose2D,
    goal,
    self_state: EkfState,
    neighbors: Sequence[Neighbor],
    cfg: PlannerConfig,
    bounds: Bounds,
    rng: np.random.Generator,
    now: float = 0.0,
    robot_id: RobotId = 0,
    plan_epoch: int = 0,
    use_dop: bool = True,
) -> PlanResult:
    """Pick the candidate waypoint with the lowest combined cost.

    ``use_dop=False`` forces alpha to 0 and skips the DOP evaluation, which is
    how the naive planner keeps its collision safety term.
    """
    cands = sample_candidates(current, goal, cfg, bounds, rng)
    n_c = len(cands)
    grid = future_grid(now, cfg)
    self_pos = _plan_positions(current.xy, cands, cfg)[:, 1:, :]  # (C, T, 2)

    nb_plans = [n.plan for n in neighbors]
    fallback = {n.estimate.robot_id: n.estimate.xy for n in neighbors}
    nb_pos = synchronize_plans(nb_plans, grid, fallback) if nb_plans else np.zeros((0, len(grid), 2))

    goal_raw = np.linalg.norm(cands - np.asarray(goal, dtype=float), axis=1)
    c_goal = goal_cost(cands, goal)
    c_col = _collision_from_positions(self_pos, nb_pos, cfg)

    if use_dop:
        alpha, beta = alpha_weight(
            sigma_max(self_state, [n.estimate for n in neighbors]), cfg
        )
        swarm = np.concatenate(
            [self_pos[:, None], np.broadcast_to(nb_pos[None], (n_c,) + nb_pos.shape)], axis=1
        )  # (C, N, T, 2)
        sums = swarm_dop_sum(np.swapaxes(swarm, 1, 2), cfg.singular_penalty)  # (C, T)
        dop_raw = sums.max(axis=1)
        c_dop = dop_cost_normalized(dop_raw)
    else:
        alpha, beta = 0.0, 1.0
        dop_raw = np.zeros(n_c)
        c_dop = np.zeros(n_c)

    c_total = total_cost(alpha, beta, c_dop, c_goal, c_col)
    order = np.lexsort((np.arange(n_c), c_goal, c_total))
    best = int(order[0])

    times = np.concatenate([[now], grid])
    evals = []
    for i in range(n_c):
        xs = np.concatenate([[current.x], self_pos[i, :, 0]])
        ys = np.concatenate([[current.y], self_pos[i, :, 1]])
        plan = TimedPlan(robot_id, tuple(zip(times, xs, ys)), plan_epoch)
        evals.append(
            CandidateEvaluation(
                (float(cands[i, 0]), float(cands[i, 1])),
                float(goal_raw[i]),
                float(c_goal[i]),
                float(c_col[i]),
                float(dop_raw[i]),
                float(c_dop[i]),
                alpha,
                beta,
                float(c_total[i]),
                plan,
            )
        )
    return PlanResult(evals[best].waypoint, evals[best].plan, evals, best, alpha, beta)


def naive_plan(
    current: Pose2D,
    goal,
    cfg: PlannerConfig,
    t0: float = 0.0,
    robot_id: RobotId = 0,
    plan_epoch: int = 0,
) -> TimedPlan:
    """Head straight for the goal, ignoring geometry and neighbors."""
    return local_plan(current, goal, cfg, t0, robot_id, plan_epoch)
