"""Line-of-sight matrices and dilution of precision."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .coretypes import RobotId, TimedPlan

SINGULAR_PENALTY = 1e6
COND_LIMIT = 1e12
COINCIDENT_TOL = 1e-9


def los_matrix(vantage, neighbors) -> np.ndarray:
    """Unit vectors from ``vantage`` toward each neighbor, one per row.

    Neighbors closer than 1e-9 m are skipped; the result may be empty.
    """
    pts = np.asarray(neighbors, dtype=float).reshape(-1, 2)
    d = pts - np.asarray(vantage, dtype=float)
    r = np.linalg.norm(d, axis=1)
    keep = r >= COINCIDENT_TOL
    return d[keep] / r[keep, None]


def dop(A, singular_penalty: float = SINGULAR_PENALTY) -> float:
    """``sqrt(trace((A^T A)^-1))``, or ``singular_penalty`` if ill-conditioned."""
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    if A.shape[0] < 2:
        return singular_penalty
    G = A.T @ A
    if not np.linalg.cond(G) < COND_LIMIT:
        return singular_penalty
    return float(np.sqrt(np.trace(np.linalg.inv(G))))


def vantage_dops(positions, singular_penalty: float = SINGULAR_PENALTY) -> np.ndarray:
    """DOP seen from every robot toward all the others.

    ``positions`` has shape ``(..., N, 2)``; the result has shape ``(..., N)``.
    Uses the closed-form 2x2 inverse, vectorized over leading axes.
    """
    P = np.asarray(positions, dtype=float)
    d = P[..., None, :, :] - P[..., :, None, :]  # (..., vantage, other, 2)
    r = np.sqrt(np.sum(d * d, axis=-1))
    valid = r >= COINCIDENT_TOL
    safe_r = np.where(valid, r, 1.0)
    u = np.where(valid[..., None], d / safe_r[..., None], 0.0)
    a = np.sum(u[..., 0] ** 2, axis=-1)
    b = np.sum(u[..., 0] * u[..., 1], axis=-1)
    c = np.sum(u[..., 1] ** 2, axis=-1)
    half_tr = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    lam_max = half_tr + rad
    lam_min = half_tr - rad
    count = np.sum(valid, axis=-1)
    ok = (count >= 2) & (lam_min > 0) & (lam_max < COND_LIMIT * np.where(lam_min > 0, lam_min, 0.0))
    det = np.where(ok, a * c - b * b, 1.0)
    out = np.sqrt(np.where(ok, (a + c) / det, 1.0))
    return np.where(ok, out, singular_penalty)


def swarm_dop_sum(positions, singular_penalty: float = SINGULAR_PENALTY) -> np.ndarray:
    """Sum of per-robot DOP over the swarm; shape ``(..., N, 2) -> (...)``."""
    return vantage_dops(positions, singular_penalty).sum(axis=-1)


def swarm_dop_cost(
    candidate_plan: TimedPlan,
    neighbor_plans: Sequence[TimedPlan],
    self_id: RobotId,
    grid_times=None,
    singular_penalty: float = SINGULAR_PENALTY,
) -> float:
    """Max over synchronized timesteps of the swarm DOP sum.

    ``candidate_plan`` stands in for ``self_id``'s own plan; any neighbor
    plan carrying the same id is ignored. With no ``grid_times`` the
    candidate plan's own timestamps are used.
    """
    from .swarmnet import synchronize_plans

    plans = [candidate_plan] + [p for p in neighbor_plans if p.robot_id != self_id]
    if grid_times is None:
        grid_times = candidate_plan.times
    pos = synchronize_plans(plans, grid_times)  # (N, T, 2)
    return float(np.max(swarm_dop_sum(np.swapaxes(pos, 0, 1), singular_penalty)))
