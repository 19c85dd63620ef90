"""Benchmark metrics over trajectory batches: success, collision intensity,
path length, and waypoint variance (a multimodality proxy).
"""

from __future__ import annotations

import numpy as np

from .geometry import config_collides, configs_collide
from .trajectory import Trajectory


def waypoint_in_collision(env, robot, q) -> bool:
    return config_collides(env, robot, q)


def trajectory_collision_mask(env, robot, traj: Trajectory):
    """Boolean per-waypoint collision flags."""
    return configs_collide(env, robot, traj.positions)


def metric_success(batch, env, robot) -> int:
    """1 iff at least one trajectory in the batch is entirely collision-free."""
    if not batch:
        raise ValueError("empty batch")
    for traj in batch:
        if not np.any(trajectory_collision_mask(env, robot, traj)):
            return 1
    return 0


def metric_intensity(batch, env, robot) -> float:
    """Fraction of colliding waypoints pooled over the whole batch."""
    if not batch:
        raise ValueError("empty batch")
    bad = 0
    total = 0
    for traj in batch:
        mask = trajectory_collision_mask(env, robot, traj)
        bad += int(np.sum(mask))
        total += mask.size
    return bad / total


def metric_path_length(traj: Trajectory) -> float:
    """Sum of configuration-space segment lengths."""
    q = traj.positions
    return float(np.sum(np.linalg.norm(np.diff(q, axis=0), axis=1)))


def metric_waypoint_variance(batch) -> float:
    """Per-timestep population variance of all pairwise waypoint distances,
    summed along the trajectory."""
    if len(batch) < 2:
        raise ValueError("waypoint variance needs a batch of at least 2")
    H = batch[0].horizon
    positions = np.stack([t.positions for t in batch])  # (B, H, dof)
    total = 0.0
    for t in range(H):
        pts = positions[:, t]
        diffs = pts[:, None, :] - pts[None, :, :]
        dist = np.linalg.norm(diffs, axis=-1)
        iu = np.triu_indices(len(batch), k=1)
        total += float(np.var(dist[iu]))
    return total
