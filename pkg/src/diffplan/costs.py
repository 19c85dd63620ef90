"""Differentiable task costs: collision, self-collision, joint limits,
end-effector pose, GP smoothness, and their weighted aggregation into the
guidance vector used by the guided sampler.

All waypoint costs are summed along the trajectory; gradients are exact and
verified against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Environment, Pose3, RobotModel, fk_jacobian, forward_kinematics
from .trajectory import GpParams, Trajectory, gp_cost, gp_cost_grad


# ---------------------------------------------------------------------------
# SO(3) / SE(3)


def so3_exp_map(w):
    """Rodrigues' formula: axis-angle 3-vector to rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if theta < 1e-10:
        return np.eye(3) + K + 0.5 * K @ K
    A = np.sin(theta) / theta
    B = (1 - np.cos(theta)) / theta ** 2
    return np.eye(3) + A * K + B * K @ K


def so3_log_map(R):
    """Axis-angle 3-vector of a rotation matrix, with angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0:
        raise ValueError("input is not orthonormal")
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-6:
        # first-order: R ~ I + [w]_x
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; extract the axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from the off-diagonal terms, anchored at the largest component
        k = int(np.argmax(axis))
        axis = A[k] / axis[k]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * w


def se3_distance(T1: Pose3, T2: Pose3) -> float:
    """Squared translation distance plus rotation angle."""
    dp = T1.position - T2.position
    ang = np.linalg.norm(so3_log_map(T1.rotation.T @ T2.rotation))
    return float(dp @ dp + ang)


# ---------------------------------------------------------------------------
# Waypoint costs (scalar + gradient w.r.t. q or [q, qdot])


def collision_cost(env: Environment, robot: RobotModel, q, margin=0.03):
    """Hinge on sphere clearance, averaged over the K collision spheres."""
    centers, _ = forward_kinematics(robot, q)
    radii = robot.sphere_radii
    d = geometry.sdf_eval(env, centers) - radii
    active = d <= margin
    cost = float(np.sum(np.where(active, -d + margin, 0.0))) / robot.n_spheres
    grad = np.zeros(robot.dof)
    if np.any(active):
        jacs, _ = fk_jacobian(robot, q)
        g_x = geometry.sdf_grad(env, centers)  # (K, 2)
        for k in np.flatnonzero(active):
            grad -= g_x[k] @ jacs[k]
        grad /= robot.n_spheres
    return cost, grad


def collision_cost_trajectory(env: Environment, robot: RobotModel, qs, margin=0.03):
    """Batched collision hinge over a (H, dof) array of configurations.

    Same value/gradient as summing collision_cost per waypoint, but with one
    vectorized SDF evaluation over all collision spheres of all waypoints.
    """
    qs = np.asarray(qs, dtype=float)
    H = qs.shape[0]
    K = robot.n_spheres
    centers = geometry.sphere_centers(robot, qs)  # (H, K, 2)
    d = geometry.sdf_eval(env, centers.reshape(H * K, -1)).reshape(H, K) - robot.sphere_radii
    active = d <= margin
    costs = np.sum(np.where(active, -d + margin, 0.0), axis=1) / K
    grads = np.zeros((H, robot.dof))
    hot = np.flatnonzero(np.any(active, axis=1))
    if hot.size:
        g_x = geometry.sdf_grad(env, centers[hot].reshape(-1, centers.shape[-1]))
        g_x = g_x.reshape(hot.size, K, -1)
        for i, t in enumerate(hot):
            jacs, _ = fk_jacobian(robot, qs[t])
            for k in np.flatnonzero(active[t]):
                grads[t] -= g_x[i, k] @ jacs[k]
            grads[t] /= K
    return costs, grads


def self_collision_cost(robot: RobotModel, q, margin=0.02):
    """Hinge on pairwise clearance between spheres of non-adjacent links, averaged."""
    if robot.n_links < 2:
        return 0.0, np.zeros(robot.dof)
    links = robot.sphere_links
    radii = robot.sphere_radii
    pairs = [
        (i, j)
        for i in range(robot.n_spheres)
        for j in range(i + 1, robot.n_spheres)
        if abs(int(links[i]) - int(links[j])) >= 2
    ]
    if not pairs:
        return 0.0, np.zeros(robot.dof)
    centers, _ = forward_kinematics(robot, q)
    cost = 0.0
    grad = np.zeros(robot.dof)
    jacs = None
    for i, j in pairs:
        delta = centers[i] - centers[j]
        dist = np.linalg.norm(delta)
        clearance = dist - radii[i] - radii[j]
        if clearance < margin:
            cost += margin - clearance
            if jacs is None:
                jacs, _ = fk_jacobian(robot, q)
            if dist > 1e-12:
                n = delta / dist
                grad -= n @ (jacs[i] - jacs[j])
    return cost / len(pairs), grad / len(pairs)


def _squared_hinge(x, lo, hi, margin):
    """Per-dimension squared hinge outside [lo + margin, hi - margin]."""
    below = x < lo + margin
    above = x > hi - margin
    r = np.where(below, x - (lo + margin), np.where(above, x - (hi - margin), 0.0))
    return float(np.sum(r * r)), 2.0 * r


def joint_limits_cost(robot: RobotModel, q, qdot, margin=0.01):
    """Squared hinge on position limits plus the same form on velocity limits."""
    q_min, q_max = robot.joint_limits
    c_q, g_q = _squared_hinge(np.asarray(q, dtype=float), q_min, q_max, margin)
    v = robot.velocity_limits
    c_v, g_v = _squared_hinge(np.asarray(qdot, dtype=float), -v, v, margin)
    return c_q + c_v, g_q, g_v


def _wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def ee_trajectory_cost(robot: RobotModel, traj: Trajectory, goal_rotation):
    """Orientation-only end-effector cost summed along the trajectory.

    The planar arm's EE rotation is about z by the sum of joint angles, so the
    per-waypoint cost is the wrapped angular error magnitude.
    """
    if robot.kind != "planar-arm-n-link":
        raise ValueError("end-effector cost requires an arm robot")
    goal_rotation = np.asarray(goal_rotation, dtype=float)
    theta_goal = np.arctan2(goal_rotation[1, 0], goal_rotation[0, 0])
    q = traj.positions
    err = _wrap_angle(theta_goal - np.sum(q, axis=1))
    cost = float(np.sum(np.abs(err)))
    # err = wrap(theta_goal - sum(q)), so d|err|/dq_i = -sign(err)
    grad = np.zeros_like(traj.states)
    grad[:, : traj.dof] = -np.sign(err)[:, None]
    return cost, grad


# ---------------------------------------------------------------------------
# Suite


@dataclass
class CostTerm:
    kind: str  # collision | self-collision | joint-limits | ee-pose | gp-smoothness
    weight: float = 1.0
    margin: float = 0.0
    goal_rotation: np.ndarray | None = None

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("temperature must be non-negative")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass
class CostSuite:
    env: Environment
    robot: RobotModel
    gp: GpParams | None = None
    terms: list[CostTerm] = field(default_factory=list)

    def __post_init__(self):
        kinds = [t.kind for t in self.terms]
        if len(kinds) != len(set(kinds)):
            raise ValueError("at most one term per kind")


DEFAULT_MARGINS = {"collision": 0.03, "self-collision": 0.02, "joint-limits": 0.01}


def _term_cost_and_grad(term: CostTerm, suite: CostSuite, traj: Trajectory):
    """Unweighted cost and state-space gradient of one term over the trajectory."""
    robot = suite.robot
    dof = traj.dof
    margin = term.margin if term.margin > 0 else DEFAULT_MARGINS.get(term.kind, 0.0)
    grad = np.zeros_like(traj.states)
    if term.kind == "gp-smoothness":
        if suite.gp is None:
            raise ValueError("suite has no GP params")
        return gp_cost(traj, suite.gp), gp_cost_grad(traj, suite.gp)
    if term.kind == "ee-pose":
        return ee_trajectory_cost(robot, traj, term.goal_rotation)
    if term.kind == "collision":
        costs, g = collision_cost_trajectory(suite.env, robot, traj.positions,
                                             margin=margin)
        grad[:, :dof] = g
        return float(np.sum(costs)), grad
    total = 0.0
    for t in range(traj.horizon):
        q = traj.positions[t]
        if term.kind == "self-collision":
            c, g = self_collision_cost(robot, q, margin=margin)
            grad[t, :dof] = g
        elif term.kind == "joint-limits":
            c, g_q, g_v = joint_limits_cost(robot, q, traj.velocities[t], margin=margin)
            grad[t, :dof] = g_q
            grad[t, dof:] = g_v
        else:
            raise ValueError(f"unknown cost kind {term.kind!r}")
        total += c
    return total, grad


def total_cost_and_grad(suite: CostSuite, traj: Trajectory, fix_endpoints=True):
    """Weighted total cost and the guidance vector g = -sum_i w_i grad c_i.

    With fix_endpoints the first and last rows of g are zeroed, since those
    states are hard constraints handled by the sampler.
    """
    total = 0.0
    g = np.zeros_like(traj.states)
    for term in suite.terms:
        c, grad = _term_cost_and_grad(term, suite, traj)
        total += term.weight * c
        g -= term.weight * grad
    if fix_endpoints:
        g[0] = 0.0
        g[-1] = 0.0
    return total, g
