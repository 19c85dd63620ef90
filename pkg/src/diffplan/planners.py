"""Classical planners: RRT-Connect, B-spline path smoothing, and GPMP-style
trajectory optimization (preconditioned gradient descent on the weighted cost
with the GP prior precision as preconditioner).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.linalg import cho_factor, cho_solve

from .costs import CostSuite, total_cost_and_grad
from .geometry import config_collides, configs_collide
from .trajectory import Trajectory


@dataclass
class RrtParams:
    step_size: float = 0.1
    goal_bias: float = 0.1
    max_iters: int = 5000
    check_resolution: float = 0.02

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal bias must be in [0, 1]")


def edge_free(env, robot, q_a, q_b, resolution):
    """Check the straight segment q_a -> q_b at the given resolution."""
    dist = np.linalg.norm(q_b - q_a)
    n = max(int(np.ceil(dist / resolution)), 1)
    alphas = np.linspace(0.0, 1.0, n + 1)[:, None]
    qs = np.asarray(q_a, dtype=float)[None] * (1 - alphas) + np.asarray(q_b, dtype=float)[None] * alphas
    return not np.any(configs_collide(env, robot, qs))


class _Tree:
    def __init__(self, root):
        self.nodes = [np.asarray(root, dtype=float)]
        self.parents = [-1]

    def nearest(self, q):
        d = np.linalg.norm(np.asarray(self.nodes) - q, axis=1)
        return int(np.argmin(d))

    def add(self, q, parent):
        self.nodes.append(np.asarray(q, dtype=float))
        self.parents.append(parent)
        return len(self.nodes) - 1

    def path_to_root(self, idx):
        out = []
        while idx != -1:
            out.append(self.nodes[idx])
            idx = self.parents[idx]
        return out


def _extend(tree, q_target, env, robot, params):
    """One EXTEND toward q_target. Returns (status, new node index)."""
    near = tree.nearest(q_target)
    q_near = tree.nodes[near]
    delta = q_target - q_near
    dist = np.linalg.norm(delta)
    if dist < 1e-12:
        return "reached", near
    q_new = q_target if dist <= params.step_size else q_near + delta / dist * params.step_size
    if not edge_free(env, robot, q_near, q_new, params.check_resolution):
        return "trapped", near
    idx = tree.add(q_new, near)
    reached = np.linalg.norm(q_new - q_target) < 1e-12
    return ("reached" if reached else "advanced"), idx


def _connect(tree, q_target, env, robot, params):
    status = "advanced"
    idx = -1
    while status == "advanced":
        status, idx = _extend(tree, q_target, env, robot, params)
    return status, idx


def rrt_connect(env, robot, q_start, q_goal, params: RrtParams, rng):
    """Bidirectional RRT-Connect; returns a waypoint path or None on failure."""
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    if config_collides(env, robot, q_start) or config_collides(env, robot, q_goal):
        raise ValueError("start or goal configuration is in collision")
    q_min, q_max = robot.joint_limits
    t_a, t_b = _Tree(q_start), _Tree(q_goal)
    a_is_start = True
    for _ in range(params.max_iters):
        if rng.random() < params.goal_bias:
            q_rand = t_b.nodes[0]
        else:
            q_rand = rng.uniform(q_min, q_max)
        status, idx_a = _extend(t_a, q_rand, env, robot, params)
        if status != "trapped":
            status_c, idx_b = _connect(t_b, t_a.nodes[idx_a], env, robot, params)
            if status_c == "reached":
                path_a = t_a.path_to_root(idx_a)[::-1]
                path_b = t_b.path_to_root(idx_b)
                path = path_a + path_b
                if not a_is_start:
                    path = path[::-1]
                return [np.array(p) for p in path]
        t_a, t_b = t_b, t_a
        a_is_start = not a_is_start
    return None


def bspline_smooth(path, H: int, dt: float) -> Trajectory:
    """Fit a clamped cubic B-spline through the waypoints and resample it to
    H states; velocities come from the analytic spline derivative."""
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("path needs at least 2 waypoints")
    # drop consecutive duplicates so the parametrization is strictly increasing
    keep = [0]
    for i in range(1, pts.shape[0]):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    pts = pts[keep]
    dof = pts.shape[1]
    if pts.shape[0] < 2:
        states = np.hstack([np.tile(pts[0], (H, 1)), np.zeros((H, dof))])
        return Trajectory(states, dt)
    # chord-length parametrization on [0, 1]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(seg)])
    u /= u[-1]
    spline = make_interp_spline(u, pts, k=3, bc_type="clamped", axis=0)
    u_new = np.linspace(0.0, 1.0, H)
    positions = spline(u_new)
    duration = (H - 1) * dt
    velocities = spline.derivative()(u_new) / duration
    positions[0], positions[-1] = pts[0], pts[-1]
    velocities[0] = 0.0
    velocities[-1] = 0.0
    return Trajectory(np.hstack([positions, velocities]), dt)


@dataclass
class GpmpParams:
    iterations: int = 100
    step_size: float = 0.2
    tolerance: float = 1e-8
    backtracking: bool = True
    max_backtracks: int = 12

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _gp_precision_interior(gp, H):
    """GP prior precision over the H-2 interior states with clamped endpoints."""
    d = 2 * gp.dof
    n = (H - 2) * d
    A = np.zeros((n, n))
    PhiT_Qinv = gp.Phi.T @ gp.Qinv
    PhiT_Qinv_Phi = PhiT_Qinv @ gp.Phi
    for t in range(H - 1):
        i, j = t - 1, t  # interior indices of s_t and s_{t+1}
        if i >= 0:
            A[i * d:(i + 1) * d, i * d:(i + 1) * d] += PhiT_Qinv_Phi
        if j <= H - 3:
            A[j * d:(j + 1) * d, j * d:(j + 1) * d] += gp.Qinv
        if i >= 0 and j <= H - 3:
            A[i * d:(i + 1) * d, j * d:(j + 1) * d] -= PhiT_Qinv
            A[j * d:(j + 1) * d, i * d:(i + 1) * d] -= PhiT_Qinv.T
    return A


class GpmpDiverged(RuntimeError):
    pass


def gpmp_optimize(init: Trajectory, suite: CostSuite, params: GpmpParams):
    """First-order GPMP: descend the weighted cost preconditioned by the GP
    prior precision, endpoints held fixed. Returns (Trajectory, cost trace)."""
    if suite.gp is None:
        raise ValueError("GPMP requires a suite with GP params")
    H, d = init.horizon, init.states.shape[1]
    A = _gp_precision_interior(suite.gp, H) + 1e-9 * np.eye((H - 2) * d)
    chol = cho_factor(A)
    states = init.states.copy()
    cost, grad = total_cost_and_grad(suite, Trajectory(states, init.dt))
    if not np.isfinite(cost):
        raise GpmpDiverged("non-finite cost at the initial trajectory")
    trace = [cost]
    for _ in range(params.iterations):
        # guidance vector is -grad; recover the raw gradient on the interior
        raw = -grad[1:-1].reshape(-1)
        direction = cho_solve(chol, raw).reshape(H - 2, d)
        step = params.step_size
        improved = False
        for _ in range(params.max_backtracks if params.backtracking else 1):
            trial = states.copy()
            trial[1:-1] -= step * direction
            new_cost, new_grad = total_cost_and_grad(suite, Trajectory(trial, init.dt))
            if not np.isfinite(new_cost):
                raise GpmpDiverged("non-finite cost during optimization")
            if new_cost <= trace[-1] or not params.backtracking:
                states, cost, grad = trial, new_cost, new_grad
                improved = True
                break
            step *= 0.5
        if not improved:
            trace.append(trace[-1])
            break
        trace.append(cost)
        if trace[-2] - trace[-1] < params.tolerance:
            break
    return Trajectory(states, init.dt), trace


@dataclass
class BatchResult:
    trajectories: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (index, message)


def primed_gpmp(prior_samples, suite: CostSuite, params: GpmpParams) -> BatchResult:
    """Run gpmp_optimize independently on each prior sample; per-sample
    failures are recorded without aborting the batch."""
    result = BatchResult()
    for i, traj in enumerate(prior_samples):
        try:
            opt, trace = gpmp_optimize(traj, suite, params)
            result.trajectories.append(opt)
            result.traces.append(trace)
        except (GpmpDiverged, ValueError) as e:
            result.failures.append((i, str(e)))
    return result
