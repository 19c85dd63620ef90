"""Trajectory container, Gaussian-process prior matrices and smoothness cost.

States are rows s_t = [q_t, qdot_t], so a trajectory is an H x 2*dof matrix.
The GP prior assumes a holonomic constant-velocity transition model between
consecutive waypoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Trajectory:
    states: np.ndarray  # (H, 2*dof)
    dt: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ValueError("trajectory needs an (H, d) matrix with H >= 2")
        if self.states.shape[1] % 2 != 0:
            raise ValueError("state dimension must be 2*dof (positions + velocities)")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite entries")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def horizon(self):
        return self.states.shape[0]

    @property
    def dof(self):
        return self.states.shape[1] // 2

    @property
    def positions(self):
        return self.states[:, : self.dof]

    @property
    def velocities(self):
        return self.states[:, self.dof:]


@dataclass
class GpParams:
    dt: float
    Qc: np.ndarray    # (dof, dof)
    Phi: np.ndarray   # (2*dof, 2*dof)
    Q: np.ndarray     # (2*dof, 2*dof)
    Qinv: np.ndarray

    @property
    def dof(self):
        return self.Qc.shape[0]


def build_gp_params(dt: float, Qc) -> GpParams:
    """Constant-velocity transition matrix and its between-step covariance."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Qc = np.atleast_2d(np.asarray(Qc, dtype=float))
    dof = Qc.shape[0]
    I = np.eye(dof)
    Phi = np.block([[I, dt * I], [np.zeros((dof, dof)), I]])
    Q = np.block([
        [dt ** 3 / 3.0 * Qc, dt ** 2 / 2.0 * Qc],
        [dt ** 2 / 2.0 * Qc, dt * Qc],
    ])
    Qinv = np.linalg.inv(Q)
    if np.max(np.abs(Q @ Qinv - np.eye(2 * dof))) >= 1e-8:
        raise np.linalg.LinAlgError("Q is numerically singular; Qc must be SPD")
    return GpParams(dt=dt, Qc=Qc, Phi=Phi, Q=Q, Qinv=Qinv)


def gp_residuals(traj: Trajectory, gp: GpParams):
    """Phi s_t - s_{t+1} for the H-1 transitions, shape (H-1, 2*dof)."""
    s = traj.states
    return s[:-1] @ gp.Phi.T - s[1:]


def gp_cost(traj: Trajectory, gp: GpParams) -> float:
    """0.5 * sum_t ||Phi s_t - s_{t+1}||^2 in the Q^{-1} metric."""
    if 2 * gp.dof != traj.states.shape[1]:
        raise ValueError("GP params dof does not match trajectory")
    r = gp_residuals(traj, gp)
    return 0.5 * float(np.einsum("ti,ij,tj->", r, gp.Qinv, r))


def gp_cost_grad(traj: Trajectory, gp: GpParams) -> np.ndarray:
    """Exact gradient of gp_cost w.r.t. the states, shape (H, 2*dof)."""
    r = gp_residuals(traj, gp)
    w = r @ gp.Qinv  # (H-1, 2*dof)
    grad = np.zeros_like(traj.states)
    grad[:-1] += w @ gp.Phi
    grad[1:] -= w
    return grad


def straight_line_init(start_state, goal_state, H: int, dt: float) -> Trajectory:
    """Constant-velocity straight line between two states (velocities overwritten)."""
    if H < 2:
        raise ValueError("H must be >= 2")
    start_state = np.asarray(start_state, dtype=float)
    goal_state = np.asarray(goal_state, dtype=float)
    if start_state.shape != goal_state.shape:
        raise ValueError("start and goal dimensions differ")
    dof = start_state.shape[0] // 2
    q0, q1 = start_state[:dof], goal_state[:dof]
    alphas = np.linspace(0.0, 1.0, H)[:, None]
    positions = (1 - alphas) * q0 + alphas * q1
    vel = (q1 - q0) / ((H - 1) * dt)
    states = np.hstack([positions, np.tile(vel, (H, 1))])
    return Trajectory(states=states, dt=dt)
