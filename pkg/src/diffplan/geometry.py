"""Signed-distance-field environments, robot models and forward kinematics.

Workspaces are 2D. Environments are collections of sphere / axis-aligned box
primitives queried through a single signed distance function (positive
outside, negative inside). Robots are either a 2D point mass or a planar
n-link arm whose body is approximated by collision spheres.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

INF_DISTANCE = np.finfo(np.float64).max


class FreeSpaceSampleError(RuntimeError):
    """Raised when no collision-free configuration is found within the retry budget."""


@dataclass(frozen=True)
class SdfPrimitive:
    kind: str  # "sphere" | "box"
    center: np.ndarray
    radius: float = 0.0
    half_extents: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.kind == "sphere":
            if self.radius <= 0:
                raise ValueError("sphere radius must be > 0")
        elif self.kind == "box":
            he = np.asarray(self.half_extents, dtype=float)
            if np.any(he <= 0):
                raise ValueError("box half-extents must be > 0")
            object.__setattr__(self, "half_extents", he)
        else:
            raise ValueError(f"unknown primitive kind {self.kind!r}")

    def sdf(self, x):
        """Signed distance at point(s) x, shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "sphere":
            return np.linalg.norm(x - self.center, axis=-1) - self.radius
        q = np.abs(x - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def sdf_grad(self, x):
        """Gradient of sdf w.r.t. x, shape (..., dim). Unit norm away from the medial axis."""
        x = np.asarray(x, dtype=float)
        if self.kind == "sphere":
            r = x - self.center
            n = np.linalg.norm(r, axis=-1, keepdims=True)
            n = np.where(n < 1e-12, 1.0, n)
            return r / n
        q = np.abs(x - self.center) - self.half_extents
        sign = np.where(x - self.center >= 0, 1.0, -1.0)
        qpos = np.maximum(q, 0.0)
        n = np.linalg.norm(qpos, axis=-1, keepdims=True)
        out_grad = sign * qpos / np.where(n < 1e-12, 1.0, n)
        # inside: move toward the closest face (max component of q)
        face = q == np.max(q, axis=-1, keepdims=True)
        # break ties toward the lowest axis index
        face = np.cumsum(face, axis=-1) * face == 1
        in_grad = sign * face.astype(float)
        is_out = (np.max(q, axis=-1, keepdims=True) > 0).astype(float)
        return is_out * out_grad + (1 - is_out) * in_grad


@dataclass
class Environment:
    primitives: list[SdfPrimitive]
    workspace_bounds: tuple[np.ndarray, np.ndarray]  # (lo, hi)
    extra_primitives: list[SdfPrimitive] = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.workspace_bounds
        self.workspace_bounds = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        for p in self.all_primitives():
            lo, hi = self.workspace_bounds
            if np.any(p.center < lo) or np.any(p.center > hi):
                raise ValueError("primitive center outside workspace bounds")

    @property
    def dim(self):
        return self.workspace_bounds[0].shape[0]

    def all_primitives(self):
        return list(self.primitives) + list(self.extra_primitives)

    def base_only(self):
        """View without the held-out generalization obstacles."""
        return Environment(self.primitives, self.workspace_bounds, [])

    def with_extras(self, extras):
        return Environment(self.primitives, self.workspace_bounds, list(extras))


def sdf_eval(env: Environment, x):
    """Min signed distance over all primitives at point(s) x."""
    prims = env.all_primitives()
    x = np.asarray(x, dtype=float)
    if not prims:
        return np.full(x.shape[:-1], INF_DISTANCE) if x.ndim > 1 else INF_DISTANCE
    d = np.stack([p.sdf(x) for p in prims], axis=0)
    return np.min(d, axis=0)


def sdf_grad(env: Environment, x):
    """Gradient of sdf_eval w.r.t. x. Ties go to the lowest primitive index."""
    prims = env.all_primitives()
    x = np.asarray(x, dtype=float)
    if not prims:
        return np.zeros_like(x)
    d = np.stack([p.sdf(x) for p in prims], axis=0)
    idx = np.argmin(d, axis=0)  # argmin takes the first minimum -> lowest index
    g = np.stack([p.sdf_grad(x) for p in prims], axis=0)
    return np.take_along_axis(g, idx[None, ..., None], axis=0)[0]


@dataclass(frozen=True)
class Pose3:
    rotation: np.ndarray  # 3x3
    position: np.ndarray  # 3

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        p = np.asarray(self.position, dtype=float)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class RobotModel:
    kind: str  # "point-mass-2d" | "planar-arm-n-link"
    joint_limits: tuple[np.ndarray, np.ndarray]  # (q_min, q_max)
    velocity_limits: np.ndarray
    link_lengths: np.ndarray | None = None
    # (link index, fraction along link, radius) per collision sphere (arm only)
    sphere_specs: list[tuple[int, float, float]] = field(default_factory=list)
    point_radius: float = 0.05

    def __post_init__(self):
        q_min, q_max = self.joint_limits
        self.joint_limits = (np.asarray(q_min, dtype=float), np.asarray(q_max, dtype=float))
        self.velocity_limits = np.asarray(self.velocity_limits, dtype=float)
        if np.any(self.joint_limits[0] >= self.joint_limits[1]):
            raise ValueError("q_min must be < q_max per dimension")
        if self.kind == "planar-arm-n-link":
            self.link_lengths = np.asarray(self.link_lengths, dtype=float)
            if not self.sphere_specs:
                self.sphere_specs = default_sphere_specs(self.link_lengths)
        elif self.kind != "point-mass-2d":
            raise ValueError(f"unknown robot kind {self.kind!r}")

    @property
    def dof(self):
        return self.joint_limits[0].shape[0]

    @property
    def n_links(self):
        return 0 if self.kind == "point-mass-2d" else len(self.link_lengths)

    @property
    def sphere_radii(self):
        if self.kind == "point-mass-2d":
            return np.array([self.point_radius])
        return np.array([r for _, _, r in self.sphere_specs])

    @property
    def sphere_links(self):
        if self.kind == "point-mass-2d":
            return np.array([0])
        return np.array([link for link, _, _ in self.sphere_specs])

    @property
    def n_spheres(self):
        return 1 if self.kind == "point-mass-2d" else len(self.sphere_specs)


def default_sphere_specs(link_lengths, per_link=3, radius_scale=0.05):
    """Evenly spaced spheres per link; radius proportional to link length."""
    specs = []
    for i, L in enumerate(link_lengths):
        for j in range(per_link):
            frac = (j + 0.5) / per_link
            specs.append((i, frac, radius_scale * float(L)))
    return specs


def forward_kinematics(robot: RobotModel, q):
    """Collision sphere centers (K, 2) and the end-effector Pose3."""
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise ValueError(f"configuration has shape {q.shape}, expected ({robot.dof},)")
    if robot.kind == "point-mass-2d":
        pose = Pose3(np.eye(3), np.array([q[0], q[1], 0.0]))
        return q[None, :].copy(), pose
    joints = _arm_joint_positions(robot, q)
    centers = []
    for link, frac, _ in robot.sphere_specs:
        centers.append(joints[link] + frac * (joints[link + 1] - joints[link]))
    theta = float(np.sum(q))
    pose = Pose3(rot_z(theta), np.array([joints[-1][0], joints[-1][1], 0.0]))
    return np.array(centers), pose


def _arm_joint_positions(robot, q):
    """Positions of the arm base and every joint/tip, shape (n_links+1, 2)."""
    pts = [np.zeros(2)]
    angle = 0.0
    for i, L in enumerate(robot.link_lengths):
        angle += q[i]
        pts.append(pts[-1] + L * np.array([np.cos(angle), np.sin(angle)]))
    return np.array(pts)


def fk_jacobian(robot: RobotModel, q):
    """Per-sphere position Jacobians (K, 2, dof) and the EE position Jacobian (2, dof)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise ValueError(f"configuration has shape {q.shape}, expected ({robot.dof},)")
    if robot.kind == "point-mass-2d":
        return np.eye(2)[None, :, :].copy(), np.eye(2)
    centers, _ = forward_kinematics(robot, q)
    joints = _arm_joint_positions(robot, q)
    n = robot.dof
    jacs = np.zeros((robot.n_spheres, 2, n))
    for k, (link, _, _) in enumerate(robot.sphere_specs):
        x = centers[k]
        # joint i rotates everything distal to it about joints[i]
        for i in range(link + 1):
            r = x - joints[i]
            jacs[k, :, i] = np.array([-r[1], r[0]])
    ee = joints[-1]
    ee_jac = np.zeros((2, n))
    for i in range(n):
        r = ee - joints[i]
        ee_jac[:, i] = np.array([-r[1], r[0]])
    return jacs, ee_jac


def sphere_centers(robot: RobotModel, qs):
    """Collision sphere centers for a batch of configurations: (T, dof) -> (T, K, 2)."""
    qs = np.asarray(qs, dtype=float)
    if qs.ndim != 2 or qs.shape[1] != robot.dof:
        raise ValueError(f"configurations have shape {qs.shape}, expected (T, {robot.dof})")
    if robot.kind == "point-mass-2d":
        return qs[:, None, :].copy()
    ang = np.cumsum(qs, axis=1)  # (T, n)
    steps = robot.link_lengths[None, :, None] * np.stack(
        [np.cos(ang), np.sin(ang)], axis=-1)  # (T, n, 2)
    joints = np.concatenate(
        [np.zeros((qs.shape[0], 1, 2)), np.cumsum(steps, axis=1)], axis=1)
    centers = np.empty((qs.shape[0], robot.n_spheres, 2))
    for k, (link, frac, _) in enumerate(robot.sphere_specs):
        centers[:, k] = joints[:, link] + frac * (joints[:, link + 1] - joints[:, link])
    return centers


def configs_collide(env, robot, qs, margin=0.0):
    """Vectorized per-configuration collision flags over a (T, dof) batch."""
    centers = sphere_centers(robot, qs)
    T, K, _ = centers.shape
    d = sdf_eval(env, centers.reshape(T * K, -1)).reshape(T, K)
    return np.any(d <= robot.sphere_radii[None, :] + margin, axis=1)


def config_collides(env, robot, q, margin=0.0):
    """True if any collision sphere violates its clearance."""
    centers, _ = forward_kinematics(robot, q)
    d = sdf_eval(env, centers)
    return bool(np.any(d <= robot.sphere_radii + margin))


def sample_free_config(env, robot, rng, margin=0.0, max_draws=10_000):
    """Uniform joint-limit sample whose collision spheres all clear the obstacles."""
    q_min, q_max = robot.joint_limits
    for _ in range(max_draws):
        q = rng.uniform(q_min, q_max)
        if not config_collides(env, robot, q, margin=margin):
            return q
    raise FreeSpaceSampleError(f"no free configuration found in {max_draws} draws")


# ---------------------------------------------------------------------------
# JSON descriptions


def primitive_from_dict(d):
    if d["kind"] == "sphere":
        return SdfPrimitive("sphere", np.asarray(d["center"]), radius=float(d["radius"]))
    return SdfPrimitive("box", np.asarray(d["center"]), half_extents=np.asarray(d["half_extents"]))


def primitive_to_dict(p):
    d = {"kind": p.kind, "center": p.center.tolist()}
    if p.kind == "sphere":
        d["radius"] = p.radius
    else:
        d["half_extents"] = p.half_extents.tolist()
    return d


def environment_from_dict(d):
    return Environment(
        primitives=[primitive_from_dict(p) for p in d["primitives"]],
        workspace_bounds=(np.asarray(d["workspace_bounds"]["lo"]), np.asarray(d["workspace_bounds"]["hi"])),
        extra_primitives=[primitive_from_dict(p) for p in d.get("extra_primitives", [])],
    )


def environment_to_dict(env):
    return {
        "primitives": [primitive_to_dict(p) for p in env.primitives],
        "workspace_bounds": {"lo": env.workspace_bounds[0].tolist(), "hi": env.workspace_bounds[1].tolist()},
        "extra_primitives": [primitive_to_dict(p) for p in env.extra_primitives],
    }


def robot_from_dict(d):
    kw = dict(
        kind=d["kind"],
        joint_limits=(np.asarray(d["q_min"]), np.asarray(d["q_max"])),
        velocity_limits=np.asarray(d["velocity_limits"]),
    )
    if d["kind"] == "planar-arm-n-link":
        kw["link_lengths"] = np.asarray(d["link_lengths"])
        if "sphere_specs" in d:
            kw["sphere_specs"] = [(int(a), float(b), float(c)) for a, b, c in d["sphere_specs"]]
    if "point_radius" in d:
        kw["point_radius"] = float(d["point_radius"])
    return RobotModel(**kw)


def robot_to_dict(robot):
    d = {
        "kind": robot.kind,
        "q_min": robot.joint_limits[0].tolist(),
        "q_max": robot.joint_limits[1].tolist(),
        "velocity_limits": robot.velocity_limits.tolist(),
        "point_radius": robot.point_radius,
    }
    if robot.kind == "planar-arm-n-link":
        d["link_lengths"] = robot.link_lengths.tolist()
        d["sphere_specs"] = [[a, b, c] for a, b, c in robot.sphere_specs]
    return d


def load_environment(path):
    with open(path) as f:
        return environment_from_dict(json.load(f))


def save_environment(env, path):
    with open(path, "w") as f:
        json.dump(environment_to_dict(env), f, indent=2)


def random_environment(rng, n_spheres=8, n_boxes=7, size_range=(0.08, 0.16),
                       bounds=(-1.0, 1.0), n_extra_spheres=2, n_extra_boxes=1):
    """Seeded random 2D environment of spheres and boxes, plus held-out extras."""
    lo = np.full(2, bounds[0])
    hi = np.full(2, bounds[1])

    def draw(n_sph, n_box):
        prims = []
        for _ in range(n_sph):
            c = rng.uniform(lo * 0.8, hi * 0.8)
            prims.append(SdfPrimitive("sphere", c, radius=float(rng.uniform(*size_range))))
        for _ in range(n_box):
            c = rng.uniform(lo * 0.8, hi * 0.8)
            he = rng.uniform(size_range[0], size_range[1], size=2)
            prims.append(SdfPrimitive("box", c, half_extents=he))
        return prims

    return Environment(
        primitives=draw(n_spheres, n_boxes),
        workspace_bounds=(lo, hi),
        extra_primitives=draw(n_extra_spheres, n_extra_boxes),
    )


def point_mass_robot(bounds=(-1.0, 1.0), radius=0.02, velocity_limit=3.0):
    return RobotModel(
        kind="point-mass-2d",
        joint_limits=(np.full(2, bounds[0]), np.full(2, bounds[1])),
        velocity_limits=np.full(2, velocity_limit),
        point_radius=radius,
    )


def planar_arm_robot(link_lengths=(0.4, 0.35, 0.25), velocity_limit=4.0):
    n = len(link_lengths)
    return RobotModel(
        kind="planar-arm-n-link",
        joint_limits=(np.full(n, -np.pi), np.full(n, np.pi)),
        velocity_limits=np.full(n, velocity_limit),
        link_lengths=np.asarray(link_lengths, dtype=float),
    )
