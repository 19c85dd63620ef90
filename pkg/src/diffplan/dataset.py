"""Expert trajectory dataset: generation pipeline (RRT-Connect -> B-spline ->
GPMP refinement), context-granular train/validation split, and on-disk
persistence (manifest.json + trajectories.f32 + provenance.jsonl).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .costs import CostSuite, CostTerm
from .geometry import Environment, RobotModel, sample_free_config
from .planners import GpmpParams, RrtParams, bspline_smooth, gpmp_optimize, rrt_connect
from .trajectory import Trajectory, build_gp_params

FORMAT_VERSION = 1


class DatasetError(RuntimeError):
    pass


@dataclass
class PlanningContext:
    context_id: int
    q_start: np.ndarray
    q_goal: np.ndarray
    seed: int


@dataclass
class TrajectoryDataset:
    trajectories: np.ndarray  # (M, H, d) float
    context_ids: np.ndarray   # (M,)
    contexts: list[PlanningContext]
    H: int
    dt: float
    robot: RobotModel
    env_hash: str
    provenance: list[dict] = field(default_factory=list)

    @property
    def d(self):
        return self.trajectories.shape[2]

    @property
    def n_contexts(self):
        return len(self.contexts)

    def stats(self):
        """Per-dimension (min, max) over all stored states."""
        flat = self.trajectories.reshape(-1, self.d)
        return flat.min(axis=0), flat.max(axis=0)


def env_description_hash(env: Environment) -> str:
    payload = json.dumps(geometry.environment_to_dict(env), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def dense_collision_free(env, robot, traj: Trajectory, oversample=10):
    """Independent re-validation: check every waypoint and linear interpolations
    between them at oversample points per segment."""
    q = traj.positions
    alphas = np.arange(1, oversample) / oversample
    interp = q[:-1, None, :] + alphas[None, :, None] * np.diff(q, axis=0)[:, None, :]
    samples = np.concatenate([q, interp.reshape(-1, q.shape[1])])
    return not np.any(geometry.configs_collide(env, robot, samples))


def default_refine_suite(env, robot, dt, qc_scale=1.0, collision_weight=30.0):
    gp = build_gp_params(dt, qc_scale * np.eye(robot.dof))
    return CostSuite(
        env=env, robot=robot, gp=gp,
        terms=[CostTerm("collision", weight=collision_weight),
               CostTerm("gp-smoothness", weight=1.0)],
    )


def generate_expert(env: Environment, robot: RobotModel, n_contexts: int,
                    n_per_context: int, H: int, dt: float, rng,
                    rrt_params: RrtParams | None = None,
                    gpmp_params: GpmpParams | None = None,
                    context_budget_factor: int = 5) -> TrajectoryDataset:
    """Expert pipeline per context: sample free endpoints, plan n_per_context
    RRT-Connect paths with distinct seeds, smooth with a B-spline, refine with
    GPMP, and keep only trajectories that re-validate collision-free."""
    rrt_params = rrt_params or RrtParams()
    gpmp_params = gpmp_params or GpmpParams(iterations=60, step_size=0.3)
    suite = default_refine_suite(env, robot, dt)
    trajs, ctx_ids, contexts, provenance = [], [], [], []
    attempts = 0
    budget = max(n_contexts * context_budget_factor, n_contexts + 10)
    while len(contexts) < n_contexts:
        attempts += 1
        if attempts > budget:
            raise DatasetError("context resample budget exhausted; environment too cluttered")
        ctx_seed = int(rng.integers(0, 2 ** 31))
        ctx_rng = np.random.default_rng(ctx_seed)
        try:
            q_start = sample_free_config(env, robot, ctx_rng)
            q_goal = sample_free_config(env, robot, ctx_rng)
        except geometry.FreeSpaceSampleError as e:
            raise DatasetError(str(e)) from e
        kept = []
        kept_prov = []
        for j in range(n_per_context):
            plan_seed = ctx_seed + 1 + j
            path = rrt_connect(env, robot, q_start, q_goal, rrt_params,
                               np.random.default_rng(plan_seed))
            if path is None:
                continue
            smooth = bspline_smooth(path, H, dt)
            refined, trace = gpmp_optimize(smooth, suite, gpmp_params)
            if dense_collision_free(env, robot, refined):
                kept.append(refined.states)
                kept_prov.append({
                    "context_id": len(contexts), "plan_seed": plan_seed,
                    "rrt_waypoints": len(path), "gpmp_iters": len(trace) - 1,
                    "final_cost": trace[-1],
                })
        if not kept:
            continue
        cid = len(contexts)
        contexts.append(PlanningContext(cid, q_start, q_goal, ctx_seed))
        for s, p in zip(kept, kept_prov):
            trajs.append(s)
            ctx_ids.append(cid)
            provenance.append(p)
    return TrajectoryDataset(
        trajectories=np.asarray(trajs, dtype=np.float32).astype(float),
        context_ids=np.asarray(ctx_ids),
        contexts=contexts, H=H, dt=dt, robot=robot,
        env_hash=env_description_hash(env), provenance=provenance,
    )


def split(dataset: TrajectoryDataset, val_fraction=0.05, seed=0):
    """Context-granular split: all trajectories of a context land on one side."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    n = dataset.n_contexts
    n_val = max(int(round(n * val_fraction)), 1)
    if n_val >= n:
        raise ValueError("too few contexts to split")
    order = np.random.default_rng(seed).permutation(n)
    val_ctx = set(order[:n_val].tolist())
    val_mask = np.array([cid in val_ctx for cid in dataset.context_ids])
    return dataset.trajectories[~val_mask], dataset.trajectories[val_mask], val_ctx


def save_dataset(dataset: TrajectoryDataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    blob = dataset.trajectories.astype("<f4").tobytes()
    lo, hi = dataset.stats()
    manifest = {
        "format_version": FORMAT_VERSION,
        "env_hash": dataset.env_hash,
        "robot": geometry.robot_to_dict(dataset.robot),
        "H": dataset.H,
        "d": dataset.d,
        "dt": dataset.dt,
        "n_trajectories": int(dataset.trajectories.shape[0]),
        "n_contexts": dataset.n_contexts,
        "context_ids": dataset.context_ids.tolist(),
        "contexts": [
            {"context_id": c.context_id, "q_start": c.q_start.tolist(),
             "q_goal": c.q_goal.tolist(), "seed": c.seed}
            for c in dataset.contexts
        ],
        "stats": {"lo": lo.tolist(), "hi": hi.tolist()},
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "trajectories.f32"), "wb") as f:
        f.write(blob)
    with open(os.path.join(out_dir, "provenance.jsonl"), "w") as f:
        for rec in dataset.provenance:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(in_dir) -> TrajectoryDataset:
    with open(os.path.join(in_dir, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format {manifest.get('format_version')}")
    with open(os.path.join(in_dir, "trajectories.f32"), "rb") as f:
        blob = f.read()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise DatasetError("trajectory blob checksum mismatch")
    M, H, d = manifest["n_trajectories"], manifest["H"], manifest["d"]
    if len(blob) != 4 * M * H * d:
        raise DatasetError("trajectory blob size does not match the manifest")
    trajs = np.frombuffer(blob, dtype="<f4").astype(float).reshape(M, H, d)
    provenance = []
    prov_path = os.path.join(in_dir, "provenance.jsonl")
    if os.path.exists(prov_path):
        with open(prov_path) as f:
            provenance = [json.loads(line) for line in f if line.strip()]
    contexts = [
        PlanningContext(c["context_id"], np.asarray(c["q_start"]),
                        np.asarray(c["q_goal"]), c["seed"])
        for c in manifest["contexts"]
    ]
    return TrajectoryDataset(
        trajectories=trajs,
        context_ids=np.asarray(manifest["context_ids"]),
        contexts=contexts, H=H, dt=manifest["dt"],
        robot=geometry.robot_from_dict(manifest["robot"]),
        env_hash=manifest["env_hash"], provenance=provenance,
    )
