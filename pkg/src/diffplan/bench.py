"""Experiment orchestration: run-config parsing, planner dispatch and the
benchmark loop producing per-context and aggregate metric reports.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import dataset as dataset_mod
from . import geometry
from .costs import CostSuite, CostTerm
from .denoiser import load_model
from .diffusion import GuidanceConfig, make_schedule, mpd_sample
from .geometry import sample_free_config
from .metrics import (metric_intensity, metric_path_length, metric_success,
                      metric_waypoint_variance)
from .planners import (GpmpParams, RrtParams, bspline_smooth, gpmp_optimize,
                       primed_gpmp, rrt_connect)
from .trajectory import build_gp_params, straight_line_init

PLANNER_KINDS = ("diffusion-prior", "mpd", "gpmp", "rrt", "primed-gpmp")


class ConfigError(ValueError):
    pass


class PlannerFailure(RuntimeError):
    pass


def _resolve(path, base_dir):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def load_run_config(path):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def robot_from_config(cfg):
    spec = cfg.get("robot")
    if spec is None:
        return geometry.point_mass_robot()
    if isinstance(spec, dict):
        return geometry.robot_from_dict(spec)
    raise ConfigError("robot must be an object or omitted")


def env_from_config(cfg):
    path = cfg.get("environment")
    if path is None:
        raise ConfigError("config needs an 'environment' path")
    env = geometry.load_environment(_resolve(path, cfg["_base_dir"]))
    if not cfg.get("use_extra_obstacles", False):
        env = env.base_only()
    return env


def schedule_from_config(cfg):
    s = cfg.get("schedule", {})
    return make_schedule(
        s.get("kind", "exponential"), s.get("N", 25),
        s.get("beta_min", 1e-4), s.get("beta_max", 2e-2),
    )


def guidance_from_config(cfg):
    g = cfg.get("guidance", {})
    return GuidanceConfig(
        drop_sigma_scaling=g.get("drop_sigma_scaling", True),
        guide_steps_per_denoise=g.get("guide_steps_per_denoise", 1),
    )


def suite_from_config(cfg, env, robot, dt):
    terms = []
    for t in cfg.get("costs", []):
        goal_rot = None
        if "goal_rotation" in t:
            goal_rot = np.asarray(t["goal_rotation"], dtype=float)
        terms.append(CostTerm(kind=t["kind"], weight=float(t.get("weight", 1.0)),
                              margin=float(t.get("margin", 0.0)),
                              goal_rotation=goal_rot))
    gp = build_gp_params(dt, cfg.get("gp_qc", 1.0) * np.eye(robot.dof))
    return CostSuite(env=env, robot=robot, gp=gp, terms=terms)


def rrt_params_from_config(cfg):
    r = cfg.get("rrt", {})
    return RrtParams(
        step_size=r.get("step_size", 0.1), goal_bias=r.get("goal_bias", 0.1),
        max_iters=r.get("max_iters", 5000),
        check_resolution=r.get("check_resolution", 0.02),
    )


def gpmp_params_from_config(cfg):
    g = cfg.get("gpmp", {})
    return GpmpParams(
        iterations=g.get("iterations", 100), step_size=g.get("step_size", 0.3),
        tolerance=g.get("tolerance", 1e-8),
    )


def _full_state(q, dof):
    return np.concatenate([q, np.zeros(dof)])


class Planner:
    """Configured planner; plan() maps a (q_start, q_goal) context to a batch."""

    def __init__(self, cfg, env, robot):
        self.kind = cfg.get("planner")
        if self.kind not in PLANNER_KINDS:
            raise ConfigError(f"unknown planner {self.kind!r}; choose from {PLANNER_KINDS}")
        self.cfg = cfg
        self.env = env
        self.robot = robot
        self.batch = int(cfg.get("batch_size", 10))
        self.model = None
        if self.kind in ("diffusion-prior", "mpd") or (
                self.kind == "primed-gpmp" and cfg.get("primed_by", "diffusion-prior")
                in ("diffusion-prior", "mpd")):
            path = cfg.get("model")
            if path is None:
                raise ConfigError(f"planner {self.kind!r} requires a 'model' checkpoint")
            self.model = load_model(_resolve(path, cfg["_base_dir"]))
        if self.model is not None:
            self.H = self.model.config.H
            self.dt = float(self.model.meta.get("dt", cfg.get("dt", 0.02)))
        else:
            self.H = int(cfg.get("H", 48))
            self.dt = float(cfg.get("dt", 0.02))
        self.schedule = schedule_from_config(cfg)
        self.guidance = guidance_from_config(cfg)
        self.suite = suite_from_config(cfg, env, robot, self.dt)
        self.rrt_params = rrt_params_from_config(cfg)
        self.gpmp_params = gpmp_params_from_config(cfg)

    def _diffusion_batch(self, q_start, q_goal, rng, guided):
        dof = self.robot.dof
        return mpd_sample(
            self.schedule, self.guidance, self.model,
            self.suite if guided else None,
            _full_state(q_start, dof), _full_state(q_goal, dof),
            self.batch, rng, self.dt,
        )

    def _rrt_batch(self, q_start, q_goal, rng):
        out = []
        for _ in range(self.batch):
            path = rrt_connect(self.env, self.robot, q_start, q_goal,
                               self.rrt_params, rng)
            if path is not None:
                out.append(bspline_smooth(path, self.H, self.dt))
        if not out:
            raise PlannerFailure("RRT-Connect failed for every batch element")
        return out

    def plan(self, q_start, q_goal, rng):
        dof = self.robot.dof
        if self.kind == "diffusion-prior":
            return self._diffusion_batch(q_start, q_goal, rng, guided=False)
        if self.kind == "mpd":
            return self._diffusion_batch(q_start, q_goal, rng, guided=True)
        if self.kind == "rrt":
            return self._rrt_batch(q_start, q_goal, rng)
        if self.kind == "gpmp":
            init = straight_line_init(_full_state(q_start, dof),
                                      _full_state(q_goal, dof), self.H, self.dt)
            priors = [init] * self.batch
            result = primed_gpmp(priors, self.suite, self.gpmp_params)
            if not result.trajectories:
                raise PlannerFailure("GPMP failed for every batch element")
            return result.trajectories
        # primed-gpmp
        primed_by = self.cfg.get("primed_by", "diffusion-prior")
        if primed_by in ("diffusion-prior", "mpd"):
            priors = self._diffusion_batch(q_start, q_goal, rng,
                                           guided=primed_by == "mpd")
        elif primed_by == "rrt":
            priors = self._rrt_batch(q_start, q_goal, rng)
        elif primed_by == "straight-line":
            init = straight_line_init(_full_state(q_start, dof),
                                      _full_state(q_goal, dof), self.H, self.dt)
            priors = [init] * self.batch
        else:
            raise ConfigError(f"unknown primed_by {primed_by!r}")
        result = primed_gpmp(priors, self.suite, self.gpmp_params)
        if not result.trajectories:
            raise PlannerFailure("GPMP failed for every prior sample")
        return result.trajectories


def run_benchmark(cfg, seed=0, out_dir=None):
    """Benchmark the configured planner over random contexts; returns the
    report dict and optionally writes report.json."""
    env = env_from_config(cfg)
    robot = robot_from_config(cfg)
    planner = Planner(cfg, env, robot)
    n_contexts = int(cfg.get("n_contexts", 10))
    rows = []
    for i in range(n_contexts):
        ctx_rng = np.random.default_rng([seed, i])
        q_start = sample_free_config(env, robot, ctx_rng)
        q_goal = sample_free_config(env, robot, ctx_rng)
        row = {"context_id": i, "q_start": q_start.tolist(), "q_goal": q_goal.tolist()}
        t0 = time.perf_counter()
        try:
            batch = planner.plan(q_start, q_goal, ctx_rng)
        except PlannerFailure as e:
            row.update({"failure": str(e), "time_s": time.perf_counter() - t0,
                        "success": 0, "intensity": None, "path_length": None,
                        "waypoint_variance": None})
            rows.append(row)
            continue
        row["time_s"] = time.perf_counter() - t0
        row["success"] = metric_success(batch, env, robot)
        row["intensity"] = metric_intensity(batch, env, robot)
        row["path_length"] = float(np.mean([metric_path_length(t) for t in batch]))
        row["waypoint_variance"] = (
            metric_waypoint_variance(batch) if len(batch) >= 2 else 0.0)
        rows.append(row)
    aggregate = {}
    for key in ("time_s", "success", "intensity", "path_length", "waypoint_variance"):
        vals = [r[key] for r in rows if r.get(key) is not None]
        aggregate[key] = {
            "mean": float(np.mean(vals)) if vals else None,
            "std": float(np.std(vals)) if vals else None,
        }
    report = {
        "planner": planner.kind,
        "n_contexts": n_contexts,
        "batch_size": planner.batch,
        "seed": seed,
        "contexts": rows,
        "aggregate": aggregate,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return report


def generate_dataset_from_config(cfg, seed, out_dir):
    env = env_from_config(cfg)
    robot = robot_from_config(cfg)
    d = cfg.get("data", {})
    ds = dataset_mod.generate_expert(
        env, robot,
        n_contexts=int(d.get("n_contexts", 100)),
        n_per_context=int(d.get("n_per_context", 10)),
        H=int(cfg.get("H", 48)), dt=float(cfg.get("dt", 0.02)),
        rng=np.random.default_rng(seed),
        rrt_params=rrt_params_from_config(cfg),
    )
    dataset_mod.save_dataset(ds, out_dir)
    return ds
