"""Command-line surface: gen-env, gen-data, train, plan, bench, render.

Every subcommand takes --config <file>, --seed <u64>, --out <dir>.
Exit codes: 0 success, 1 planner failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import dataset as dataset_mod
from . import geometry
from .bench import ConfigError, PlannerFailure, load_run_config
from .denoiser import DenoiserConfig, Normalizer, TrainConfig, init_model, save_model, train
from .render import render_svg


def _cmd_gen_env(cfg, seed, out):
    g = cfg.get("env_gen", {})
    env = geometry.random_environment(
        np.random.default_rng(seed),
        n_spheres=g.get("n_spheres", 8), n_boxes=g.get("n_boxes", 7),
        size_range=tuple(g.get("size_range", (0.08, 0.16))),
        bounds=tuple(g.get("bounds", (-1.0, 1.0))),
        n_extra_spheres=g.get("n_extra_spheres", 2),
        n_extra_boxes=g.get("n_extra_boxes", 1),
    )
    geometry.save_environment(env, os.path.join(out, "env.json"))
    return 0


def _cmd_gen_data(cfg, seed, out):
    bench_mod.generate_dataset_from_config(cfg, seed, os.path.join(out, "dataset"))
    return 0


def _cmd_train(cfg, seed, out):
    ds_path = cfg.get("dataset")
    if ds_path is None:
        raise ConfigError("train requires a 'dataset' directory")
    ds = dataset_mod.load_dataset(bench_mod._resolve(ds_path, cfg["_base_dir"]))
    tr = cfg.get("train", {})
    train_arr, val_arr, _ = dataset_mod.split(
        ds, val_fraction=tr.get("val_fraction", 0.05), seed=seed)
    norm = Normalizer.from_data(ds.trajectories)
    model_cfg = DenoiserConfig(
        H=ds.H, d=ds.d,
        channels=tr.get("channels", 32), n_blocks=tr.get("n_blocks", 2),
        kernel=tr.get("kernel", 5), time_dim=tr.get("time_dim", 16),
    )
    schedule = bench_mod.schedule_from_config(cfg)
    model = init_model(model_cfg, norm, np.random.default_rng(seed),
                       meta={"schedule_kind": schedule.kind, "N": schedule.N,
                             "dt": ds.dt, "env_hash": ds.env_hash},
                       schedule=schedule)
    train_cfg = TrainConfig(
        learning_rate=tr.get("learning_rate", 3e-4),
        batch_size=tr.get("batch_size", 32),
        max_steps=tr.get("max_steps", 5000),
        patience=tr.get("patience", 10),
        eval_every=tr.get("eval_every", 100),
        seed=seed,
    )
    with open(os.path.join(out, "train_log.jsonl"), "w") as log:
        model, _ = train(norm.encode(train_arr), norm.encode(val_arr),
                         schedule, model, train_cfg, log_file=log)
    save_model(model, os.path.join(out, "model.ckpt"))
    return 0


def _write_batch(batch, path):
    payload = [{"dt": t.dt, "states": t.states.tolist()} for t in batch]
    with open(path, "w") as f:
        json.dump(payload, f)


def _cmd_plan(cfg, seed, out):
    env = bench_mod.env_from_config(cfg)
    robot = bench_mod.robot_from_config(cfg)
    planner = bench_mod.Planner(cfg, env, robot)
    rng = np.random.default_rng(seed)
    if "q_start" in cfg and "q_goal" in cfg:
        q_start = np.asarray(cfg["q_start"], dtype=float)
        q_goal = np.asarray(cfg["q_goal"], dtype=float)
    else:
        q_start = geometry.sample_free_config(env, robot, rng)
        q_goal = geometry.sample_free_config(env, robot, rng)
    batch = planner.plan(q_start, q_goal, rng)
    _write_batch(batch, os.path.join(out, "trajectories.json"))
    if robot.kind == "point-mass-2d":
        render_svg(batch, env, robot, os.path.join(out, "trajectories.svg"))
    return 0


def _cmd_bench(cfg, seed, out):
    bench_mod.run_benchmark(cfg, seed=seed, out_dir=out)
    return 0


def _cmd_render(cfg, seed, out):
    env = bench_mod.env_from_config(cfg)
    robot = bench_mod.robot_from_config(cfg)
    traj_path = cfg.get("trajectories")
    if traj_path is None:
        raise ConfigError("render requires a 'trajectories' JSON file")
    from .trajectory import Trajectory
    with open(bench_mod._resolve(traj_path, cfg["_base_dir"])) as f:
        payload = json.load(f)
    batch = [Trajectory(np.asarray(t["states"]), t["dt"]) for t in payload]
    render_svg(batch, env, robot, os.path.join(out, "render.svg"))
    return 0


_COMMANDS = {
    "gen-env": _cmd_gen_env,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "plan": _cmd_plan,
    "bench": _cmd_bench,
    "render": _cmd_render,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="diffplan")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.seed, args.out)
    except (ConfigError, dataset_mod.DatasetError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except PlannerFailure as e:
        print(f"planner failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
