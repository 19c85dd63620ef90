import copy
import json
import os

import numpy as np
import pytest

from diffplan import geometry
from diffplan.bench import ConfigError, Planner, load_run_config, run_benchmark
from diffplan.cli import main
from diffplan.geometry import Environment, SdfPrimitive

BOUNDS = (np.full(2, -1.0), np.full(2, 1.0))


def write_env(path, primitives=None, extras=None):
    env = Environment(
        primitives if primitives is not None else
        [SdfPrimitive("sphere", np.array([0.3, 0.3]), radius=0.15)],
        BOUNDS,
        extra_primitives=extras or [],
    )
    geometry.save_environment(env, path)
    return env


def base_config(tmp_path, **overrides):
    env_path = tmp_path / "env.json"
    if not env_path.exists():
        write_env(env_path)
    cfg = {
        "environment": "env.json",
        "robot": geometry.robot_to_dict(
            geometry.point_mass_robot(bounds=(-1.0, 1.0), radius=0.02)),
        "planner": "rrt",
        "batch_size": 4,
        "n_contexts": 2,
        "H": 12,
        "dt": 0.05,
        "rrt": {"step_size": 0.15, "max_iters": 4000},
        "_base_dir": str(tmp_path),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, name="run.json", **overrides):
    cfg = base_config(tmp_path, **overrides)
    cfg.pop("_base_dir")
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def strip_times(report):
    report = copy.deepcopy(report)
    report["aggregate"].pop("time_s", None)
    for row in report["contexts"]:
        row.pop("time_s", None)
    return report


class TestRunBenchmark:
    def test_rrt_smoke(self, tmp_path):
        report = run_benchmark(base_config(tmp_path), seed=0, out_dir=tmp_path / "out")
        assert report["planner"] == "rrt"
        assert len(report["contexts"]) == 2
        for row in report["contexts"]:
            assert row["success"] in (0, 1)
            assert 0.0 <= row["intensity"] <= 1.0
            assert row["path_length"] >= 0.0
            assert row["waypoint_variance"] >= 0.0
        for key in ("time_s", "success", "intensity", "path_length", "waypoint_variance"):
            assert "mean" in report["aggregate"][key]
        with open(tmp_path / "out" / "report.json") as f:
            on_disk = json.load(f)
        assert strip_times(on_disk) == strip_times(report)

    def test_seed_deterministic(self, tmp_path):
        r1 = run_benchmark(base_config(tmp_path), seed=5)
        r2 = run_benchmark(base_config(tmp_path), seed=5)
        assert strip_times(r1) == strip_times(r2)

    def test_gpmp_planner(self, tmp_path):
        cfg = base_config(tmp_path, planner="gpmp", batch_size=1,
                          costs=[{"kind": "collision", "weight": 30.0},
                                 {"kind": "gp-smoothness", "weight": 1.0}],
                          gpmp={"iterations": 30})
        report = run_benchmark(cfg, seed=1)
        assert all("success" in row for row in report["contexts"])

    def test_unknown_planner(self, tmp_path):
        with pytest.raises(ConfigError):
            Planner(base_config(tmp_path, planner="astar"),
                    Environment([], BOUNDS), geometry.point_mass_robot())

    def test_model_required(self, tmp_path):
        cfg = base_config(tmp_path, planner="mpd")
        with pytest.raises(ConfigError):
            Planner(cfg, Environment([], BOUNDS), geometry.point_mass_robot())

    def test_extra_obstacles_flag(self, tmp_path):
        env_path = tmp_path / "env.json"
        write_env(env_path, extras=[SdfPrimitive("sphere", np.zeros(2), radius=0.1)])
        from diffplan.bench import env_from_config
        cfg = base_config(tmp_path)
        assert len(env_from_config(cfg).all_primitives()) == 1
        cfg["use_extra_obstacles"] = True
        assert len(env_from_config(cfg).all_primitives()) == 2


class TestCli:
    def test_gen_env(self, tmp_path):
        cfg = tmp_path / "g.json"
        cfg.write_text(json.dumps({"env_gen": {"n_spheres": 3, "n_boxes": 2}}))
        rc = main(["gen-env", "--config", str(cfg), "--seed", "3",
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        env = geometry.load_environment(tmp_path / "out" / "env.json")
        assert len(env.primitives) == 5

    def test_plan_rrt_writes_outputs(self, tmp_path):
        cfg = write_config(tmp_path, q_start=[-0.8, -0.8], q_goal=[0.8, 0.8])
        rc = main(["plan", "--config", str(cfg), "--seed", "0",
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        with open(tmp_path / "out" / "trajectories.json") as f:
            batch = json.load(f)
        assert len(batch) == 4
        assert (tmp_path / "out" / "trajectories.svg").exists()

    def test_planner_failure_exit_code(self, tmp_path):
        write_env(tmp_path / "env.json",
                  primitives=[SdfPrimitive("box", np.zeros(2),
                                           half_extents=np.array([0.05, 2.0]))])
        cfg = write_config(tmp_path, q_start=[-0.5, 0.0], q_goal=[0.5, 0.0],
                           rrt={"step_size": 0.15, "max_iters": 40})
        rc = main(["plan", "--config", str(cfg), "--seed", "0",
                   "--out", str(tmp_path / "out")])
        assert rc == 1

    def test_config_error_exit_code(self, tmp_path):
        rc = main(["bench", "--config", str(tmp_path / "missing.json"),
                   "--seed", "0", "--out", str(tmp_path / "out")])
        assert rc == 2

    def test_bad_planner_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, planner="bogus")
        rc = main(["bench", "--config", str(cfg), "--seed", "0",
                   "--out", str(tmp_path / "out")])
        assert rc == 2

    def test_bench_writes_report(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["bench", "--config", str(cfg), "--seed", "0",
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        report = json.load(open(tmp_path / "out" / "report.json"))
        assert report["n_contexts"] == 2

    def test_render_round_trip(self, tmp_path):
        cfg = write_config(tmp_path, q_start=[-0.8, -0.8], q_goal=[0.8, 0.8])
        assert main(["plan", "--config", str(cfg), "--seed", "0",
                     "--out", str(tmp_path / "out")]) == 0
        rcfg = base_config(tmp_path)
        rcfg.pop("_base_dir")
        rcfg["trajectories"] = os.path.join("out", "trajectories.json")
        rpath = tmp_path / "render.json"
        rpath.write_text(json.dumps(rcfg))
        assert main(["render", "--config", str(rpath), "--seed", "0",
                     "--out", str(tmp_path / "out2")]) == 0
        assert (tmp_path / "out2" / "render.svg").exists()

    def test_gen_data_then_train(self, tmp_path):
        cfg = write_config(
            tmp_path, name="data.json",
            data={"n_contexts": 3, "n_per_context": 2}, H=8,
        )
        assert main(["gen-data", "--config", str(cfg), "--seed", "0",
                     "--out", str(tmp_path)]) == 0
        from diffplan.dataset import load_dataset
        ds = load_dataset(tmp_path / "dataset")
        assert ds.H == 8 and ds.n_contexts == 3

        tcfg = write_config(
            tmp_path, name="train.json", dataset="dataset",
            train={"val_fraction": 0.34, "channels": 6, "kernel": 3,
                   "time_dim": 8, "max_steps": 30, "eval_every": 10},
        )
        assert main(["train", "--config", str(tcfg), "--seed", "0",
                     "--out", str(tmp_path / "run")]) == 0
        from diffplan.denoiser import load_model
        model = load_model(tmp_path / "run" / "model.ckpt")
        assert model.config.H == 8
        assert model.meta["env_hash"] == ds.env_hash
        log_lines = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) >= 3
        assert all("val_loss" in json.loads(l) for l in log_lines)
