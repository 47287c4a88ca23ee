import csv
import json
import math

import numpy as np
import pytest

from tractionnav.camera import ground_grid, project_ground_point
from tractionnav.cli import main
from tractionnav.config import ConfigError, from_dict, load_config
from tractionnav.harness import collect_dataset, collect_log, predictor_for, run_batch, run_episode
from tractionnav.kinodynamics import State2D
from tractionnav.labeling import load_dataset
from tractionnav.world import Patch, TractionField

EMPTY = {
    "world": {"base_mu": 0.9, "base_nu": 0.9},
    "episode": {"start": [0, 0, 0], "goal": [5, 0], "time_budget": 30},
    "mpc": {"nu_bar": 0.9},
    "mppi": {"num_samples": 1024},
}


def cfg_from(**sections):
    d = {k: dict(v) for k, v in EMPTY.items()}
    for k, v in sections.items():
        d.setdefault(k, {}).update(v)
    return from_dict(d)


class TestPredictors:
    def setup_method(self):
        self.cfg = cfg_from()
        self.pose = State2D(0, 0, 0)

    def _pixel(self, xy):
        u, v = project_ground_point(xy, self.pose, self.cfg.camera.intr, self.cfg.camera.extr)
        return int(round(v)), int(round(u))

    def test_blind_all_ones(self):
        w = TractionField(0.9, 0.9, [Patch((3, 0), 0.5, 0.0, height=1.0)])
        img = predictor_for("blind", w, self.cfg)(self.pose, self.pose)
        _, _, valid = ground_grid(self.cfg.camera, self.pose)
        assert np.all(img.grid[valid] == 1.0) and np.all(img.grid[~valid] == 0.0)

    def test_geometric_ignores_flat_patch(self):
        w = TractionField(0.9, 0.9, [Patch((3, 0), 0.5, 0.05)])
        img = predictor_for("geometric", w, self.cfg)(self.pose, self.pose)
        assert img.grid[self._pixel((3, 0))] == 1.0

    def test_geometric_sees_tree(self):
        w = TractionField(0.9, 0.9, [Patch((3, 0), 0.5, 0.0, height=1.0)])
        img = predictor_for("geometric", w, self.cfg)(self.pose, self.pose)
        assert img.grid[self._pixel((3, 0))] == 0.0

    def test_wayfast_sees_flat_patch(self):
        w = TractionField(0.9, 0.9, [Patch((3, 0), 0.5, 0.05)])
        img = predictor_for("wayfast", w, self.cfg)(self.pose, self.pose)
        assert img.grid[self._pixel((3, 0))] == pytest.approx(0.05)

    def test_unknown(self):
        with pytest.raises(ValueError):
            predictor_for("lidar", TractionField(), self.cfg)


class TestEpisode:
    def test_empty_world_reaches(self, tmp_path):
        res = run_episode(cfg_from(), tmp_path)
        assert res.outcome == "reached"
        assert res.path_length <= 5.25
        assert res.final_distance <= 0.3
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["outcome"] == "reached"
        with open(tmp_path / "episode.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == int(round(res.elapsed / 0.1))

    def test_start_in_zero_disk_is_stuck(self):
        cfg = cfg_from(world={"patches": [{"center": [0, 0], "radius": 1.0, "mu": 0.0}]})
        res = run_episode(cfg)
        assert res.outcome == "stuck" and res.elapsed <= 6.0

    def test_timeout(self):
        res = run_episode(cfg_from(episode={"time_budget": 1.0}))
        assert res.outcome == "timeout" and res.elapsed == pytest.approx(1.0)

    def test_same_seed_same_result(self, tmp_path):
        cfg = cfg_from(episode={"seed": 5})
        a = run_episode(cfg, tmp_path / "a")
        b = run_episode(cfg, tmp_path / "b")
        assert a.summary() | {"log_path": None} == b.summary() | {"log_path": None}
        assert (tmp_path / "a" / "episode.csv").read_bytes() == (tmp_path / "b" / "episode.csv").read_bytes()

    def test_seed_changes_log(self, tmp_path):
        run_episode(cfg_from(episode={"seed": 1}), tmp_path / "a")
        run_episode(cfg_from(episode={"seed": 2}), tmp_path / "b")
        assert (tmp_path / "a" / "episode.csv").read_bytes() != (tmp_path / "b" / "episode.csv").read_bytes()


class TestBatch:
    def test_single_run_table(self, tmp_path):
        table, results = run_batch(cfg_from(), [0], ["wayfast"], tmp_path)
        assert len(table) == 1 and table[0]["success_rate"] in (0.0, 1.0)
        with open(tmp_path / "results.csv") as f:
            rows = list(csv.DictReader(f))
        assert rows[0]["controller"] == "wayfast" and rows[0]["total_tries"] == "1"

    def test_errors_count_as_failures(self, monkeypatch):
        import tractionnav.harness as h

        def boom(cfg, out_dir=None, world=None):
            raise RuntimeError("solver exploded")
        monkeypatch.setattr(h, "run_episode", boom)
        table, results = h.run_batch(cfg_from(), [0, 1], ["blind"])
        assert table[0]["successful_runs"] == 0
        assert "solver exploded" in results[("blind", 0)].reason

    def test_parallel_matches_serial(self):
        cfg = cfg_from(episode={"time_budget": 3.0})
        _, a = run_batch(cfg, [0, 1], ["wayfast", "blind"])
        _, b = run_batch(cfg, [0, 1], ["wayfast", "blind"], jobs=2)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].summary() == b[k].summary()
            assert np.array_equal(a[k].trajectory, b[k].trajectory)

    def test_needs_runs(self):
        with pytest.raises(ValueError):
            run_batch(cfg_from(), [], ["wayfast"])


SQUARE = {"waypoints": [[4, 0], [4, 4], [0, 4], [0, 0]], "speed": 0.6}


class TestCollect:
    def test_frame_budget(self, tmp_path):
        cfg = cfg_from(collect=SQUARE)
        collected, frames = collect_dataset(cfg, 60.0, tmp_path)
        assert len(frames) <= 121
        assert len(load_dataset(tmp_path / "dataset")) == len(frames)

    def test_uniform_world_labels(self):
        cfg = cfg_from(world={"base_mu": 0.8, "base_nu": 0.9}, collect=SQUARE | {"control_noise": [0.0, 0.0]},
                       sensors={"gnss_sigma": 0, "compass_sigma": 0, "gyro_sigma": 0},
                       process={"pos_sigma": 0, "theta_sigma": 0})
        labels = np.array([e.mu_label for e in collect_log(cfg, 30.0).log.entries])
        assert labels.size > 0
        assert labels.min() >= 0.75 and labels.max() <= 0.85

    def test_stuck_patch_gives_low_labels(self):
        cfg = cfg_from(world={"patches": [{"center": [4, 2], "radius": 0.8, "mu": 0.02}]}, collect=SQUARE)
        labels = np.array([e.mu_label for e in collect_log(cfg, 40.0).log.entries])
        assert (labels <= 0.1).any()

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            collect_log(cfg_from(), 0.0)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            from_dict({"mpc": {"horizon": 5}})

    def test_invalid_goal_radius(self):
        with pytest.raises(ConfigError):
            from_dict({"episode": {"goal_radius": 0}})

    def test_unknown_controller(self):
        with pytest.raises(ConfigError):
            from_dict({"episode": {"controller": "lidar"}})

    def test_matrix_forms(self):
        c = from_dict({"mpc": {"Q": [1, 2, 3], "R": [[1, 0], [0, 2]]}})
        assert np.array_equal(c.mpc.Q, np.diag([1.0, 2.0, 3.0])) and c.mpc.R[1, 1] == 2.0

    def test_lambda_and_pitch(self):
        c = from_dict({"mppi": {"lambda": 0.5}, "camera": {"pitch_down_deg": 30}})
        assert c.mppi.lam == 0.5 and c.camera.extr.pitch_down == pytest.approx(math.radians(30))

    def test_shipped_configs_load(self):
        from pathlib import Path
        for p in sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")):
            cfg = load_config(p)
            cfg.build_world()


class TestCli:
    def test_episode(self, tmp_path, capsys):
        import yaml
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(EMPTY))
        assert main(["episode", "--config", str(tmp_path / "c.yaml"), "--seed", "3", "--out", str(tmp_path / "o")]) == 0
        assert json.loads(capsys.readouterr().out)["outcome"] == "reached"
        assert (tmp_path / "o" / "episode.csv").exists()

    def test_batch_and_bad_controller(self, tmp_path, capsys):
        import yaml
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(EMPTY))
        assert main(["batch", "--config", str(tmp_path / "c.yaml"), "--runs", "1", "--controllers", "blind",
                     "--out", str(tmp_path / "b")]) == 0
        assert "blind" in capsys.readouterr().out
        with pytest.raises(SystemExit):
            main(["batch", "--config", str(tmp_path / "c.yaml"), "--runs", "1", "--controllers", "lidar",
                  "--out", str(tmp_path / "b")])

    def test_collect_then_labelgen(self, tmp_path):
        import yaml
        d = dict(EMPTY, collect=SQUARE)
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
        assert main(["collect", "--config", str(tmp_path / "c.yaml"), "--duration", "10", "--out", str(tmp_path / "c")]) == 0
        assert main(["labelgen", "--log", str(tmp_path / "c" / "log"), "--out", str(tmp_path / "d")]) == 0
        a = (tmp_path / "c" / "dataset" / "index.csv").read_text()
        assert a == (tmp_path / "d" / "index.csv").read_text()

    def test_missing_config(self, tmp_path):
        assert main(["episode", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
