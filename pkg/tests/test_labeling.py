import math

import numpy as np
import pytest

from tractionnav.camera import Camera, ground_grid, project_ground_point
from tractionnav.kinodynamics import State2D
from tractionnav.labeling import (
    LabelImage, LdsWeighting, LogEntry, TrajectoryLog, downsample_frames, generate_dataset, lds_weights,
    load_dataset, project_path_labels, sparse_l1_loss,
)

CAM = Camera()
ORIGIN = State2D(0, 0, 0)


def straight_log(mu=1.0, n=60, speed=0.1, y=0.0):
    return TrajectoryLog([LogEntry(0.1 * k, State2D(speed * k, y, 0.0), mu) for k in range(n)])


class TestDownsample:
    def test_regular(self):
        times = [0.1 * k for k in range(21)]
        assert [times[i] for i in downsample_frames(times, 2.0)] == pytest.approx([0, 0.5, 1.0, 1.5, 2.0])

    def test_single(self):
        assert downsample_frames([3.0], 2.0) == [0]

    def test_irregular(self):
        times = [0, 0.4, 0.6, 1.2]
        assert [times[i] for i in downsample_frames(times, 2.0)] == [0, 0.6, 1.2]

    def test_count_bound(self):
        times = [0.1 * k for k in range(601)]
        assert len(downsample_frames(times, 2.0)) <= 121


class TestProjectPathLabels:
    def test_straight_ribbon_centered_and_tapered(self):
        lab = project_path_labels(ORIGIN, straight_log(), 0.4, CAM)
        rows = [r for r in range(lab.mask.shape[0]) if lab.mask[r].any()]
        assert rows
        widths = []
        for r in rows:
            cols = np.nonzero(lab.mask[r])[0]
            widths.append(len(cols))
            assert abs(cols.mean() - CAM.intr.cx) <= 1.0
        # farther rows (smaller v) are narrower
        assert widths[0] < widths[-1]
        assert np.all(lab.values[lab.mask] == 1.0)

    def test_behind_gives_empty_mask(self):
        log = TrajectoryLog([LogEntry(0.1 * k, State2D(-1 - 0.1 * k, 0, math.pi), 0.5) for k in range(20)])
        assert not project_path_labels(ORIGIN, log, 0.4, CAM).mask.any()

    def test_segment_centroid(self):
        a, b = State2D(2.7, 0.0, 0), State2D(2.9, 0.0, 0)
        log = TrajectoryLog([LogEntry(0.0, a, 0.5), LogEntry(0.1, b, 0.5)])
        lab = project_path_labels(ORIGIN, log, 0.2, CAM)
        vs, us = np.nonzero(lab.mask)
        u, v = project_ground_point((2.8, 0.0), ORIGIN, CAM.intr, CAM.extr)
        assert abs(us.mean() - u) <= 1.0 and abs(vs.mean() - v) <= 1.0

    def test_labels_only_in_view(self):
        log = TrajectoryLog([LogEntry(0.1 * k, State2D(0.2 * k, 0.05 * k, 0.2), 0.7) for k in range(60)])
        lab = project_path_labels(ORIGIN, log, 0.4, CAM)
        _, _, valid = ground_grid(CAM, ORIGIN)
        assert lab.mask.any() and not (lab.mask & ~valid).any()

    def test_later_segment_wins(self):
        log = TrajectoryLog([LogEntry(0.0, State2D(2.0, 0, 0), 0.2), LogEntry(1.0, State2D(3.0, 0, 0), 0.9),
                             LogEntry(2.0, State2D(2.0, 0, 0), 0.9)])
        lab = project_path_labels(ORIGIN, log, 0.4, CAM)
        assert np.all(lab.values[lab.mask] == 0.9)


class TestLds:
    def test_uniform_histogram(self):
        w = lds_weights(np.linspace(0.025, 0.975, 20).repeat(5), bins=20, sigma_bins=2.0)
        assert np.allclose(w.weight_per_bin, 1.0)

    def test_rare_bin_upweighted(self):
        labels = np.concatenate([np.full(90, 0.97), np.full(10, 0.02)])
        w = lds_weights(labels, bins=10, sigma_bins=1.0)
        assert w.weight_of([0.02])[0] > w.weight_of([0.97])[0]

    def test_two_bin_delta_kernel(self):
        w = lds_weights([0.1] * 9 + [0.9], bins=2, sigma_bins=0.0)
        assert list(w.weight_per_bin) == [0.2, 1.8]

    def test_validation(self):
        with pytest.raises(ValueError):
            lds_weights([1.2])
        with pytest.raises(ValueError):
            lds_weights([])


class TestLoss:
    def setup_method(self):
        self.mask = np.zeros((4, 4), dtype=bool)
        self.mask[1:3, 1:3] = True

    def test_exact_prediction(self):
        lab = LabelImage(np.full((4, 4), 0.6), self.mask, 0.0)
        assert sparse_l1_loss(np.full((4, 4), 0.6), lab) == 0.0

    def test_all_wrong(self):
        lab = LabelImage(np.ones((4, 4)), self.mask, 0.0)
        assert sparse_l1_loss(np.zeros((4, 4)), lab, LdsWeighting.uniform()) == 1.0

    def test_half_off(self):
        lab = LabelImage(np.full((4, 4), 0.5), self.mask, 0.0)
        pred = np.full((4, 4), 0.5)
        pred[1, 1:3] = 0.7
        assert sparse_l1_loss(pred, lab) == pytest.approx(0.1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sparse_l1_loss(np.zeros((3, 3)), LabelImage(np.zeros((4, 4)), self.mask, 0.0))


class TestDataset:
    def test_write_and_load(self, tmp_path):
        log = straight_log(mu=0.8, n=50)
        times = [e.timestamp for e in log.entries]
        poses = [e.pose for e in log.entries]
        frames = generate_dataset(log, times, poses, CAM, tmp_path)
        back = load_dataset(tmp_path)
        assert len(back) == len(frames) == 10
        assert (tmp_path / "lds.csv").exists()
        for (_, lab), rec in zip(frames, back):
            assert np.array_equal(lab.mask, rec["mask"])
            assert np.allclose(rec["values"][rec["mask"]], 0.8, atol=0.5 / 255)

    def test_log_csv_round_trip(self, tmp_path):
        log = straight_log(mu=0.3, n=5)
        log.to_csv(tmp_path / "t.csv")
        back = TrajectoryLog.from_csv(tmp_path / "t.csv")
        assert back.entries == log.entries

    def test_log_order(self):
        log = straight_log(n=3)
        with pytest.raises(ValueError):
            log.append(LogEntry(0.0, ORIGIN, 0.5))
