"""Self-supervised traversability labels from driving logs.

Pipeline: pick frames at 2 fps, draw the robot's future path (a ribbon of
track width) with its estimated traction into each frame, then weight
labels by inverse smoothed label density and score predictions with a
masked L1 loss.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import Camera, TraversabilityImage, ground_grid, read_pgm, write_pgm
from .kinodynamics import State2D


@dataclass(frozen=True)
class LogEntry:
    timestamp: float
    pose: State2D
    mu_label: float


class TrajectoryLog:
    def __init__(self, entries: Sequence[LogEntry] = ()):
        self.entries: list[LogEntry] = []
        for e in entries:
            self.append(e)

    def append(self, e: LogEntry) -> None:
        if self.entries and e.timestamp <= self.entries[-1].timestamp:
            raise ValueError("log timestamps must increase")
        self.entries.append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TrajectoryLog(self.entries[i])
        return self.entries[i]

    def times(self) -> np.ndarray:
        return np.array([e.timestamp for e in self.entries])

    def since(self, t: float) -> "TrajectoryLog":
        return TrajectoryLog([e for e in self.entries if e.timestamp >= t])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "px", "py", "theta", "mu_label"])
            for e in self.entries:
                w.writerow([repr(e.timestamp), repr(e.pose.px), repr(e.pose.py), repr(e.pose.theta), repr(e.mu_label)])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return cls([LogEntry(float(r["t"]), State2D(float(r["px"]), float(r["py"]), float(r["theta"])),
                             float(r["mu_label"])) for r in rows])


@dataclass
class LabelImage:
    values: np.ndarray
    mask: np.ndarray
    source_frame_time: float

    def __post_init__(self):
        self.values = np.where(self.mask, self.values, 0.0)


@dataclass
class LdsWeighting:
    bin_edges: np.ndarray
    effective_density: np.ndarray
    weight_per_bin: np.ndarray

    def bin_of(self, labels) -> np.ndarray:
        b = len(self.weight_per_bin)
        return np.clip(np.floor(np.asarray(labels) * b).astype(int), 0, b - 1)

    def weight_of(self, labels) -> np.ndarray:
        return self.weight_per_bin[self.bin_of(labels)]

    @classmethod
    def uniform(cls, bins: int = 20) -> "LdsWeighting":
        return cls(np.linspace(0.0, 1.0, bins + 1), np.ones(bins), np.ones(bins))


def downsample_frames(frame_times: Sequence[float], target_rate: float = 2.0) -> list[int]:
    """Greedy: keep a frame once 1/rate seconds have passed since the last kept one."""
    period = 1.0 / target_rate
    kept: list[int] = []
    last = -math.inf
    for i, t in enumerate(frame_times):
        if not kept or t - last >= period - 1e-9:
            kept.append(i)
            last = t
    return kept


def _segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 < 1e-18:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def project_path_labels(frame_pose: State2D, future: TrajectoryLog, track_width: float, camera: Camera,
                        frame_time: float = 0.0) -> LabelImage:
    """Rasterize the future path as a ribbon into the frame's image.

    Each segment between consecutive future poses carries the label of its
    starting entry; later segments overwrite earlier ones.  Only pixels whose
    ground point lies within camera range can be labeled.
    """
    wx, wy, valid = ground_grid(camera, frame_pose)
    values = np.zeros(valid.shape)
    mask = np.zeros(valid.shape, dtype=bool)
    ents = future.entries
    if len(ents) == 0 or not valid.any():
        return LabelImage(values, mask, frame_time)
    gx, gy = wx[valid], wy[valid]
    vals = np.zeros(gx.shape)
    hit = np.zeros(gx.shape, dtype=bool)
    half = 0.5 * track_width
    reach = camera.max_range + camera.extr.forward_offset + half
    pairs = zip(ents, ents[1:]) if len(ents) > 1 else [(ents[0], ents[0])]
    for a, b in pairs:
        if math.hypot(a.pose.px - frame_pose.px, a.pose.py - frame_pose.py) > reach:
            continue
        # cull to the segment's bounding box before the exact distance test
        lo_x, hi_x = min(a.pose.px, b.pose.px) - half, max(a.pose.px, b.pose.px) + half
        lo_y, hi_y = min(a.pose.py, b.pose.py) - half, max(a.pose.py, b.pose.py) + half
        cand = np.nonzero((gx >= lo_x) & (gx <= hi_x) & (gy >= lo_y) & (gy <= hi_y))[0]
        if cand.size == 0:
            continue
        d = _segment_distance(gx[cand], gy[cand], a.pose.px, a.pose.py, b.pose.px, b.pose.py)
        sel = cand[d <= half]
        vals[sel] = a.mu_label
        hit[sel] = True
    values[valid] = vals
    mask[valid] = hit
    return LabelImage(values, mask, frame_time)


def _gaussian_kernel(sigma_bins: float, bins: int) -> np.ndarray:
    if sigma_bins <= 0:
        return np.array([1.0])
    half = min(int(math.ceil(3.0 * sigma_bins)), bins - 1)
    x = np.arange(-half, half + 1)
    k = np.exp(-0.5 * (x / sigma_bins) ** 2)
    return k / k.sum()


def lds_weights(labels, bins: int = 20, sigma_bins: float = 2.0) -> LdsWeighting:
    """Label-distribution-smoothing weights over ``bins`` equal bins of [0, 1].

    Smoothed density uses a truncated Gaussian kernel renormalized at the
    histogram edges; weights are inverse density, scaled to mean 1 over the
    occupied bins.  Empty bins with zero smoothed density take the largest
    occupied weight so every weight stays positive.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    labels = np.asarray(labels, dtype=float).ravel()
    if labels.size == 0:
        raise ValueError("empty label set")
    if labels.min() < 0.0 or labels.max() > 1.0:
        raise ValueError("labels must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.bincount(np.clip(np.floor(labels * bins).astype(int), 0, bins - 1), minlength=bins).astype(float)
    freq = counts / counts.sum()
    k = _gaussian_kernel(sigma_bins, bins)
    ones = np.ones(bins)
    density = np.convolve(freq, k, mode="same") / np.convolve(ones, k, mode="same")
    occupied = counts > 0
    inv = np.zeros(bins)
    pos = density > 0
    inv[pos] = 1.0 / density[pos]
    w = occupied.sum() * inv / inv[occupied].sum()
    w[~pos] = w[occupied].max()
    return LdsWeighting(edges, density, w)


def sparse_l1_loss(prediction: TraversabilityImage | np.ndarray, label: LabelImage,
                   weights: LdsWeighting | None = None) -> float:
    """Mean of w(label) * |prediction - label| over the label mask."""
    pred = prediction.grid if isinstance(prediction, TraversabilityImage) else np.asarray(prediction)
    if pred.shape != label.values.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs label {label.values.shape}")
    m = label.mask
    if not m.any():
        return 0.0
    lab = label.values[m]
    w = np.ones_like(lab) if weights is None else weights.weight_of(lab)
    return float(np.mean(w * np.abs(pred[m] - lab)))


# --- dataset layout ------------------------------------------------------
#
#   <out>/index.csv          frame, t, px, py, theta, label_file, mask_file, n_labeled
#   <out>/labels/NNNNNN.pgm  label values (mu * 255), 0 where unlabeled
#   <out>/masks/NNNNNN.pgm   255 where labeled, 0 elsewhere
#   <out>/lds.csv            bin_lo, bin_hi, density, weight

INDEX_COLUMNS = ["frame", "t", "px", "py", "theta", "label_file", "mask_file", "n_labeled"]


def generate_dataset(log: TrajectoryLog, frame_times: Sequence[float], frame_poses: Sequence[State2D],
                     camera: Camera, out_dir, track_width: float = 0.4, fps: float = 2.0,
                     bins: int = 20, sigma_bins: float = 2.0) -> list[tuple[float, LabelImage]]:
    """Label the downsampled frames of a log and write them to ``out_dir``."""
    out = Path(out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    results = []
    rows = []
    for n, i in enumerate(downsample_frames(frame_times, fps)):
        t, pose = frame_times[i], frame_poses[i]
        lab = project_path_labels(pose, log.since(t), track_width, camera, t)
        name = f"{n:06d}.pgm"
        write_pgm(out / "labels" / name, lab.values)
        write_pgm(out / "masks" / name, lab.mask.astype(float))
        rows.append([n, repr(t), repr(pose.px), repr(pose.py), repr(pose.theta),
                     f"labels/{name}", f"masks/{name}", int(lab.mask.sum())])
        results.append((t, lab))
    with open(out / "index.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(INDEX_COLUMNS)
        w.writerows(rows)
    all_labels = np.concatenate([lab.values[lab.mask] for _, lab in results]) if results else np.array([])
    if all_labels.size:
        lds = lds_weights(all_labels, bins, sigma_bins)
        with open(out / "lds.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_lo", "bin_hi", "density", "weight"])
            for b in range(bins):
                w.writerow([repr(lds.bin_edges[b]), repr(lds.bin_edges[b + 1]),
                            repr(lds.effective_density[b]), repr(lds.weight_per_bin[b])])
    return results


def load_dataset(out_dir) -> list[dict]:
    """Read back a dataset directory: one dict per frame with pose, values, mask."""
    out = Path(out_dir)
    with open(out / "index.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    frames = []
    for r in rows:
        frames.append({
            "t": float(r["t"]),
            "pose": State2D(float(r["px"]), float(r["py"]), float(r["theta"])),
            "values": read_pgm(out / r["label_file"]),
            "mask": read_pgm(out / r["mask_file"]) > 0.5,
        })
    return frames
