"""Traversability-aware MPPI controller.

Prediction model: the affine traction model with ``mu`` read from a frozen
traversability image (bilinear lookup, 0 outside the camera footprint) and a
constant ``nu_bar``.  Cost per candidate control sequence::

    sum_{i<N} (|x_i - x^r_i|^2_Q + |u_i|^2_R) + |x_N - x^r_N|^2_QN + W * clearance

where the reference is the goal position with heading pointing at the goal
from x_i, and ``clearance = sum_i (1 - mean mu at M points around x_i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import Camera, TraversabilityImage
from .kinodynamics import ControlInput, State2D


@dataclass
class MpcConfig:
    N: int = 20
    dt: float = 0.15
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 2.0]))
    Q_N: np.ndarray = field(default_factory=lambda: np.diag([5.0, 5.0, 2.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.1]))
    W: float = 2.0
    clearance_samples: int = 16
    clearance_radius: float = 0.3
    nu_bar: float = 0.8
    v_min: float = 0.0
    v_max: float = 1.0
    omega_max: float = 1.0
    # fill the unseen wedge between robot and image bottom edge from the bottom row
    near_field: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.W < 0:
            raise ValueError("W must be non-negative")
        self.Q, self.Q_N, self.R = (np.asarray(m, dtype=float) for m in (self.Q, self.Q_N, self.R))
        for name, m, strict in (("Q", self.Q, False), ("Q_N", self.Q_N, False), ("R", self.R, True)):
            ev = np.linalg.eigvalsh(0.5 * (m + m.T))
            if (ev.min() <= 0) if strict else (ev.min() < -1e-12):
                raise ValueError(f"{name} must be {'positive definite' if strict else 'positive semidefinite'}")

    def clamp(self, U: np.ndarray) -> np.ndarray:
        out = np.empty_like(U)
        out[..., 0] = np.clip(U[..., 0], self.v_min, self.v_max)
        out[..., 1] = np.clip(U[..., 1], -self.omega_max, self.omega_max)
        return out


@dataclass
class MppiConfig:
    num_samples: int = 4096
    lam: float = 0.1
    sigma_v: float = 0.3
    sigma_omega: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


@dataclass
class ControlSequence:
    controls: np.ndarray  # (N, 2) rows of (v, omega)

    def __len__(self) -> int:
        return len(self.controls)

    def first(self) -> ControlInput:
        return ControlInput(float(self.controls[0, 0]), float(self.controls[0, 1]))

    def shifted(self) -> "ControlSequence":
        return ControlSequence(np.concatenate([self.controls[1:], self.controls[-1:]], axis=0))

    @classmethod
    def zeros(cls, n: int) -> "ControlSequence":
        return cls(np.zeros((n, 2)))


def _pose(p) -> np.ndarray:
    return p.as_array() if isinstance(p, State2D) else np.asarray(p, dtype=float)


def mu_lookup(img: TraversabilityImage, world_pt, camera: Camera, near_field: bool = False) -> float:
    """Traction at a world point read from the image's frozen frame; 0 outside the footprint."""
    pts = np.asarray(world_pt, dtype=float).reshape(1, 2)
    return float(kernels.lookup(pts, img.grid, camera.params(), _pose(img.frame_pose), near_field)[0])


def mu_lookup_many(img: TraversabilityImage, points, camera: Camera, near_field: bool = False) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    out = kernels.lookup(pts.reshape(-1, 2), img.grid, camera.params(), _pose(img.frame_pose), near_field)
    return out.reshape(pts.shape[:-1])


def disk_offsets(rng: np.random.Generator, shape, radius: float) -> np.ndarray:
    """Points uniform in a disk, shape ``shape + (2,)``."""
    r = radius * np.sqrt(rng.random(shape))
    a = 2.0 * math.pi * rng.random(shape)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)


def clearance_cost(states, img: TraversabilityImage, camera: Camera, M: int, radius: float,
                   rng: np.random.Generator, near_field: bool = False) -> float:
    """Sum over states of 1 - (mean mu over M points uniform in a disk around the state)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    xy = np.array([_pose(s)[:2] for s in states])
    pts = xy[:, None, :] + disk_offsets(rng, (len(xy), M), radius)
    mu = mu_lookup_many(img, pts, camera, near_field)
    return float(np.sum(1.0 - mu.mean(axis=1)))


def rollout_cost(u_seq: ControlSequence, x0, goal, img: TraversabilityImage, camera: Camera,
                 cfg: MpcConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Predicted states (N+1, 3) and total cost of one control sequence."""
    U = np.asarray(u_seq.controls, dtype=float)
    if len(U) != cfg.N:
        raise ValueError(f"control sequence must have length N={cfg.N}")
    offsets = disk_offsets(rng, (cfg.N, cfg.clearance_samples), cfg.clearance_radius)
    costs, states = kernels.rollout_costs(
        _pose(x0), U[None], cfg.dt, cfg.nu_bar, img.grid, camera.params(), _pose(img.frame_pose),
        cfg.near_field, np.asarray(goal, dtype=float), cfg.Q, cfg.Q_N, cfg.R, cfg.W, offsets, True)
    return states[0], float(costs[0])


def mppi_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Normalized exp(-(C - C_min) / lambda)."""
    c = np.asarray(costs, dtype=float)
    w = np.exp(-(c - c.min()) / lam)
    return w / w.sum()


@dataclass
class MppiInfo:
    cost_min: float
    cost_mean: float
    weight_entropy: float


def mppi_step(x0, goal, img: TraversabilityImage, warm_start: ControlSequence, mcfg: MppiConfig,
              cfg: MpcConfig, camera: Camera, rng: np.random.Generator):
    """One MPPI iteration around ``warm_start``.

    Sample i's perturbation is row i of a single (K, N, 2) normal draw, so
    the result does not depend on evaluation order.  Returns the updated
    sequence, the control to apply, the next warm start and diagnostics.
    """
    U0 = np.asarray(warm_start.controls, dtype=float)
    if len(U0) != cfg.N:
        raise ValueError(f"warm start must have length N={cfg.N}")
    U0 = cfg.clamp(U0)
    K = mcfg.num_samples
    eps = rng.standard_normal((K, cfg.N, 2)) * np.array([mcfg.sigma_v, mcfg.sigma_omega])
    offsets = disk_offsets(rng, (cfg.N, cfg.clearance_samples), cfg.clearance_radius)
    cand = cfg.clamp(U0[None] + eps)
    costs, _ = kernels.rollout_costs(
        _pose(x0), cand, cfg.dt, cfg.nu_bar, img.grid, camera.params(), _pose(img.frame_pose),
        cfg.near_field, np.asarray(goal, dtype=float), cfg.Q, cfg.Q_N, cfg.R, cfg.W, offsets, False)
    w = mppi_weights(costs, mcfg.lam)
    U = cfg.clamp(U0 + np.tensordot(w, eps, axes=1))
    seq = ControlSequence(U)
    nz = w[w > 0]
    info = MppiInfo(float(costs.min()), float(costs.mean()), float(-(nz * np.log(nz)).sum()))
    return seq, seq.first(), seq.shifted(), info


class MppiController:
    """Receding-horizon wrapper holding the warm start and a per-step RNG stream."""

    def __init__(self, mcfg: MppiConfig, cfg: MpcConfig, camera: Camera):
        self.mcfg, self.cfg, self.camera = mcfg, cfg, camera
        self.warm = ControlSequence.zeros(cfg.N)
        self.step_index = 0

    def __call__(self, x0, goal, img: TraversabilityImage):
        rng = np.random.default_rng([self.mcfg.seed, self.step_index])
        self.step_index += 1
        seq, applied, self.warm, info = mppi_step(x0, goal, img, self.warm, self.mcfg, self.cfg, self.camera, rng)
        return applied, seq, info
