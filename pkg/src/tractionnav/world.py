"""Simulated planar world: ground-truth traction, obstacles, plant and sensors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinodynamics import ControlInput, State2D, TractionParams, rk4_raw, wrap_angle


@dataclass(frozen=True)
class Patch:
    """Closed disk of modified terrain.

    ``height`` > 0 marks a geometric obstacle (tree trunk, rock); height 0
    patches are flat hazards such as snow that only a semantic sensor sees.
    """

    center: tuple[float, float]
    radius: float
    mu_value: float
    height: float = 0.0
    nu_value: float | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"patch radius must be positive, got {self.radius}")
        if not 0.0 <= self.mu_value <= 1.0:
            raise ValueError(f"patch mu_value must lie in [0, 1], got {self.mu_value}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass
class TractionField:
    base_mu: float = 0.9
    base_nu: float = 0.9
    patches: list[Patch] = field(default_factory=list)

    def __post_init__(self):
        # larger disks first so that smaller (inner) ones overwrite them;
        # stable sort keeps list order among equal radii (later wins)
        self._order = sorted(self.patches, key=lambda p: -p.radius)

    def _containing(self, x: float, y: float) -> Patch | None:
        hit = None
        for p in self._order:
            dx, dy = x - p.center[0], y - p.center[1]
            if dx * dx + dy * dy <= p.radius * p.radius:
                hit = p
        return hit

    def traction_at(self, x: float, y: float) -> TractionParams:
        p = self._containing(x, y)
        if p is None:
            return TractionParams(self.base_mu, self.base_nu)
        nu = self.base_nu if p.nu_value is None else p.nu_value
        return TractionParams(p.mu_value, nu)

    def mu_many(self, x: np.ndarray, y: np.ndarray, patches: list[Patch] | None = None) -> np.ndarray:
        """Vectorized mu lookup.  ``patches`` restricts the candidates (culling)."""
        out = np.full(np.shape(x), self.base_mu, dtype=float)
        order = self._order if patches is None else sorted(patches, key=lambda p: -p.radius)
        for p in order:
            inside = (x - p.center[0]) ** 2 + (y - p.center[1]) ** 2 <= p.radius * p.radius
            out[inside] = p.mu_value
        return out

    def patches_near(self, x: float, y: float, reach: float) -> list[Patch]:
        return [p for p in self.patches if math.hypot(p.center[0] - x, p.center[1] - y) <= reach + p.radius]


@dataclass(frozen=True)
class SensorNoise:
    gnss_sigma: float = 0.1
    compass_sigma: float = 0.05
    gyro_sigma: float = 0.01
    delta_theta_true: float = 0.0

    def __post_init__(self):
        if min(self.gnss_sigma, self.compass_sigma, self.gyro_sigma) < 0:
            raise ValueError("noise sigmas must be non-negative")
        object.__setattr__(self, "delta_theta_true", wrap_angle(self.delta_theta_true))


@dataclass(frozen=True)
class MeasurementSample:
    z_x: float
    z_y: float
    z_theta: float
    timestamp: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.z_x, self.z_y, self.z_theta])


@dataclass(frozen=True)
class ProcessNoise:
    """Per-sqrt-second standard deviations of the additive state noise."""

    pos_sigma: float = 0.005
    theta_sigma: float = 0.002


def sim_step(
    true_state: State2D,
    u: ControlInput,
    dt: float,
    rng: np.random.Generator,
    traction: TractionField,
    process: ProcessNoise = ProcessNoise(0.0, 0.0),
) -> State2D:
    """Advance the plant one step with ground-truth traction and process noise.

    Noise is always drawn (3 normals) so the RNG stream does not depend on
    whether the configured sigmas are zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = traction.traction_at(true_state.px, true_state.py)
    px, py, th = rk4_raw(true_state.px, true_state.py, true_state.theta, u.v, u.omega, p.mu, p.nu, dt)
    n = rng.standard_normal(3)
    sq = math.sqrt(dt)
    return State2D(
        px + process.pos_sigma * sq * n[0],
        py + process.pos_sigma * sq * n[1],
        th + process.theta_sigma * sq * n[2],
    )


def sample_sensors(
    true_state: State2D,
    true_yaw_rate: float,
    noise: SensorNoise,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> tuple[MeasurementSample, float]:
    """GNSS position, compass heading and gyro yaw rate.

    The compass reads ``theta - delta_theta_true`` so that
    ``theta = z_theta + delta_theta`` holds on average.
    """
    n = rng.standard_normal(4)
    z = MeasurementSample(
        true_state.px + noise.gnss_sigma * n[0],
        true_state.py + noise.gnss_sigma * n[1],
        wrap_angle(true_state.theta - noise.delta_theta_true + noise.compass_sigma * n[2]),
        timestamp,
    )
    return z, true_yaw_rate + noise.gyro_sigma * n[3]


# --- analog worlds ---------------------------------------------------------

def _segment_point_distance(a, b, p) -> float:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / (dx * dx + dy * dy)
    t = min(max(t, 0.0), 1.0)
    return math.hypot(ax + t * dx - p[0], ay + t * dy - p[1])


def forest_analog(
    layout_seed: int,
    start=(5.0, 10.0),
    goal=(35.0, 10.0),
    size=(40.0, 20.0),
    n_trees: int = 12,
    radius_range=(0.4, 0.8),
    min_gap: float = 1.5,
    blocking: int = 3,
    block_span=(0.45, 0.9),
    keep_clear: float = 3.0,
    base_mu: float = 0.9,
    base_nu: float = 0.9,
    tree_height: float = 1.0,
) -> TractionField:
    """Random tree-trunk field whose direct start-goal route is blocked.

    Trees are uniform in the field, at least ``min_gap`` apart edge to edge,
    clear of start and goal.  Layouts are redrawn until at least ``blocking``
    trunks sit on the straight route, so that goal pursuit without
    perception collides.  Blocking trunks are drawn from the ``block_span``
    fraction of the route, past the turn-around near the start, where a
    robot aimed at the goal stays within about a metre of the route.
    Deterministic in ``layout_seed``.
    """
    rng = np.random.default_rng(layout_seed)
    for _ in range(10000):
        trees: list[tuple[float, float, float]] = []
        on_route = 0
        # place the blocking trunks on the route first, then scatter the rest
        while len(trees) < n_trees:
            r = float(rng.uniform(*radius_range))
            if on_route < blocking:
                t = float(rng.uniform(*block_span))
                off = float(rng.uniform(-0.3, 0.3)) * r
                c = (start[0] + t * (goal[0] - start[0]), start[1] + t * (goal[1] - start[1]) + off)
            else:
                c = (float(rng.uniform(0, size[0])), float(rng.uniform(0, size[1])))
            if math.dist(c, start) < keep_clear + r or math.dist(c, goal) < keep_clear + r:
                continue
            if any(math.dist(c, (x, y)) < r + rr + min_gap for x, y, rr in trees):
                continue
            trees.append((c[0], c[1], r))
            if _segment_point_distance(start, goal, c) < 0.5 * r:
                on_route += 1
        if on_route >= blocking:
            break
    patches = [Patch((x, y), r, 0.0, tree_height) for x, y, r in trees]
    return TractionField(base_mu, base_nu, patches)


def snow_analog(
    route_x: float = 20.0,
    route_y: float = 10.0,
    y_from: float = -1.5,
    y_to: float = 8.0,
    width: float = 3.0,
    mu: float = 0.08,
    spacing: float = 0.5,
    base_mu: float = 0.9,
    base_nu: float = 0.9,
) -> TractionField:
    """Flat low-traction band across the route, built from overlapping disks.

    The band spans ``route_y + y_from`` .. ``route_y + y_to`` across the route
    at ``x = route_x``; the short side is the traversable detour.
    """
    r = 0.5 * width
    n = int(math.ceil((y_to - y_from) / spacing)) + 1
    ys = np.linspace(route_y + y_from + r, route_y + y_to - r, max(n, 1))
    patches = [Patch((route_x, float(y)), r, mu, 0.0) for y in ys]
    return TractionField(base_mu, base_nu, patches)
