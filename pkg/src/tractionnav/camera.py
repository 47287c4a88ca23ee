"""Pinhole camera over a flat ground plane.

Frames
------
robot:   x forward, y left, z up; origin at the robot center on the ground.
camera:  X right, Y down, Z along the optical axis.  The camera sits at
         ``(forward_offset, 0, height_above_ground)`` in the robot frame and
         is pitched down by ``pitch_down``.

Pixel ``(u, v)`` with integer coordinates is the center of column ``u``, row
``v``; the valid sampling domain is ``0 <= u <= W-1``, ``0 <= v <= H-1``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinodynamics import State2D
from .world import TractionField

DEFAULT_MAX_RANGE = 5.0
_HFOV_DEG = 69.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 212.0 / math.tan(math.radians(_HFOV_DEG / 2))
    fy: float = 212.0 / math.tan(math.radians(_HFOV_DEG / 2))
    cx: float = 211.5
    cy: float = 119.5
    width: int = 424
    height: int = 240

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")


@dataclass(frozen=True)
class CameraExtrinsics:
    height_above_ground: float = 1.0
    pitch_down: float = math.radians(25.0)
    forward_offset: float = 0.2

    def __post_init__(self):
        if self.height_above_ground <= 0:
            raise ValueError("camera must be above ground")
        if not 0 <= self.pitch_down < math.pi / 2:
            raise ValueError("pitch_down must lie in [0, pi/2)")


@dataclass(frozen=True)
class Camera:
    intr: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    extr: CameraExtrinsics = field(default_factory=CameraExtrinsics)
    max_range: float = DEFAULT_MAX_RANGE

    def params(self) -> np.ndarray:
        """Flat parameter vector consumed by the compiled kernels."""
        i, e = self.intr, self.extr
        return np.array([
            i.fx, i.fy, i.cx, i.cy, float(i.width), float(i.height),
            e.height_above_ground, e.pitch_down, e.forward_offset, self.max_range,
        ])


@dataclass
class TraversabilityImage:
    grid: np.ndarray
    frame_pose: State2D

    def __post_init__(self):
        self.grid = np.ascontiguousarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError("grid must be 2-D")
        if self.grid.size and (self.grid.min() < 0.0 or self.grid.max() > 1.0):
            raise ValueError("traversability values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def to_pgm(self, path) -> None:
        write_pgm(path, self.grid)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.grid, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, frame_pose: State2D) -> "TraversabilityImage":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2), frame_pose)


def write_pgm(path, values: np.ndarray) -> None:
    """8-bit binary PGM; values in [0, 1] are scaled to 0..255."""
    data = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM back to floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return data.reshape(h, w) / 255.0


def _camera_axes(pitch: float):
    s, c = math.sin(pitch), math.cos(pitch)
    right = np.array([0.0, -1.0, 0.0])
    down = np.array([-s, 0.0, -c])
    forward = np.array([c, 0.0, -s])
    return right, down, forward


def _world_to_robot(x, y, pose: State2D):
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = x - pose.px, y - pose.py
    return c * dx + s * dy, -s * dx + c * dy


def _robot_to_world(xf, yl, pose: State2D):
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return pose.px + c * xf - s * yl, pose.py + s * xf + c * yl


def project_ground_point(
    world_pt,
    robot_pose: State2D,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
    max_range: float = DEFAULT_MAX_RANGE,
) -> tuple[float, float] | None:
    """Pixel of a ground point, or None when it is not imaged.

    None covers points behind the image plane, outside the pixel bounds and
    farther than ``max_range`` from the camera.
    """
    xf, yl = _world_to_robot(float(world_pt[0]), float(world_pt[1]), robot_pose)
    qx, qy, qz = xf - extr.forward_offset, yl, -extr.height_above_ground
    if qx * qx + qy * qy + qz * qz > max_range * max_range:
        return None
    s, c = math.sin(extr.pitch_down), math.cos(extr.pitch_down)
    zc = c * qx - s * qz
    if zc <= 1e-12:
        return None
    xc = -qy
    yc = -s * qx - c * qz
    u = intr.cx + intr.fx * xc / zc
    v = intr.cy + intr.fy * yc / zc
    if not (0.0 <= u <= intr.width - 1 and 0.0 <= v <= intr.height - 1):
        return None
    return u, v


def _pixel_ray(u, v, intr: CameraIntrinsics, extr: CameraExtrinsics):
    right, down, forward = _camera_axes(extr.pitch_down)
    a = (np.asarray(u, dtype=float) - intr.cx) / intr.fx
    b = (np.asarray(v, dtype=float) - intr.cy) / intr.fy
    d = a[..., None] * right + b[..., None] * down + forward
    return d


def back_project_pixel(
    u: float,
    v: float,
    robot_pose: State2D,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
) -> tuple[float, float] | None:
    """Ground point seen at pixel (u, v), or None if the ray misses the ground."""
    if not (0.0 <= u <= intr.width - 1 and 0.0 <= v <= intr.height - 1):
        return None
    d = _pixel_ray(u, v, intr, extr)
    if d[2] >= -1e-12:
        return None
    t = extr.height_above_ground / -d[2]
    xf = extr.forward_offset + t * d[0]
    yl = t * d[1]
    return _robot_to_world(xf, yl, robot_pose)


@functools.lru_cache(maxsize=16)
def _ground_grid(intr: CameraIntrinsics, extr: CameraExtrinsics, max_range: float):
    """Robot-frame ground coordinates of every pixel plus a visibility mask."""
    vv, uu = np.mgrid[0:intr.height, 0:intr.width].astype(float)
    d = _pixel_ray(uu, vv, intr, extr)
    dz = d[..., 2]
    hits = dz < -1e-9
    t = np.where(hits, extr.height_above_ground / np.where(hits, -dz, 1.0), 0.0)
    gx = extr.forward_offset + t * d[..., 0]
    gy = t * d[..., 1]
    dist = t * np.linalg.norm(d, axis=-1)
    valid = hits & (dist <= max_range)
    gx = np.where(valid, gx, 0.0)
    gy = np.where(valid, gy, 0.0)
    for a in (gx, gy, valid):
        a.setflags(write=False)
    return gx, gy, valid


def ground_grid(camera: Camera, pose: State2D):
    """World coordinates of every pixel's ground point and the valid mask."""
    gx, gy, valid = _ground_grid(camera.intr, camera.extr, camera.max_range)
    wx, wy = _robot_to_world(gx, gy, pose)
    return wx, wy, valid


def _occluded(wx, wy, cam_x, cam_y, cam_h, patches) -> np.ndarray:
    """Rays from the camera to ground points blocked by tall cylinders.

    Exact segment/disk intersection: along the horizontal ray parameter s the
    ray height falls linearly, so the lowest ray point inside a disk is at
    the far end of the overlap interval.
    """
    dx, dy = wx - cam_x, wy - cam_y
    S = np.hypot(dx, dy)
    safe = np.where(S > 1e-12, S, 1.0)
    ux, uy = dx / safe, dy / safe
    out = np.zeros(wx.shape, dtype=bool)
    for p in patches:
        ox, oy = cam_x - p.center[0], cam_y - p.center[1]
        b = ux * ox + uy * oy
        c = ox * ox + oy * oy - p.radius * p.radius
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        s1, s2 = -b - sq, -b + sq
        s_hi = np.minimum(s2, S)
        hit &= (s_hi >= np.maximum(s1, 0.0)) & (S > 1e-12)
        ray_h = cam_h * (1.0 - s_hi / safe)
        out |= hit & (ray_h < p.height)
    return out


def render_image(
    robot_pose: State2D,
    field_mu,
    camera: Camera,
    blockers=(),
    frame_pose: State2D | None = None,
) -> TraversabilityImage:
    """Render per-pixel traversability from a ground-truth callback.

    ``field_mu(wx, wy)`` returns mu for arrays of world points; pixels whose
    ray is blocked by one of ``blockers`` read 0, as do pixels that miss
    the ground or lie beyond range.
    """
    wx, wy, valid = ground_grid(camera, robot_pose)
    grid = np.zeros(valid.shape)
    if valid.any():
        grid[valid] = field_mu(wx[valid], wy[valid])
        if blockers:
            cx, cy = _robot_to_world(camera.extr.forward_offset, 0.0, robot_pose)
            occ = _occluded(wx[valid], wy[valid], cx, cy, camera.extr.height_above_ground, blockers)
            g = grid[valid]
            g[occ] = 0.0
            grid[valid] = g
    return TraversabilityImage(grid, robot_pose if frame_pose is None else frame_pose)


def render_oracle_image(
    robot_pose: State2D,
    field: TractionField,
    intr: CameraIntrinsics = CameraIntrinsics(),
    extr: CameraExtrinsics = CameraExtrinsics(),
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    h_block: float = 0.15,
    max_range: float = DEFAULT_MAX_RANGE,
    frame_pose: State2D | None = None,
) -> TraversabilityImage:
    """Ground-truth stand-in for a learned traversability predictor."""
    camera = Camera(intr, extr, max_range)
    near = field.patches_near(robot_pose.px, robot_pose.py, max_range + extr.forward_offset)
    blockers = [p for p in near if p.height > h_block]
    img = render_image(robot_pose, lambda x, y: field.mu_many(x, y, near), camera, blockers, frame_pose)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 needs an rng")
        _, _, valid = _ground_grid(intr, extr, max_range)
        noisy = img.grid + noise_sigma * rng.standard_normal(img.grid.shape)
        img.grid = np.where(valid, np.clip(noisy, 0.0, 1.0), 0.0)
    return img


def bilinear_sample(img: TraversabilityImage | np.ndarray, u: float, v: float) -> float:
    """Bilinear interpolation between cell centers; 0 outside the image."""
    g = img.grid if isinstance(img, TraversabilityImage) else img
    h, w = g.shape
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        return 0.0
    i0 = min(int(math.floor(u)), max(w - 2, 0))
    j0 = min(int(math.floor(v)), max(h - 2, 0))
    i1, j1 = min(i0 + 1, w - 1), min(j0 + 1, h - 1)
    fu, fv = u - i0, v - j0
    top = g[j0, i0] * (1.0 - fu) + g[j0, i1] * fu
    bot = g[j1, i0] * (1.0 - fu) + g[j1, i1] * fu
    return float(top * (1.0 - fv) + bot * fv)
