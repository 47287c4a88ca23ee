"""YAML configuration: one file defines the world and every module's parameters.

Schema (all sections optional; defaults shown in the dataclasses)::

    world:
      base_mu: 0.9
      base_nu: 0.9
      generator: forest | snow        # optional analog-world generator
      generator_args: {...}            # keyword arguments for the generator
      layout_seed: episode | <int>     # forest layout: per-episode seed or fixed
      patches:                         # explicit disks, added after generated ones
        - {center: [x, y], radius: r, mu: m, height: h, nu: n}
    episode:
      start: [x, y, theta]
      goal: [x, y]
      goal_radius, time_budget, controller (wayfast|blind|geometric), seed,
      control_dt, sim_dt, stuck_window, stuck_distance
    sensors:   {gnss_sigma, compass_sigma, gyro_sigma, delta_theta_true}
    process:   {pos_sigma, theta_sigma}
    camera:    {fx, fy, cx, cy, width, height, height_above_ground,
                pitch_down_deg, forward_offset, max_range}
    predictor: {h_block, h_geom, noise_sigma}
    estimator: {N, P_x, P_p, P_w, max_iters, convergence_tol, Q_ekf, R_ekf,
                R_raw, initial_cov, prior_params}
    mpc:       {N, dt, Q, Q_N, R, W, clearance_samples, clearance_radius,
                nu_bar, v_min, v_max, omega_max, near_field}
    mppi:      {num_samples, lambda, sigma_v, sigma_omega}
    labeling:  {track_width, fps, bins, sigma_bins}
    collect:   {waypoints: [[x, y], ...], speed, heading_gain, control_noise: [sv, sw]}

Matrices may be given as a list of diagonal entries or as a full nested list.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .camera import Camera, CameraExtrinsics, CameraIntrinsics
from .control import MpcConfig, MppiConfig
from .estimation import EstimatorConfig, NmheConfig
from .kinodynamics import State2D
from .world import Patch, ProcessNoise, SensorNoise, TractionField, forest_analog, snow_analog

CONTROLLERS = ("wayfast", "blind", "geometric")


class ConfigError(ValueError):
    pass


@dataclass
class PredictorConfig:
    h_block: float = 0.15
    h_geom: float = 0.15
    noise_sigma: float = 0.0


@dataclass
class LabelingConfig:
    track_width: float = 0.4
    fps: float = 2.0
    bins: int = 20
    sigma_bins: float = 2.0


@dataclass
class DriverConfig:
    waypoints: list = field(default_factory=lambda: [[6.0, 0.0], [6.0, 6.0], [0.0, 6.0], [0.0, 0.0]])
    speed: float = 0.6
    heading_gain: float = 1.5
    control_noise: tuple = (0.05, 0.1)


@dataclass
class EpisodeConfig:
    world: dict = field(default_factory=dict)
    start: State2D = State2D(0.0, 0.0, 0.0)
    goal: tuple = (5.0, 0.0)
    goal_radius: float = 0.3
    time_budget: float = 60.0
    controller: str = "wayfast"
    seed: int = 0
    control_dt: float = 0.1
    sim_dt: float = 0.01
    stuck_window: float = 5.0
    stuck_distance: float = 0.05
    sensors: SensorNoise = field(default_factory=SensorNoise)
    process: ProcessNoise = field(default_factory=ProcessNoise)
    camera: Camera = field(default_factory=Camera)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    mppi: MppiConfig = field(default_factory=MppiConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    driver: DriverConfig = field(default_factory=DriverConfig)
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ConfigError("goal_radius must be positive")
        if self.time_budget <= 0:
            raise ConfigError("time_budget must be positive")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller kind {self.controller!r}; expected one of {CONTROLLERS}")
        n = self.control_dt / self.sim_dt
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError("control_dt must be an integer multiple of sim_dt")
        if abs(self.estimator.gnss_dt - self.control_dt) > 1e-12:
            raise ConfigError("GNSS samples are taken once per control step; gnss_dt must equal control_dt")

    def with_(self, **kw) -> "EpisodeConfig":
        return replace(self, **kw)

    def build_world(self) -> TractionField:
        return build_world(self.world, self.seed)


def _matrix(x, n: int) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        if len(a) != n:
            raise ConfigError(f"expected {n} diagonal entries, got {len(a)}")
        return np.diag(a)
    if a.shape != (n, n):
        raise ConfigError(f"expected a {n}x{n} matrix, got shape {a.shape}")
    return a


def _take(section: dict, allowed: set, name: str) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return dict(section)


def build_world(spec: dict, episode_seed: int = 0) -> TractionField:
    spec = _take(spec or {}, {"base_mu", "base_nu", "generator", "generator_args", "layout_seed", "patches"}, "world")
    base_mu = float(spec.get("base_mu", 0.9))
    base_nu = float(spec.get("base_nu", 0.9))
    patches: list[Patch] = []
    gen = spec.get("generator")
    args = dict(spec.get("generator_args") or {})
    if gen == "forest":
        ls = spec.get("layout_seed", "episode")
        seed = episode_seed if ls == "episode" else int(ls)
        for k in ("start", "goal", "size", "radius_range", "block_span"):
            if k in args:
                args[k] = tuple(args[k])
        patches += forest_analog(seed, base_mu=base_mu, base_nu=base_nu, **args).patches
    elif gen == "snow":
        patches += snow_analog(base_mu=base_mu, base_nu=base_nu, **args).patches
    elif gen is not None:
        raise ConfigError(f"unknown world generator {gen!r}")
    for p in spec.get("patches") or []:
        try:
            patches.append(Patch(tuple(p["center"]), float(p["radius"]), float(p["mu"]),
                                 float(p.get("height", 0.0)), p.get("nu")))
        except KeyError as e:
            raise ConfigError(f"patch missing key {e}") from None
    return TractionField(base_mu, base_nu, patches)


def from_dict(d: dict) -> EpisodeConfig:
    d = copy.deepcopy(d or {})
    _take(d, {"world", "episode", "sensors", "process", "camera", "predictor", "estimator", "mpc", "mppi",
              "labeling", "collect"}, "top level")
    ep = _take(d.get("episode") or {}, {"start", "goal", "goal_radius", "time_budget", "controller", "seed",
                                         "control_dt", "sim_dt", "stuck_window", "stuck_distance"}, "episode")
    kw: dict[str, Any] = {"world": d.get("world") or {}, "raw": d}
    if "start" in ep:
        s = ep.pop("start")
        kw["start"] = State2D(float(s[0]), float(s[1]), float(s[2]) if len(s) > 2 else 0.0)
    if "goal" in ep:
        kw["goal"] = tuple(float(x) for x in ep.pop("goal"))
    for k, v in ep.items():
        kw[k] = int(v) if k == "seed" else (str(v) if k == "controller" else float(v))

    kw["sensors"] = SensorNoise(**_take(d.get("sensors") or {}, {"gnss_sigma", "compass_sigma", "gyro_sigma",
                                                                   "delta_theta_true"}, "sensors"))
    kw["process"] = ProcessNoise(**_take(d.get("process") or {}, {"pos_sigma", "theta_sigma"}, "process"))

    cam = _take(d.get("camera") or {}, {"fx", "fy", "cx", "cy", "width", "height", "height_above_ground",
                                         "pitch_down_deg", "forward_offset", "max_range"}, "camera")
    intr = CameraIntrinsics(**{k: (int(cam[k]) if k in ("width", "height") else float(cam[k]))
                               for k in ("fx", "fy", "cx", "cy", "width", "height") if k in cam})
    ex = {k: float(cam[k]) for k in ("height_above_ground", "forward_offset") if k in cam}
    if "pitch_down_deg" in cam:
        ex["pitch_down"] = math.radians(float(cam["pitch_down_deg"]))
    kw["camera"] = Camera(intr, CameraExtrinsics(**ex), float(cam.get("max_range", 5.0)))

    kw["predictor"] = PredictorConfig(**_take(d.get("predictor") or {}, {"h_block", "h_geom", "noise_sigma"},
                                              "predictor"))

    est = _take(d.get("estimator") or {}, {"N", "P_x", "P_p", "P_w", "max_iters", "convergence_tol", "Q_ekf",
                                            "R_ekf", "R_raw", "initial_cov", "prior_params"}, "estimator")
    nm = {}
    for k in ("P_x", "P_p", "P_w"):
        if k in est:
            nm[k] = _matrix(est.pop(k), 3)
    for k in ("N", "max_iters"):
        if k in est:
            nm[k] = int(est.pop(k))
    if "convergence_tol" in est:
        nm["convergence_tol"] = float(est.pop("convergence_tol"))
    ek = {k: _matrix(est.pop(k), 3) for k in ("Q_ekf", "R_ekf", "R_raw", "initial_cov") if k in est}
    if "prior_params" in est:
        ek["prior_params"] = tuple(float(x) for x in est.pop("prior_params"))
    kw["estimator"] = EstimatorConfig(NmheConfig(**nm), gnss_dt=kw.get("control_dt", 0.1), **ek)

    mpc = _take(d.get("mpc") or {}, {"N", "dt", "Q", "Q_N", "R", "W", "clearance_samples", "clearance_radius",
                                      "nu_bar", "v_min", "v_max", "omega_max", "near_field"}, "mpc")
    for k, n in (("Q", 3), ("Q_N", 3), ("R", 2)):
        if k in mpc:
            mpc[k] = _matrix(mpc[k], n)
    for k in ("N", "clearance_samples"):
        if k in mpc:
            mpc[k] = int(mpc[k])
    if "near_field" in mpc:
        mpc["near_field"] = bool(mpc["near_field"])
    kw["mpc"] = MpcConfig(**mpc)

    mp = _take(d.get("mppi") or {}, {"num_samples", "lambda", "sigma_v", "sigma_omega"}, "mppi")
    if "lambda" in mp:
        mp["lam"] = float(mp.pop("lambda"))
    if "num_samples" in mp:
        mp["num_samples"] = int(mp["num_samples"])
    kw["mppi"] = MppiConfig(**mp)

    lab = _take(d.get("labeling") or {}, {"track_width", "fps", "bins", "sigma_bins"}, "labeling")
    if "bins" in lab:
        lab["bins"] = int(lab["bins"])
    kw["labeling"] = LabelingConfig(**lab)

    drv = _take(d.get("collect") or {}, {"waypoints", "speed", "heading_gain", "control_noise"}, "collect")
    if "control_noise" in drv:
        drv["control_noise"] = tuple(drv["control_noise"])
    kw["driver"] = DriverConfig(**drv)
    try:
        return EpisodeConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> EpisodeConfig:
    text = Path(path).read_text()
    try:
        d = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(d)
