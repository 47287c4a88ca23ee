"""Closed-loop episodes, batch benchmarks and dataset collection."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml

from .camera import Camera, TraversabilityImage, render_image, render_oracle_image
from .config import CONTROLLERS, EpisodeConfig, load_config
from .control import MppiController
from .estimation import Estimator
from .kinodynamics import ControlInput, State2D, wrap_angle
from .labeling import LogEntry, TrajectoryLog, generate_dataset
from .world import TractionField, sample_sensors, sim_step

log = logging.getLogger(__name__)

Predictor = Callable[[State2D, State2D], TraversabilityImage]

EPISODE_COLUMNS = [
    "step", "t",
    "true_px", "true_py", "true_theta", "true_mu",
    "est_px", "est_py", "est_theta", "ekf_var_px", "ekf_var_py", "ekf_var_theta",
    "nmhe_mu", "nmhe_nu", "nmhe_dtheta", "nmhe_cost", "nmhe_converged",
    "v_cmd", "omega_cmd", "cost_min", "cost_mean", "weight_entropy",
]
RESULT_COLUMNS = ["controller", "total_tries", "successful_runs", "success_rate"]


@dataclass
class EpisodeResult:
    outcome: str                 # reached | stuck | timeout | error
    path_length: float
    elapsed: float
    final_distance: float
    controller: str = ""
    seed: int = 0
    hazard_depth: float = 0.0    # deepest penetration into flat low-mu patches, meters
    reason: str = ""
    log_path: str | None = None
    trajectory: np.ndarray | None = field(default=None, repr=False)

    @property
    def success(self) -> bool:
        return self.outcome == "reached"

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("trajectory")
        return d


def predictor_for(kind: str, world: TractionField, cfg: EpisodeConfig,
                  rng: np.random.Generator | None = None) -> Predictor:
    """Traversability image source for a controller kind.

    ``wayfast``: oracle render of the true mu field with occlusion.
    ``blind``: every visible ground pixel reads 1.
    ``geometric``: 0 where a patch taller than ``h_geom`` is seen, 1 elsewhere;
    flat low-traction patches are invisible to it.
    """
    cam, pc = cfg.camera, cfg.predictor
    reach = cam.max_range + cam.extr.forward_offset
    if kind == "wayfast":
        def predict(true_pose, frame_pose):
            return render_oracle_image(true_pose, world, cam.intr, cam.extr, pc.noise_sigma, rng, pc.h_block,
                                       cam.max_range, frame_pose)
    elif kind == "blind":
        def predict(true_pose, frame_pose):
            return render_image(true_pose, lambda x, y: np.ones_like(x), cam, (), frame_pose)
    elif kind == "geometric":
        def predict(true_pose, frame_pose):
            tall = [p for p in world.patches_near(true_pose.px, true_pose.py, reach) if p.height > pc.h_geom]

            def occupancy(x, y):
                out = np.ones_like(x)
                for p in tall:
                    out[(x - p.center[0]) ** 2 + (y - p.center[1]) ** 2 <= p.radius ** 2] = 0.0
                return out
            return render_image(true_pose, occupancy, cam, tall, frame_pose)
    else:
        raise ValueError(f"unknown predictor kind {kind!r}; expected one of {CONTROLLERS}")
    return predict


def hazard_depth(traj_xy: np.ndarray, world: TractionField, mu_below: float = 0.5) -> float:
    """Deepest penetration of a path into flat (height 0) low-mu patches."""
    depth = 0.0
    for p in world.patches:
        if p.height > 0 or p.mu_value >= mu_below:
            continue
        d = np.hypot(traj_xy[:, 0] - p.center[0], traj_xy[:, 1] - p.center[1])
        depth = max(depth, float(np.max(p.radius - d)))
    return max(depth, 0.0)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def run_episode(cfg: EpisodeConfig, out_dir=None, world: TractionField | None = None) -> EpisodeResult:
    """Run one closed-loop episode; writes episode.csv and summary.json when ``out_dir`` is set.

    Per control step: GNSS/compass sample -> NMHE + EKF update -> render the
    predictor image at the true pose (tagged with the estimated pose) ->
    MPPI -> plant and gyro-rate EKF prediction over the control period.
    """
    world = cfg.build_world() if world is None else world
    ss = np.random.SeedSequence(cfg.seed)
    plant_rng, sensor_rng, ctrl_seq, pred_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    mppi_cfg = replace(cfg.mppi, seed=int(np.random.default_rng(ctrl_seq).integers(2**63)))
    controller = MppiController(mppi_cfg, cfg.mpc, cfg.camera)
    predictor = predictor_for(cfg.controller, world, cfg, pred_rng)
    estimator = Estimator(cfg.estimator)

    true = cfg.start
    goal = np.asarray(cfg.goal, dtype=float)
    n_sub = int(round(cfg.control_dt / cfg.sim_dt))
    history: deque = deque()
    rows = []
    traj = [(true.px, true.py)]
    path_length = 0.0
    outcome = "timeout"
    step = 0
    t = 0.0
    while True:
        dist = math.hypot(true.px - goal[0], true.py - goal[1])
        if dist <= cfg.goal_radius:
            outcome = "reached"
            break
        history.append((t, true.px, true.py))
        while history and history[0][0] < t - cfg.stuck_window - 1e-9:
            history.popleft()
        if t >= cfg.stuck_window - 1e-9:
            t0, x0, y0 = history[0]
            if t - t0 >= cfg.stuck_window - 1e-9 and math.hypot(true.px - x0, true.py - y0) < cfg.stuck_distance:
                outcome = "stuck"
                break
        if t >= cfg.time_budget - 1e-9:
            outcome = "timeout"
            break

        z, _ = sample_sensors(true, 0.0, cfg.sensors, sensor_rng, timestamp=t)
        sol = estimator.on_measurement(z)
        est = estimator.pose
        img = predictor(true, est)
        applied, _, info = controller(est, goal, img)
        estimator.set_control(applied)

        cov = estimator.ekf.covariance
        true_mu = world.traction_at(true.px, true.py).mu
        rows.append([step, t, true.px, true.py, true.theta, true_mu, est.px, est.py, est.theta,
                     cov[0, 0], cov[1, 1], cov[2, 2],
                     sol.mu if sol else estimator.mu, sol.nu if sol else estimator.prior_params[1],
                     sol.delta_theta if sol else estimator.delta_theta,
                     sol.final_cost if sol else 0.0, sol.converged if sol else False,
                     applied.v, applied.omega, info.cost_min, info.cost_mean, info.weight_entropy])

        for _ in range(n_sub):
            nu_true = world.traction_at(true.px, true.py).nu
            prev = true
            true = sim_step(true, applied, cfg.sim_dt, plant_rng, world, cfg.process)
            gyro = nu_true * applied.omega + cfg.sensors.gyro_sigma * sensor_rng.standard_normal()
            estimator.on_gyro(gyro, cfg.sim_dt)
            path_length += math.hypot(true.px - prev.px, true.py - prev.py)
        traj.append((true.px, true.py))
        step += 1
        t = step * cfg.control_dt

    traj_a = np.array(traj)
    result = EpisodeResult(outcome, path_length, t, math.hypot(true.px - goal[0], true.py - goal[1]),
                           cfg.controller, cfg.seed, hazard_depth(traj_a, world), trajectory=traj_a)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        (out / "episode.csv").write_text(buf.getvalue())
        result.log_path = str(out / "episode.csv")
        (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return result


def _batch_episode(cfg: EpisodeConfig, kind: str, seed: int, out_dir) -> EpisodeResult:
    ep_cfg = cfg.with_(controller=kind, seed=seed)
    ep_dir = None if out_dir is None else Path(out_dir) / f"{kind}_seed{seed}"
    try:
        return run_episode(ep_cfg, ep_dir)
    except Exception as e:  # noqa: BLE001 - a failed episode is a failed try
        log.exception("episode %s/%s failed", kind, seed)
        return EpisodeResult("error", 0.0, 0.0, float("nan"), kind, seed, reason=repr(e))


def run_batch(cfg: EpisodeConfig, seeds: Sequence[int], controllers: Iterable[str] = CONTROLLERS,
              out_dir=None, progress: Callable[[EpisodeResult], None] | None = None, jobs: int = 1):
    """Run every (controller, seed) pair; returns (per-controller table rows, episode results).

    Episode errors are recorded as failures with the exception text as reason.
    With ``jobs > 1`` episodes run in worker processes; results do not depend
    on ``jobs`` since every episode owns its seeded state.
    """
    controllers = list(controllers)
    if len(seeds) < 1:
        raise ValueError("need at least one run")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    pairs = [(kind, int(seed)) for kind in controllers for seed in seeds]
    results: dict[tuple[str, int], EpisodeResult] = {}
    if jobs == 1:
        for kind, seed in pairs:
            results[(kind, seed)] = res = _batch_episode(cfg, kind, seed, out_dir)
            if progress:
                progress(res)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_batch_episode, cfg, kind, seed, out_dir): (kind, seed) for kind, seed in pairs}
            for fut in as_completed(futures):
                results[futures[fut]] = res = fut.result()
                if progress:
                    progress(res)
    table = []
    for kind in controllers:
        runs = [results[(kind, int(s))] for s in seeds]
        ok = sum(r.success for r in runs)
        table.append({"controller": kind, "total_tries": len(runs), "successful_runs": ok,
                      "success_rate": ok / len(runs)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.csv", "w", newline="") as f:
            w = csv.DictWriter(f, RESULT_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in table:
                w.writerow({**row, "success_rate": f"{row['success_rate']:.4f}"})
        with open(out / "episodes.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["controller", "seed", "outcome", "path_length", "elapsed", "final_distance",
                        "hazard_depth", "reason"])
            for (kind, seed), r in sorted(results.items()):
                w.writerow([kind, seed, r.outcome, _fmt(r.path_length), _fmt(r.elapsed), _fmt(r.final_distance),
                            _fmt(r.hazard_depth), r.reason])
    return table, results


def format_table(table) -> str:
    lines = [f"{'controller':<12}{'tries':>7}{'success':>9}{'rate':>8}"]
    for r in table:
        lines.append(f"{r['controller']:<12}{r['total_tries']:>7}{r['successful_runs']:>9}"
                     f"{100 * r['success_rate']:>7.0f}%")
    return "\n".join(lines)


# --- dataset collection --------------------------------------------------

@dataclass
class CollectedLog:
    log: TrajectoryLog
    frame_times: list
    frame_poses: list
    mu_estimates: np.ndarray


def _labels_from_estimates(mu_hat: list, first_full: int, horizon: int) -> np.ndarray:
    """Label for step j: the estimate of the window centered on j (clamped to solved windows)."""
    n = len(mu_hat)
    out = np.empty(n)
    if first_full is None:
        return np.full(n, np.nan)
    for j in range(n):
        k = min(max(j + horizon // 2, first_full), n - 1)
        out[j] = mu_hat[k]
    return out


def collect_log(cfg: EpisodeConfig, duration: float, world: TractionField | None = None) -> CollectedLog:
    """Drive a scripted noisy waypoint follower and record poses, frames and traction estimates."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    world = cfg.build_world() if world is None else world
    ss = np.random.SeedSequence(cfg.seed)
    plant_rng, sensor_rng, drive_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    estimator = Estimator(cfg.estimator)
    drv = cfg.driver
    wps = [tuple(map(float, p)) for p in drv.waypoints]
    wp = 0
    n_sub = int(round(cfg.control_dt / cfg.sim_dt))
    true = cfg.start
    times, poses, mu_hat = [], [], []
    first_full = None
    steps = int(math.floor(duration / cfg.control_dt + 1e-9)) + 1
    for step in range(steps):
        t = step * cfg.control_dt
        z, _ = sample_sensors(true, 0.0, cfg.sensors, sensor_rng, timestamp=t)
        sol = estimator.on_measurement(z)
        if sol is not None and first_full is None:
            first_full = step
        est = estimator.pose
        times.append(t)
        poses.append(est)
        mu_hat.append(sol.mu if sol else float("nan"))
        if math.hypot(wps[wp][0] - est.px, wps[wp][1] - est.py) < 0.5:
            wp = (wp + 1) % len(wps)
        bearing = math.atan2(wps[wp][1] - est.py, wps[wp][0] - est.px)
        nv, nw = drive_rng.standard_normal(2)
        v = min(max(drv.speed + drv.control_noise[0] * nv, 0.05), cfg.mpc.v_max)
        w = drv.heading_gain * wrap_angle(bearing - est.theta) + drv.control_noise[1] * nw
        u = ControlInput(v, min(max(w, -cfg.mpc.omega_max), cfg.mpc.omega_max))
        estimator.set_control(u)
        for _ in range(n_sub):
            nu_true = world.traction_at(true.px, true.py).nu
            true = sim_step(true, u, cfg.sim_dt, plant_rng, world, cfg.process)
            estimator.on_gyro(nu_true * u.omega + cfg.sensors.gyro_sigma * sensor_rng.standard_normal(), cfg.sim_dt)
    labels = _labels_from_estimates(mu_hat, first_full, cfg.estimator.nmhe.N)
    tlog = TrajectoryLog([LogEntry(t, p, float(m)) for t, p, m in zip(times, poses, labels) if not math.isnan(m)])
    return CollectedLog(tlog, times, poses, np.array(mu_hat))


def write_log(collected: CollectedLog, cfg: EpisodeConfig, log_dir) -> None:
    out = Path(log_dir)
    out.mkdir(parents=True, exist_ok=True)
    collected.log.to_csv(out / "trajectory.csv")
    with open(out / "frames.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "px", "py", "theta"])
        for t, p in zip(collected.frame_times, collected.frame_poses):
            w.writerow([repr(t), repr(p.px), repr(p.py), repr(p.theta)])
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.raw, sort_keys=True))


def labelgen(log_dir, out_dir, cfg: EpisodeConfig | None = None):
    """Turn a collected log directory into a label dataset directory."""
    log_dir = Path(log_dir)
    if cfg is None:
        cfg = load_config(log_dir / "config.yaml")
    tlog = TrajectoryLog.from_csv(log_dir / "trajectory.csv")
    with open(log_dir / "frames.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    times = [float(r["t"]) for r in rows]
    poses = [State2D(float(r["px"]), float(r["py"]), float(r["theta"])) for r in rows]
    lc = cfg.labeling
    return generate_dataset(tlog, times, poses, cfg.camera, out_dir, lc.track_width, lc.fps, lc.bins, lc.sigma_bins)


def collect_dataset(cfg: EpisodeConfig, duration: float, out_dir, world: TractionField | None = None):
    """Collect a driving log and emit ``<out>/log`` and ``<out>/dataset``."""
    collected = collect_log(cfg, duration, world)
    out = Path(out_dir)
    write_log(collected, cfg, out / "log")
    frames = labelgen(out / "log", out / "dataset", cfg)
    return collected, frames
