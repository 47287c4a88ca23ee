"""Moving-horizon traction estimation fused with a gyro-rate EKF.

The estimator solves, over a window of N+1 GNSS/compass samples,

    min  |x_k - x~|^2_Px + |p - p~|^2_Pp + sum_i |y_i - h(x_i, z_i, dtheta)|^2_Pw
    s.t. x_{i+1} = f(x_i, u_i; mu, nu),   mu, nu in [0, 1],   dtheta in [-pi, pi)

with p = (mu, nu, dtheta) constant over the window.  The dynamics equality is
eliminated by single shooting, leaving six decision variables
(px_k, py_k, theta_k, mu, nu, dtheta).  The solver is Levenberg-Marquardt
with an active-set projection onto the box for mu, nu.

The NMHE's newest state is then used as a measurement for an EKF whose
prediction runs at gyro rate.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kinodynamics import ControlInput, State2D, wrap_angle, wrap_angles
from .world import MeasurementSample


class WindowNotFull(ValueError):
    pass


class SingularInnovation(np.linalg.LinAlgError):
    pass


class MeasurementWindow:
    """Ring buffer of (measurement, control) pairs at a fixed sample period.

    The control stored with sample i is the one applied from sample i to
    sample i+1, so the newest entry's control is not used by the solver.
    """

    def __init__(self, horizon: int, dt: float):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = horizon
        self.dt = dt
        self._buf: deque = deque(maxlen=horizon + 1)

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def is_full(self) -> bool:
        return len(self._buf) == self.horizon + 1

    def append(self, sample: MeasurementSample, control: ControlInput | None = None) -> None:
        if self._buf and sample.timestamp <= self._buf[-1][0].timestamp:
            raise ValueError("measurement timestamps must increase")
        self._buf.append((sample, control or ControlInput(0.0, 0.0)))

    def set_last_control(self, control: ControlInput) -> None:
        s, _ = self._buf[-1]
        self._buf[-1] = (s, control)

    def measurements(self) -> np.ndarray:
        return np.array([[s.z_x, s.z_y, s.z_theta] for s, _ in self._buf])

    def controls(self) -> np.ndarray:
        """The N controls that drive sample 0 to sample N."""
        return np.array([[u.v, u.omega] for _, u in self._buf][:-1]).reshape(-1, 2)

    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s, _ in self._buf])

    @classmethod
    def from_arrays(cls, z: np.ndarray, controls: np.ndarray, dt: float, t0: float = 0.0) -> "MeasurementWindow":
        """Build a full window from (N+1, 3) measurements and N controls."""
        n = len(z) - 1
        w = cls(n, dt)
        for i in range(n + 1):
            u = ControlInput(*controls[i]) if i < n else None
            w.append(MeasurementSample(*z[i], timestamp=t0 + i * dt), u)
        return w


@dataclass
class NmheConfig:
    N: int = 20
    P_x: np.ndarray = field(default_factory=lambda: np.eye(3))
    P_p: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 10.0]))
    P_w: np.ndarray = field(default_factory=lambda: np.diag([100.0, 100.0, 10.0]))
    max_iters: int = 50
    convergence_tol: float = 1e-9
    low_excitation_omega: float = 0.05
    low_excitation_scale: float = 100.0

    def __post_init__(self):
        if self.N < 4:
            raise ValueError("N must be >= 4")
        for name in ("P_x", "P_p", "P_w"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (3, 3) or not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError(f"{name} must be a symmetric positive definite 3x3 matrix")
            setattr(self, name, m)


@dataclass
class NmheSolution:
    states: np.ndarray          # (N+1, 3), headings wrapped
    mu: float
    nu: float
    delta_theta: float
    final_cost: float
    converged: bool
    iterations: int = 0

    @property
    def last_state(self) -> State2D:
        return State2D.from_array(self.states[-1])

    @property
    def params(self) -> np.ndarray:
        return np.array([self.mu, self.nu, self.delta_theta])


def _weights(window: MeasurementWindow, config: NmheConfig):
    """Transposed Cholesky factors so that |r|^2_P == |L^T r|^2."""
    P_p = config.P_p
    controls = window.controls()
    if np.mean(np.abs(controls[:, 1])) < config.low_excitation_omega:
        # nu is unobservable without turning; pin it to the prior
        D = np.diag([1.0, math.sqrt(config.low_excitation_scale), 1.0])
        P_p = D @ P_p @ D
    return (np.linalg.cholesky(config.P_x).T, np.linalg.cholesky(P_p).T,
            np.linalg.cholesky(config.P_w).T)


def _residuals_and_jacobian(decision, z, controls, dt, prior_state, prior_params, Lx, Lp, Lw, want_jac=True):
    x0 = decision[:3]
    mu, nu, dth = decision[3], decision[4], decision[5]
    X, S = kernels.shoot(x0, mu, nu, controls, dt)
    n = len(X)
    e = np.empty((n, 3))
    e[:, 0] = X[:, 0] - z[:, 0]
    e[:, 1] = X[:, 1] - z[:, 1]
    e[:, 2] = wrap_angles(X[:, 2] - (z[:, 2] + dth))
    ex = np.asarray(x0 - prior_state, dtype=float)
    ex[2] = wrap_angle(ex[2])
    ep = np.asarray(decision[3:] - prior_params, dtype=float)
    ep[2] = wrap_angle(ep[2])
    r = np.concatenate([(e @ Lw.T).ravel(), Lx @ ex, Lp @ ep])
    if not want_jac:
        return r, None, X
    Jm = np.zeros((n, 3, 6))
    Jm[:, :, :5] = S
    Jm[:, 2, 5] = -1.0
    Jm = np.einsum("ab,nbj->naj", Lw, Jm).reshape(3 * n, 6)
    Ja = np.zeros((3, 6))
    Ja[:, :3] = Lx
    Jp = np.zeros((3, 6))
    Jp[:, 3:] = Lp
    return r, np.vstack([Jm, Ja, Jp]), X


def nmhe_residuals(decision, window: MeasurementWindow, prior_state, prior_params, config: NmheConfig) -> np.ndarray:
    """Weighted residual vector of length 3(N+1) + 6 for a decision vector.

    ``decision`` is (px_k, py_k, theta_k, mu, nu, dtheta).
    """
    if not window.is_full:
        raise WindowNotFull("measurement window is not full")
    Lx, Lp, Lw = _weights(window, config)
    r, _, _ = _residuals_and_jacobian(np.asarray(decision, dtype=float), window.measurements(), window.controls(),
                                      window.dt, _arr(prior_state), _arr(prior_params), Lx, Lp, Lw, want_jac=False)
    return r


def nmhe_jacobian(decision, window: MeasurementWindow, prior_state, prior_params, config: NmheConfig) -> np.ndarray:
    if not window.is_full:
        raise WindowNotFull("measurement window is not full")
    Lx, Lp, Lw = _weights(window, config)
    _, J, _ = _residuals_and_jacobian(np.asarray(decision, dtype=float), window.measurements(), window.controls(),
                                      window.dt, _arr(prior_state), _arr(prior_params), Lx, Lp, Lw)
    return J


def _arr(x) -> np.ndarray:
    if isinstance(x, State2D):
        return x.as_array()
    return np.asarray(x, dtype=float)


def _project(d: np.ndarray) -> np.ndarray:
    d = d.copy()
    d[3] = min(max(d[3], 0.0), 1.0)
    d[4] = min(max(d[4], 0.0), 1.0)
    d[2] = wrap_angle(d[2])
    d[5] = wrap_angle(d[5])
    return d


def _lm(d0, z, controls, dt, xs, ps, Lx, Lp, Lw, config: NmheConfig):
    d = _project(d0)
    r, J, _ = _residuals_and_jacobian(d, z, controls, dt, xs, ps, Lx, Lp, Lw)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        g = J.T @ r
        # variables pinned at a bound with the gradient pushing outward stay fixed
        free = np.ones(6, dtype=bool)
        for j in (3, 4):
            if (d[j] <= 0.0 and g[j] > 0.0) or (d[j] >= 1.0 and g[j] < 0.0):
                free[j] = False
        if np.max(np.abs(g[free])) < 1e-14 * max(1.0, cost):
            converged = True
            break
        H = J[:, free].T @ J[:, free]
        gf = g[free]
        accepted = False
        while lam < 1e12:
            A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
            step = np.zeros(6)
            step[free] = -np.linalg.solve(A, gf)
            trial = _project(d + step)
            rt, Jt, _ = _residuals_and_jacobian(trial, z, controls, dt, xs, ps, Lx, Lp, Lw)
            ct = float(rt @ rt)
            if ct <= cost:
                moved = trial - d
                moved[2] = wrap_angle(moved[2])
                moved[5] = wrap_angle(moved[5])
                d, r, J, cost = trial, rt, Jt, ct
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            # no descent direction left at machine precision
            converged = np.linalg.norm(g[free]) < 1e-6 * max(1.0, math.sqrt(cost))
            break
        if np.linalg.norm(moved) < config.convergence_tol * (1.0 + np.linalg.norm(d[:3])):
            converged = True
            break
    return d, cost, converged, it


def _motion_guesses(z: np.ndarray, controls: np.ndarray, dt: float, prior: np.ndarray,
                    headings: int = 16, keep: int = 2) -> list[np.ndarray]:
    """Initial decisions from the GNSS track; empty when the robot barely moved.

    mu comes from the ratio of tracked to commanded distance.  The initial
    heading is picked by shooting the model from a ring of candidate headings
    and scoring the position fit, which avoids the mu = 0 trap where a wrong
    heading makes every increase of mu look worse.
    """
    travel = np.hypot(np.diff(z[:, 0]), np.diff(z[:, 1]))
    commanded = np.sum(np.abs(controls[:, 0])) * dt
    net = math.hypot(z[-1, 0] - z[0, 0], z[-1, 1] - z[0, 1])
    if commanded < 1e-6 or max(net, float(np.sum(travel))) < 0.05:
        return []
    mu = min(max(float(np.sum(travel) / commanded), 0.05), 1.0)
    nu = min(max(float(prior[4]), 0.05), 1.0)
    scored = []
    for h in np.linspace(-math.pi, math.pi, headings, endpoint=False):
        X, _ = kernels.shoot(np.array([z[0, 0], z[0, 1], h]), mu, nu, controls, dt)
        scored.append((float(np.sum((X[:, :2] - z[:, :2]) ** 2)), h))
    scored.sort()
    return [np.array([z[0, 0], z[0, 1], h, mu, nu, wrap_angle(h - z[0, 2])]) for _, h in scored[:keep]]


def nmhe_solve(window: MeasurementWindow, prior_state, prior_params, config: NmheConfig) -> NmheSolution:
    """Solve the windowed traction estimation problem.

    Starts from the priors and, when the window shows motion, also from
    GNSS-track based guesses; the lowest final cost wins.
    """
    if not window.is_full:
        raise WindowNotFull("measurement window is not full")
    xs, ps = _arr(prior_state), _arr(prior_params)
    if not (0.0 <= ps[0] <= 1.0 and 0.0 <= ps[1] <= 1.0):
        raise ValueError("prior traction outside [0, 1]")
    z, controls, dt = window.measurements(), window.controls(), window.dt
    Lx, Lp, Lw = _weights(window, config)
    starts = [np.concatenate([xs, ps])]
    starts += _motion_guesses(z, controls, dt, starts[0])
    best = None
    for d0 in starts:
        d, cost, conv, it = _lm(d0, z, controls, dt, xs, ps, Lx, Lp, Lw, config)
        if best is None or cost < best[1]:
            best = (d, cost, conv, it)
    d, cost, conv, it = best
    X, _ = kernels.shoot(d[:3], d[3], d[4], controls, dt)
    X[:, 2] = wrap_angles(X[:, 2])
    return NmheSolution(X, float(d[3]), float(d[4]), float(d[5]), cost, bool(conv), it)


# --- EKF -----------------------------------------------------------------

@dataclass
class EkfState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).copy()
        self.covariance = np.asarray(self.covariance, dtype=float).copy()

    @property
    def pose(self) -> State2D:
        return State2D.from_array(self.mean)


def ekf_predict(ekf: EkfState, gyro: float, v_cmd: float, mu_est: float, dt: float, Q_ekf: np.ndarray) -> EkfState:
    """Euler propagation with the gyro driving heading; P <- F P F^T + Q dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    px, py, th = ekf.mean
    c, s = math.cos(th), math.sin(th)
    a = mu_est * v_cmd
    mean = np.array([px + dt * a * c, py + dt * a * s, wrap_angle(th + dt * gyro)])
    F = np.eye(3)
    F[0, 2] = -dt * a * s
    F[1, 2] = dt * a * c
    P = F @ ekf.covariance @ F.T + np.asarray(Q_ekf) * dt
    return EkfState(mean, 0.5 * (P + P.T))


def ekf_update(ekf: EkfState, z, R_ekf: np.ndarray) -> EkfState:
    """Identity-measurement update on (px, py, theta) in Joseph form."""
    z = _arr(z)
    P = ekf.covariance
    S = P + np.asarray(R_ekf)
    if np.linalg.cond(S) > 1e14:
        raise SingularInnovation("innovation covariance is numerically singular")
    K = np.linalg.solve(S.T, P.T).T
    innov = z - ekf.mean
    innov[2] = wrap_angle(innov[2])
    mean = ekf.mean + K @ innov
    mean[2] = wrap_angle(mean[2])
    IK = np.eye(3) - K
    Pn = IK @ P @ IK.T + K @ np.asarray(R_ekf) @ K.T
    return EkfState(mean, 0.5 * (Pn + Pn.T))


@dataclass
class EstimatorConfig:
    nmhe: NmheConfig = field(default_factory=NmheConfig)
    gnss_dt: float = 0.1
    Q_ekf: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.005]))
    R_ekf: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.005]))
    R_raw: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.0025]))
    initial_cov: np.ndarray = field(default_factory=lambda: np.diag([0.05, 0.05, 0.05]))
    prior_params: tuple[float, float, float] = (1.0, 1.0, 0.0)


class Estimator:
    """Online NMHE + EKF for one robot; single-threaded.

    Call :meth:`on_gyro` at IMU rate and :meth:`on_measurement` at GNSS rate,
    then :meth:`set_control` once the controller has chosen the next input.
    """

    def __init__(self, config: EstimatorConfig, initial: State2D | None = None):
        self.config = config
        self.window = MeasurementWindow(config.nmhe.N, config.gnss_dt)
        self.prior_params = np.array(config.prior_params, dtype=float)
        self.prior_state: np.ndarray | None = None
        self.ekf: EkfState | None = None
        if initial is not None:
            self.ekf = EkfState(initial.as_array(), config.initial_cov)
        self.last: NmheSolution | None = None
        self.v_cmd = 0.0

    @property
    def mu(self) -> float:
        return self.prior_params[0] if self.last is None else self.last.mu

    @property
    def delta_theta(self) -> float:
        return self.prior_params[2] if self.last is None else self.last.delta_theta

    def on_gyro(self, gyro: float, dt: float) -> None:
        if self.ekf is not None:
            self.ekf = ekf_predict(self.ekf, gyro, self.v_cmd, self.mu, dt, self.config.Q_ekf)

    def on_measurement(self, z: MeasurementSample) -> NmheSolution | None:
        self.window.append(z)
        if self.ekf is None:
            self.ekf = EkfState([z.z_x, z.z_y, wrap_angle(z.z_theta + self.delta_theta)], self.config.initial_cov)
        sol = None
        if self.window.is_full:
            if self.prior_state is None:
                z0 = self.window.measurements()[0]
                self.prior_state = np.array([z0[0], z0[1], wrap_angle(z0[2] + self.prior_params[2])])
            sol = nmhe_solve(self.window, self.prior_state, self.prior_params, self.config.nmhe)
            self.last = sol
            # arrival cost for the next window: this solution shifted by one sample
            self.prior_state = sol.states[1].copy()
            self.prior_params = sol.params.copy()
            self.ekf = ekf_update(self.ekf, sol.states[-1], self.config.R_ekf)
        else:
            raw = np.array([z.z_x, z.z_y, wrap_angle(z.z_theta + self.delta_theta)])
            self.ekf = ekf_update(self.ekf, raw, self.config.R_raw)
        return sol

    def set_control(self, u: ControlInput) -> None:
        self.window.set_last_control(u)
        self.v_cmd = u.v

    @property
    def pose(self) -> State2D:
        return self.ekf.pose
