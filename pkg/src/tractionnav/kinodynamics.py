"""Affine skid-steer kinematics with traction coefficients.

The robot state is planar pose (px, py, theta).  Commanded linear and angular
velocities are scaled by the traction coefficients ``mu`` and ``nu``::

    px' = mu * v * cos(theta)
    py' = mu * v * sin(theta)
    theta' = nu * omega

``mu = nu = 1`` is an ideal unicycle; ``mu = 0`` pins the robot in place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi); angles already in range are returned unchanged."""
    if -math.pi <= a < math.pi:
        return float(a)
    w = (a + math.pi) % TWO_PI - math.pi
    # float rounding in % can land exactly on +pi
    if w >= math.pi:
        w -= TWO_PI
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    w = np.mod(a + math.pi, TWO_PI) - math.pi
    w = np.where(w >= math.pi, w - TWO_PI, w)
    return np.where((a >= -math.pi) & (a < math.pi), a, w)


@dataclass(frozen=True)
class State2D:
    px: float
    py: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta])

    @classmethod
    def from_array(cls, a) -> "State2D":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])

    def clamped(self, v_min: float, v_max: float, omega_max: float) -> "ControlInput":
        return ControlInput(min(max(self.v, v_min), v_max), min(max(self.omega, -omega_max), omega_max))


@dataclass(frozen=True)
class TractionParams:
    mu: float
    nu: float

    def __post_init__(self):
        object.__setattr__(self, "mu", min(max(float(self.mu), 0.0), 1.0))
        object.__setattr__(self, "nu", min(max(float(self.nu), 0.0), 1.0))


def derivative(state: State2D, u: ControlInput, p: TractionParams) -> np.ndarray:
    """Time derivative of the pose under the affine traction model."""
    return np.array([
        p.mu * u.v * math.cos(state.theta),
        p.mu * u.v * math.sin(state.theta),
        p.nu * u.omega,
    ])


def rk4_raw(px, py, th, v, w, mu, nu, dt):
    """One RK4 step on plain floats; heading is not wrapped.

    Traction and control are held constant over the step.
    """
    a = mu * v
    b = nu * w
    h2 = 0.5 * dt
    k1x, k1y = a * math.cos(th), a * math.sin(th)
    th2 = th + h2 * b
    k2x, k2y = a * math.cos(th2), a * math.sin(th2)
    # theta is linear in time, so stages 2 and 3 coincide (k3 == k2)
    th4 = th + dt * b
    k4x, k4y = a * math.cos(th4), a * math.sin(th4)
    px = px + dt / 6.0 * (k1x + 4.0 * k2x + k4x)
    py = py + dt / 6.0 * (k1y + 4.0 * k2y + k4y)
    return px, py, th4


def integrate_step(state: State2D, u: ControlInput, p: TractionParams, dt: float) -> State2D:
    if dt <= 0:
        raise ValueError("dt must be positive")
    px, py, th = rk4_raw(state.px, state.py, state.theta, u.v, u.omega, p.mu, p.nu, dt)
    return State2D(px, py, th)


def rollout(
    state: State2D,
    controls: Sequence[ControlInput],
    traction_source: Callable[[State2D], TractionParams],
    dt: float,
) -> list[State2D]:
    """Integrate a control sequence, sampling traction at each step's start state."""
    if len(controls) == 0:
        raise ValueError("controls must be nonempty")
    out = []
    x = state
    for u in controls:
        x = integrate_step(x, u, traction_source(x), dt)
        out.append(x)
    return out
