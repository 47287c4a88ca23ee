import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import arc_step
from tractionnav.kinodynamics import (
    ControlInput, State2D, TractionParams, derivative, integrate_step, rollout, wrap_angle,
)


class TestTypes:
    def test_state_wraps_heading(self):
        s = State2D(0, 0, 3 * math.pi)
        assert -math.pi <= s.theta < math.pi
        assert math.isclose(abs(s.theta), math.pi)

    def test_traction_clamped(self):
        p = TractionParams(1.3, -0.2)
        assert (p.mu, p.nu) == (1.0, 0.0)

    @given(st.floats(-100, 100, allow_nan=False))
    def test_wrap_range(self, a):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


class TestDerivative:
    def test_identity_traction(self):
        d = derivative(State2D(0, 0, 0), ControlInput(1, 0), TractionParams(1, 1))
        assert np.allclose(d, [1, 0, 0])

    def test_zero_traction_is_uncontrollable(self):
        d = derivative(State2D(0, 0, math.pi / 2), ControlInput(1, 1), TractionParams(0, 0))
        assert np.allclose(d, [0, 0, 0])

    def test_hand_evaluation(self):
        d = derivative(State2D(0, 0, math.pi / 2), ControlInput(2, 0), TractionParams(0.5, 1))
        assert np.allclose(d, [0, 1, 0], atol=1e-12)


class TestIntegrateStep:
    def test_straight_line(self):
        s = integrate_step(State2D(0, 0, 0), ControlInput(1, 0), TractionParams(1, 1), 0.1)
        assert math.isclose(s.px, 0.1) and s.py == 0 and s.theta == 0

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3.1, 3.1),
           st.floats(0, 1), st.floats(0, 1))
    def test_zero_input_fixed_point(self, x, y, th, mu, nu):
        s0 = State2D(x, y, th)
        s1 = integrate_step(s0, ControlInput(0, 0), TractionParams(mu, nu), 0.1)
        assert s1 == s0

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            integrate_step(State2D(0, 0, 0), ControlInput(1, 0), TractionParams(1, 1), 0.0)

    def test_unit_circle_returns_home(self):
        t0 = time.perf_counter()
        s = State2D(0, 0, 0)
        steps = int(2 * math.pi / 0.01)
        u, p = ControlInput(1, 1), TractionParams(1, 1)
        for _ in range(steps):
            s = integrate_step(s, u, p, 0.01)
        # 628 steps leave 3.2 ms of the period; close it with one short step
        s = integrate_step(s, u, p, 2 * math.pi - steps * 0.01)
        assert math.hypot(s.px, s.py) < 1e-4
        assert abs(wrap_angle(s.theta)) < 1e-9
        assert time.perf_counter() - t0 < 1.0

    @settings(max_examples=50)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1), st.floats(0.1, 1), st.floats(-3, 3))
    def test_matches_closed_form_arc(self, v, w, mu, nu, th):
        s = integrate_step(State2D(0, 0, th), ControlInput(v, w), TractionParams(mu, nu), 0.1)
        ex = arc_step(0, 0, th, v, w, mu, nu, 0.1)
        assert abs(s.px - ex[0]) < 1e-8 and abs(s.py - ex[1]) < 1e-8
        assert abs(wrap_angle(s.theta - ex[2])) < 1e-12


class TestRollout:
    def test_constant_traction_points(self):
        xs = rollout(State2D(0, 0, 0), [ControlInput(1, 0)] * 10, lambda s: TractionParams(1, 1), 0.1)
        assert len(xs) == 10
        for k, s in enumerate(xs, start=1):
            assert math.isclose(s.px, 0.1 * k, abs_tol=1e-12) and s.py == 0

    def test_zero_traction_stays(self):
        s0 = State2D(1, 2, 0.3)
        xs = rollout(s0, [ControlInput(1, 0.5)] * 5, lambda s: TractionParams(0, 0), 0.1)
        assert all(s == s0 for s in xs)

    def test_piecewise_traction(self):
        src = lambda s: TractionParams(1.0 if s.px < 0.5 - 1e-9 else 0.5, 1.0)
        xs = [s.px for s in rollout(State2D(0, 0, 0), [ControlInput(1, 0)] * 10, src, 0.1)]
        steps = np.diff([0.0] + xs)
        assert np.allclose(steps[:5], 0.1) and np.allclose(steps[5:], 0.05)

    def test_empty_controls(self):
        with pytest.raises(ValueError):
            rollout(State2D(0, 0, 0), [], lambda s: TractionParams(1, 1), 0.1)
