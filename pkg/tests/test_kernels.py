import numpy as np
import pytest

from tractionnav import kernels
from tractionnav.camera import Camera, render_oracle_image
from tractionnav.control import MpcConfig, disk_offsets
from tractionnav.kinodynamics import State2D, rk4_raw, wrap_angle
from tractionnav.world import Patch, TractionField

pytestmark = pytest.mark.skipif("cython" not in kernels.available(), reason="compiled core not built")

CAM = Camera()
POSE = State2D(1.0, -0.5, 0.3)
FIELD = TractionField(0.9, 0.9, [Patch((3.5, 0.5), 0.6, 0.1), Patch((4.0, -1.0), 0.5, 0.0, height=1.0)])
IMG = render_oracle_image(POSE, FIELD, CAM.intr, CAM.extr)


@pytest.fixture(scope="module")
def backends():
    return kernels.load("cython"), kernels.load("numpy")


class TestParity:
    @pytest.mark.parametrize("near", [False, True])
    def test_lookup(self, backends, near):
        cy, py = backends
        pts = np.random.default_rng(0).uniform([-2, -4], [8, 4], (5000, 2))
        a = cy.lookup(pts, IMG.grid, CAM.params(), POSE.as_array(), near)
        b = py.lookup(pts, IMG.grid, CAM.params(), POSE.as_array(), near)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_rollout_costs(self, backends):
        cy, py = backends
        cfg = MpcConfig()
        rng = np.random.default_rng(1)
        U = cfg.clamp(rng.normal([0.6, 0.0], [0.4, 0.6], (64, cfg.N, 2)))
        off = disk_offsets(rng, (cfg.N, cfg.clearance_samples), cfg.clearance_radius)
        args = (POSE.as_array(), U, cfg.dt, cfg.nu_bar, IMG.grid, CAM.params(), POSE.as_array(), True,
                np.array([6.0, 1.0]), cfg.Q, cfg.Q_N, cfg.R, cfg.W, off, True)
        ca, sa = cy.rollout_costs(*args)
        cb, sb = py.rollout_costs(*args)
        assert np.max(np.abs(ca - cb)) < 1e-9 * max(1.0, np.abs(cb).max())
        assert np.max(np.abs(sa - sb)) < 1e-9

    def test_shoot(self, backends):
        cy, py = backends
        rng = np.random.default_rng(2)
        ctl = np.column_stack([rng.uniform(0, 1, 20), rng.uniform(-1, 1, 20)])
        Xa, Sa = cy.shoot(np.array([0.5, 1.0, 2.0]), 0.7, 0.8, ctl, 0.1)
        Xb, Sb = py.shoot(np.array([0.5, 1.0, 2.0]), 0.7, 0.8, ctl, 0.1)
        assert np.max(np.abs(Xa - Xb)) < 1e-12 and np.max(np.abs(Sa - Sb)) < 1e-12


class TestShoot:
    def test_matches_reference_integrator(self):
        rng = np.random.default_rng(3)
        ctl = np.column_stack([rng.uniform(0, 1, 10), rng.uniform(-1, 1, 10)])
        X, _ = kernels.shoot(np.array([0.0, 0.0, 0.5]), 0.6, 0.7, ctl, 0.1)
        s = (0.0, 0.0, 0.5)
        for k, (v, w) in enumerate(ctl, start=1):
            s = rk4_raw(*s, v, w, 0.6, 0.7, 0.1)
            assert abs(X[k, 0] - s[0]) < 1e-12 and abs(wrap_angle(X[k, 2] - s[2])) < 1e-12

    def test_sensitivities_by_differences(self):
        rng = np.random.default_rng(4)
        ctl = np.column_stack([rng.uniform(0, 1, 15), rng.uniform(-1, 1, 15)])
        p = np.array([0.3, -0.2, 1.1, 0.6, 0.8])

        def f(q):
            return kernels.shoot(q[:3], q[3], q[4], ctl, 0.1)[0]
        _, S = kernels.shoot(p[:3], p[3], p[4], ctl, 0.1)
        for j in range(5):
            e = np.zeros(5)
            e[j] = 1e-6
            num = (f(p + e) - f(p - e)) / 2e-6
            assert np.max(np.abs(S[:, :, j] - num)) < 1e-6
