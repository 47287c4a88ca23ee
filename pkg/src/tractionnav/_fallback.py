"""Pure numpy implementations of the compiled kernels in ``_core.pyx``.

Selected automatically when the extension is not built, or forced with
``TRACTIONNAV_BACKEND=numpy``.
"""
from __future__ import annotations

import numpy as np

from .kinodynamics import wrap_angles

BACKEND = "numpy"


def _bilinear(g: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = g.shape
    inside = (u >= 0.0) & (u <= w - 1) & (v >= 0.0) & (v <= h - 1)
    uu = np.where(inside, u, 0.0)
    vv = np.where(inside, v, 0.0)
    i0 = np.minimum(np.floor(uu).astype(np.intp), max(w - 2, 0))
    j0 = np.minimum(np.floor(vv).astype(np.intp), max(h - 2, 0))
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = uu - i0
    fv = vv - j0
    top = g[j0, i0] * (1.0 - fu) + g[j0, i1] * fu
    bot = g[j1, i0] * (1.0 - fu) + g[j1, i1] * fu
    return np.where(inside, top * (1.0 - fv) + bot * fv, 0.0)


def _lookup_xy(x, y, g, cam, frame, near_field):
    fx, fy, cx, cy, w, h, cam_h, pitch, fo, rmax = cam
    c, s = np.cos(frame[2]), np.sin(frame[2])
    sp, cp = np.sin(pitch), np.cos(pitch)
    dx, dy = x - frame[0], y - frame[1]
    qx = c * dx + s * dy - fo
    qy = -s * dx + c * dy
    in_range = qx * qx + qy * qy + cam_h * cam_h <= rmax * rmax
    zc = cp * qx + sp * cam_h
    front = in_range & (zc > 1e-12)
    zs = np.where(front, zc, 1.0)
    u = cx + fx * -qy / zs
    v = cy + fy * (-sp * qx + cp * cam_h) / zs
    if near_field:
        v = np.where((v > h - 1) & (u >= 0.0) & (u <= w - 1), h - 1, v)
    return np.where(front, _bilinear(g, u, v), 0.0)


def lookup(points, grid, cam, frame, near_field=False):
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return _lookup_xy(P[:, 0], P[:, 1], np.asarray(grid, dtype=np.float64), np.asarray(cam, dtype=np.float64),
                      np.asarray(frame, dtype=np.float64), near_field)


def _track_cost(Q, px, py, th, gx, gy):
    ex, ey = px - gx, py - gy
    far = ex * ex + ey * ey > 1e-12
    eth = np.where(far, wrap_angles(th - np.arctan2(-ey, -ex)), 0.0)
    e = np.stack([ex, ey, eth], axis=-1)
    return np.einsum("ki,ij,kj->k", e, Q, e)


def rollout_costs(x0, U, dt, nu, grid, cam, frame, near_field, goal, Q, QN, R, w_clear, offsets,
                  return_states=False):
    U = np.asarray(U, dtype=np.float64)
    K, N, _ = U.shape
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape[0] != N:
        raise ValueError("offsets must have shape (N, M, 2)")
    M = offsets.shape[1]
    g = np.asarray(grid, dtype=np.float64)
    cam = np.asarray(cam, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    Q, QN, R = (np.asarray(a, dtype=np.float64) for a in (Q, QN, R))
    gx, gy = float(goal[0]), float(goal[1])
    px = np.full(K, float(x0[0]))
    py = np.full(K, float(x0[1]))
    th = np.full(K, float(x0[2]))
    cost = np.zeros(K)
    states = np.empty((K, N + 1, 3)) if return_states else None
    if return_states:
        states[:, 0] = (px[0], py[0], th[0])
    h2 = 0.5 * dt
    for i in range(N):
        v, om = U[:, i, 0], U[:, i, 1]
        cost = cost + _track_cost(Q, px, py, th, gx, gy)
        cost = cost + (v * (R[0, 0] * v + R[0, 1] * om) + om * (R[1, 0] * v + R[1, 1] * om))
        mu = _lookup_xy(px, py, g, cam, frame, near_field)
        a = mu * v
        b = nu * om
        th2 = th + h2 * b
        th4 = th + dt * b
        px = px + dt / 6.0 * (a * np.cos(th) + 4.0 * (a * np.cos(th2)) + a * np.cos(th4))
        py = py + dt / 6.0 * (a * np.sin(th) + 4.0 * (a * np.sin(th2)) + a * np.sin(th4))
        th = wrap_angles(th4)
        if return_states:
            states[:, i + 1, 0], states[:, i + 1, 1], states[:, i + 1, 2] = px, py, th
        if w_clear != 0.0 and M > 0:
            qx = px[:, None] + offsets[i, :, 0]
            qy = py[:, None] + offsets[i, :, 1]
            m = _lookup_xy(qx, qy, g, cam, frame, near_field)
            cost = cost + w_clear * (1.0 - m.sum(axis=1) / M)
    cost = cost + _track_cost(QN, px, py, th, gx, gy)
    return cost, states


def shoot(x0, mu, nu, controls, dt):
    """States and sensitivities d(state)/d(x0, mu, nu) along an RK4 shooting."""
    C = np.asarray(controls, dtype=np.float64)
    N = C.shape[0]
    X = np.empty((N + 1, 3))
    S = np.zeros((N + 1, 3, 5))
    X[0] = x0
    S[0, :, :3] = np.eye(3)
    h2 = 0.5 * dt
    for i in range(N):
        v, w = C[i]
        th = X[i, 2]
        a = mu * v
        t2, t4 = th + h2 * nu * w, th + dt * nu * w
        c1, s1, c2, s2, c4, s4 = np.cos(th), np.sin(th), np.cos(t2), np.sin(t2), np.cos(t4), np.sin(t4)
        X[i + 1, 0] = X[i, 0] + dt / 6.0 * a * (c1 + 4.0 * c2 + c4)
        X[i + 1, 1] = X[i, 1] + dt / 6.0 * a * (s1 + 4.0 * s2 + s4)
        X[i + 1, 2] = t4
        dth1 = S[i, 2].copy()
        dth2 = dth1.copy()
        dth4 = dth1.copy()
        dth2[4] += h2 * w
        dth4[4] += dt * w
        dkx = -a * (s1 * dth1 + 4.0 * s2 * dth2 + s4 * dth4)
        dky = a * (c1 * dth1 + 4.0 * c2 * dth2 + c4 * dth4)
        dkx[3] += v * (c1 + 4.0 * c2 + c4)
        dky[3] += v * (s1 + 4.0 * s2 + s4)
        S[i + 1, 0] = S[i, 0] + dt / 6.0 * dkx
        S[i + 1, 1] = S[i, 1] + dt / 6.0 * dky
        S[i + 1, 2] = dth4
    return X, S
