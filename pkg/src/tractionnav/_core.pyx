# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: image lookups, MPPI rollout costs, shooting sensitivities.

Mirrors ``tractionnav._fallback`` exactly in semantics; see that module for
the reference formulation.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sin, cos, sqrt, floor, atan2, fmod, M_PI

cnp.import_array()

BACKEND = "cython"


cdef inline double _wrap(double a) noexcept nogil:
    if -M_PI <= a < M_PI:
        return a
    cdef double w = fmod(a + M_PI, 2.0 * M_PI)
    if w < 0:
        w += 2.0 * M_PI
    w -= M_PI
    if w >= M_PI:
        w -= 2.0 * M_PI
    return w


cdef inline double _bilinear(const double[:, ::1] g, double u, double v) noexcept nogil:
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1]
    cdef Py_ssize_t i0, j0, i1, j1
    cdef double fu, fv, top, bot
    if not (u >= 0.0 and u <= w - 1 and v >= 0.0 and v <= h - 1):
        return 0.0
    i0 = <Py_ssize_t>floor(u)
    j0 = <Py_ssize_t>floor(v)
    if i0 > w - 2:
        i0 = w - 2 if w >= 2 else 0
    if j0 > h - 2:
        j0 = h - 2 if h >= 2 else 0
    i1 = i0 + 1 if i0 + 1 < w else w - 1
    j1 = j0 + 1 if j0 + 1 < h else h - 1
    fu = u - i0
    fv = v - j0
    top = g[j0, i0] * (1.0 - fu) + g[j0, i1] * fu
    bot = g[j1, i0] * (1.0 - fu) + g[j1, i1] * fu
    return top * (1.0 - fv) + bot * fv


cdef struct CamFrame:
    double fx, fy, cx, cy, w, h
    double cam_h, sp, cp, fo, rmax2
    double px, py, c, s
    int near


cdef inline CamFrame _make_frame(const double[::1] cam, const double[::1] frame, bint near):
    cdef CamFrame f
    f.fx = cam[0]; f.fy = cam[1]; f.cx = cam[2]; f.cy = cam[3]
    f.w = cam[4]; f.h = cam[5]
    f.cam_h = cam[6]; f.sp = sin(cam[7]); f.cp = cos(cam[7]); f.fo = cam[8]
    f.rmax2 = cam[9] * cam[9]
    f.px = frame[0]; f.py = frame[1]; f.c = cos(frame[2]); f.s = sin(frame[2])
    f.near = 1 if near else 0
    return f


cdef inline double _lookup(const double[:, ::1] g, CamFrame* f, double x, double y) noexcept nogil:
    cdef double dx = x - f.px, dy = y - f.py
    cdef double qx = f.c * dx + f.s * dy - f.fo
    cdef double qy = -f.s * dx + f.c * dy
    cdef double zc, xc, yc, u, v
    if qx * qx + qy * qy + f.cam_h * f.cam_h > f.rmax2:
        return 0.0
    zc = f.cp * qx + f.sp * f.cam_h
    if zc <= 1e-12:
        return 0.0
    xc = -qy
    yc = -f.sp * qx + f.cp * f.cam_h
    u = f.cx + f.fx * xc / zc
    v = f.cy + f.fy * yc / zc
    if f.near and v > f.h - 1 and u >= 0.0 and u <= f.w - 1:
        v = f.h - 1
    return _bilinear(g, u, v)


def lookup(points, grid, cam, frame, bint near_field=False):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef CamFrame f = _make_frame(np.ascontiguousarray(cam, dtype=np.float64),
                                  np.ascontiguousarray(frame, dtype=np.float64), near_field)
    cdef Py_ssize_t n = P.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _lookup(g, &f, P[i, 0], P[i, 1])
    return out


cdef inline double _quad3(const double[:, ::1] Q, double a, double b, double c) noexcept nogil:
    return (a * (Q[0, 0] * a + Q[0, 1] * b + Q[0, 2] * c)
            + b * (Q[1, 0] * a + Q[1, 1] * b + Q[1, 2] * c)
            + c * (Q[2, 0] * a + Q[2, 1] * b + Q[2, 2] * c))


cdef inline double _track_cost(const double[:, ::1] Q, double px, double py, double th,
                               double gx, double gy) noexcept nogil:
    cdef double ex = px - gx, ey = py - gy, eth = 0.0
    if ex * ex + ey * ey > 1e-12:
        eth = _wrap(th - atan2(-ey, -ex))
    return _quad3(Q, ex, ey, eth)


def rollout_costs(x0, U, double dt, double nu, grid, cam, frame, bint near_field,
                  goal, Q, QN, R, double w_clear, offsets, bint return_states=False):
    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:, :, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef const double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] QNv = np.ascontiguousarray(QN, dtype=np.float64)
    cdef const double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[:, :, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef const double[::1] goalv = np.ascontiguousarray(goal, dtype=np.float64)
    cdef CamFrame f = _make_frame(np.ascontiguousarray(cam, dtype=np.float64),
                                  np.ascontiguousarray(frame, dtype=np.float64), near_field)
    cdef Py_ssize_t K = Uv.shape[0], N = Uv.shape[1], M = off.shape[1]
    if off.shape[0] != N:
        raise ValueError("offsets must have shape (N, M, 2)")
    costs = np.empty(K)
    cdef double[::1] cv = costs
    states = np.empty((K if return_states else 1, N + 1, 3))
    cdef double[:, :, ::1] sv = states
    cdef bint keep = return_states
    cdef Py_ssize_t k, i, m
    cdef double px, py, th, v, om, mu, a, b, h2, th2, th4, k1x, k1y, k2x, k2y, k4x, k4y
    cdef double cost, acc, gx = goalv[0], gy = goalv[1]
    for k in prange(K, nogil=True, schedule="static"):
        px = x0v[0]; py = x0v[1]; th = x0v[2]
        cost = 0.0
        if keep:
            sv[k, 0, 0] = px; sv[k, 0, 1] = py; sv[k, 0, 2] = th
        for i in range(N):
            v = Uv[k, i, 0]; om = Uv[k, i, 1]
            cost = cost + _track_cost(Qv, px, py, th, gx, gy)
            cost = cost + v * (Rv[0, 0] * v + Rv[0, 1] * om) + om * (Rv[1, 0] * v + Rv[1, 1] * om)
            mu = _lookup(g, &f, px, py)
            a = mu * v
            b = nu * om
            h2 = 0.5 * dt
            k1x = a * cos(th); k1y = a * sin(th)
            th2 = th + h2 * b
            k2x = a * cos(th2); k2y = a * sin(th2)
            th4 = th + dt * b
            k4x = a * cos(th4); k4y = a * sin(th4)
            px = px + dt / 6.0 * (k1x + 4.0 * k2x + k4x)
            py = py + dt / 6.0 * (k1y + 4.0 * k2y + k4y)
            th = _wrap(th4)
            if keep:
                sv[k, i + 1, 0] = px; sv[k, i + 1, 1] = py; sv[k, i + 1, 2] = th
            if w_clear != 0.0 and M > 0:
                acc = 0.0
                for m in range(M):
                    acc = acc + _lookup(g, &f, px + off[i, m, 0], py + off[i, m, 1])
                cost = cost + w_clear * (1.0 - acc / M)
        cost = cost + _track_cost(QNv, px, py, th, gx, gy)
        cv[k] = cost
    return costs, (states if return_states else None)


def shoot(x0, double mu, double nu, controls, double dt):
    """States and sensitivities d(state)/d(x0, mu, nu) along an RK4 shooting."""
    cdef const double[:, ::1] C = np.ascontiguousarray(controls, dtype=np.float64)
    cdef Py_ssize_t N = C.shape[0], i, j
    X = np.empty((N + 1, 3))
    S = np.zeros((N + 1, 3, 5))
    cdef double[:, ::1] Xv = X
    cdef double[:, :, ::1] Sv = S
    x0a = np.asarray(x0, dtype=np.float64)
    Xv[0, 0] = x0a[0]; Xv[0, 1] = x0a[1]; Xv[0, 2] = x0a[2]
    Sv[0, 0, 0] = 1.0; Sv[0, 1, 1] = 1.0; Sv[0, 2, 2] = 1.0
    cdef double v, w, th, h2, c1, s1, c2, s2, c4, s4, a
    cdef double dth2[5]
    cdef double dth4[5]
    cdef double dk1x, dk1y, dk2x, dk2y, dk4x, dk4y
    with nogil:
        for i in range(N):
            v = C[i, 0]; w = C[i, 1]
            th = Xv[i, 2]
            h2 = 0.5 * dt
            a = mu * v
            c1 = cos(th); s1 = sin(th)
            c2 = cos(th + h2 * nu * w); s2 = sin(th + h2 * nu * w)
            c4 = cos(th + dt * nu * w); s4 = sin(th + dt * nu * w)
            Xv[i + 1, 0] = Xv[i, 0] + dt / 6.0 * a * (c1 + 4.0 * c2 + c4)
            Xv[i + 1, 1] = Xv[i, 1] + dt / 6.0 * a * (s1 + 4.0 * s2 + s4)
            Xv[i + 1, 2] = th + dt * nu * w
            for j in range(5):
                dth2[j] = Sv[i, 2, j]
                dth4[j] = Sv[i, 2, j]
            dth2[4] += h2 * w
            dth4[4] += dt * w
            for j in range(5):
                dk1x = -a * s1 * Sv[i, 2, j]
                dk1y = a * c1 * Sv[i, 2, j]
                dk2x = -a * s2 * dth2[j]
                dk2y = a * c2 * dth2[j]
                dk4x = -a * s4 * dth4[j]
                dk4y = a * c4 * dth4[j]
                if j == 3:
                    dk1x = dk1x + v * c1; dk1y = dk1y + v * s1
                    dk2x = dk2x + v * c2; dk2y = dk2y + v * s2
                    dk4x = dk4x + v * c4; dk4y = dk4y + v * s4
                Sv[i + 1, 0, j] = Sv[i, 0, j] + dt / 6.0 * (dk1x + 4.0 * dk2x + dk4x)
                Sv[i + 1, 1, j] = Sv[i, 1, j] + dt / 6.0 * (dk1y + 4.0 * dk2y + dk4y)
                Sv[i + 1, 2, j] = dth4[j]
    return X, S
