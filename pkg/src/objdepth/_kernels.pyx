# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY, fabs

cnp.import_array()

BACKEND = "cython"


def warp_sample(uv, depths, double fx, double fy, double cx, double cy, rot, trans, feat):
    cdef const double[:, ::1] uv_v = np.ascontiguousarray(uv, dtype=np.float64)
    cdef const double[:, ::1] d_v = np.ascontiguousarray(depths, dtype=np.float64)
    cdef const double[:, :, ::1] f_v = np.ascontiguousarray(feat, dtype=np.float64)
    cdef const double[:, ::1] r = np.ascontiguousarray(rot, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t n = d_v.shape[0], l = d_v.shape[1]
    cdef Py_ssize_t h = f_v.shape[0], w = f_v.shape[1], c = f_v.shape[2]
    sampled = np.zeros((n, l, c), dtype=np.float64)
    valid = np.zeros((n, l), dtype=np.bool_)
    warped = np.empty((n, l, 2), dtype=np.float64)
    cdef double[:, :, ::1] s_v = sampled
    cdef cnp.npy_bool[:, ::1] ok_v = valid
    cdef double[:, :, ::1] w_v = warped
    cdef Py_ssize_t i, j, ch, xi, yi
    cdef double u, v, d, x, y, x2, y2, z2, u2, v2, x0f, y0f, ax, ay
    cdef double w00, w10, w01, w11
    for i in range(n):
        u = uv_v[i, 0]
        v = uv_v[i, 1]
        for j in range(l):
            d = d_v[i, j]
            x = (u - cx) / fx * d
            y = (v - cy) / fy * d
            x2 = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
            y2 = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
            z2 = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
            u2 = fx * x2 / z2 + cx
            v2 = fy * y2 / z2 + cy
            w_v[i, j, 0] = u2
            w_v[i, j, 1] = v2
            if not (z2 > 0):
                continue
            x0f = floor(u2)
            y0f = floor(v2)
            if not (x0f >= 0 and x0f + 1 <= w - 1 and y0f >= 0 and y0f + 1 <= h - 1):
                continue
            ok_v[i, j] = 1
            xi = <Py_ssize_t>x0f
            yi = <Py_ssize_t>y0f
            ax = u2 - xi
            ay = v2 - yi
            w00 = (1.0 - ax) * (1.0 - ay)
            w10 = ax * (1.0 - ay)
            w01 = (1.0 - ax) * ay
            w11 = ax * ay
            for ch in range(c):
                s_v[i, j, ch] = (w00 * f_v[yi, xi, ch] + w10 * f_v[yi, xi + 1, ch]
                                 + w01 * f_v[yi + 1, xi, ch] + w11 * f_v[yi + 1, xi + 1, ch])
    return sampled, valid, warped


def ray_box_depth(rx, ry, origins, axes, half):
    rx_a = np.ascontiguousarray(rx, dtype=np.float64)
    shape = rx_a.shape
    cdef const double[::1] rxv = rx_a.ravel()
    cdef const double[::1] ryv = np.ascontiguousarray(ry, dtype=np.float64).ravel()
    cdef const double[:, ::1] o_v = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, :, ::1] a_v = np.ascontiguousarray(axes, dtype=np.float64).reshape(-1, 3, 3)
    cdef const double[:, ::1] h_v = np.ascontiguousarray(half, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t npix = rxv.shape[0], nbox = o_v.shape[0]
    depth = np.full(npix, np.inf)
    owner = np.full(npix, -1, dtype=np.int64)
    cdef double[::1] dv = depth
    cdef long long[::1] ov = owner
    cdef Py_ssize_t p, i, a
    cdef double tnear, tfar, dc, o, hh, t1, t2, tn, tf
    cdef bint miss
    for p in range(npix):
        for i in range(nbox):
            tnear = -INFINITY
            tfar = INFINITY
            miss = False
            for a in range(3):
                dc = a_v[i, 0, a] * rxv[p] + a_v[i, 1, a] * ryv[p] + a_v[i, 2, a]
                o = o_v[i, a]
                hh = h_v[i, a]
                if dc == 0.0:
                    if fabs(o) > hh:
                        miss = True
                    tn = -INFINITY
                    tf = INFINITY
                else:
                    t1 = (-hh - o) / dc
                    t2 = (hh - o) / dc
                    tn = t1 if t1 < t2 else t2
                    tf = t2 if t1 < t2 else t1
                if tn > tnear:
                    tnear = tn
                if tf < tfar:
                    tfar = tf
            if (not miss) and tnear <= tfar and tnear > 0 and tnear < dv[p]:
                dv[p] = tnear
                ov[p] = i
    return depth.reshape(shape), owner.reshape(shape)


def splat(ix, iy, probs, feats, Py_ssize_t nx, Py_ssize_t ny):
    cdef const long long[:, ::1] ix_v = np.ascontiguousarray(ix, dtype=np.int64)
    cdef const long long[:, ::1] iy_v = np.ascontiguousarray(iy, dtype=np.int64)
    cdef const double[:, ::1] p_v = np.ascontiguousarray(probs, dtype=np.float64)
    cdef const double[:, ::1] f_v = np.ascontiguousarray(feats, dtype=np.float64)
    cdef Py_ssize_t npix = p_v.shape[0], nb = p_v.shape[1], c = f_v.shape[1]
    grid = np.zeros((nx, ny, c), dtype=np.float64)
    weight = np.zeros((nx, ny), dtype=np.float64)
    cdef double[:, :, ::1] g_v = grid
    cdef double[:, ::1] w_v = weight
    cdef Py_ssize_t p, b, ch, cx, cy
    cdef double pr
    for p in range(npix):
        for b in range(nb):
            cx = ix_v[p, b]
            cy = iy_v[p, b]
            if cx < 0 or cy < 0:
                continue
            pr = p_v[p, b]
            w_v[cx, cy] += pr
            for ch in range(c):
                g_v[cx, cy, ch] += pr * f_v[p, ch]
    return grid, weight
