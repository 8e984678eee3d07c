# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-cast kernel. Mirrors _raycast_py.py operation for
operation so both backends produce bit-identical images."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

KIND_SPHERE = 0
KIND_BOX = 1
KIND_CYLINDER = 2


cdef inline double _sphere_one(double ox, double oy, double oz,
                               double dx, double dy, double dz,
                               double r, double t_near) nogil:
    cdef double a = dx * dx + dy * dy + dz * dz
    cdef double b = 2.0 * (dx * ox + dy * oy + dz * oz)
    cdef double c = ox * ox + oy * oy + oz * oz - r * r
    cdef double disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return INFINITY
    cdef double sq = sqrt(disc)
    cdef double t1 = (-b - sq) / (2.0 * a)
    cdef double t2 = (-b + sq) / (2.0 * a)
    cdef double t = t1 if t1 >= t_near else t2
    return t if t >= t_near else INFINITY


cdef inline double _box_one(double px, double py, double pz,
                            double dx, double dy, double dz,
                            double hx, double hy, double hz,
                            double t_near) nogil:
    cdef double tmin = -INFINITY
    cdef double tmax = INFINITY
    cdef double t1, t2, lo, hi
    cdef int ax
    cdef double p, d, h
    for ax in range(3):
        if ax == 0:
            p = px; d = dx; h = hx
        elif ax == 1:
            p = py; d = dy; h = hy
        else:
            p = pz; d = dz; h = hz
        if d == 0.0:
            if p < -h or p > h:
                return INFINITY
            # parallel and inside the slab: no constraint
        else:
            t1 = (-h - p) / d
            t2 = (h - p) / d
            lo = t1 if t1 <= t2 else t2
            hi = t2 if t1 <= t2 else t1
            if lo > tmin:
                tmin = lo
            if hi < tmax:
                tmax = hi
    if tmax < tmin or tmax < t_near:
        return INFINITY
    cdef double t = tmin if tmin >= t_near else tmax
    return t if t >= t_near else INFINITY


cdef inline double _cylinder_one(double px, double py, double pz,
                                 double dx, double dy, double dz,
                                 double r, double half_h,
                                 double t_near) nogil:
    cdef double best = INFINITY
    cdef double a = dx * dx + dy * dy
    cdef double b, c, disc, sq, ts, z_hit, tc, x, y
    if a != 0.0:
        b = 2.0 * (px * dx + py * dy)
        c = px * px + py * py - r * r
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = sqrt(disc)
            ts = (-b - sq) / (2.0 * a)
            if ts >= t_near:
                z_hit = pz + ts * dz
                if fabs(z_hit) <= half_h and ts < best:
                    best = ts
            ts = (-b + sq) / (2.0 * a)
            if ts >= t_near:
                z_hit = pz + ts * dz
                if fabs(z_hit) <= half_h and ts < best:
                    best = ts
    if dz != 0.0:
        tc = (-half_h - pz) / dz
        if tc >= t_near:
            x = px + tc * dx
            y = py + tc * dy
            if x * x + y * y <= r * r and tc < best:
                best = tc
        tc = (half_h - pz) / dz
        if tc >= t_near:
            x = px + tc * dx
            y = py + tc * dy
            if x * x + y * y <= r * r and tc < best:
                best = tc
    return best


def raycast(cnp.ndarray[cnp.float64_t, ndim=1] origin,
            cnp.ndarray[cnp.float64_t, ndim=2] dirs,
            cnp.ndarray[cnp.int32_t, ndim=1] kinds,
            cnp.ndarray[cnp.float64_t, ndim=2] params,
            cnp.ndarray[cnp.int32_t, ndim=1] ids,
            double t_near=1e-6):
    cdef Py_ssize_t n = dirs.shape[0]
    cdef Py_ssize_t m = kinds.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_t = np.full(n, np.inf)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] best_id = np.zeros(n, dtype=np.int32)
    cdef double[:, :] dv = dirs
    cdef double[:, :] pv = params
    cdef double[:] bt = best_t
    cdef int[:] bi = best_id
    cdef int[:] kv = kinds
    cdef int[:] iv = ids
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef Py_ssize_t i, k
    cdef int kind, oid
    cdef double cx, cy, cz
    cdef double r00, r01, r02, r10, r11, r12, r20, r21, r22
    cdef double d0, d1, d2
    cdef double lx, ly, lz  # ray origin in the primitive's local frame
    cdef double wx, wy, wz, dx, dy, dz, t

    with nogil:
        for k in range(m):
            kind = kv[k]
            oid = iv[k]
            cx = pv[k, 0]; cy = pv[k, 1]; cz = pv[k, 2]
            r00 = pv[k, 3]; r01 = pv[k, 4]; r02 = pv[k, 5]
            r10 = pv[k, 6]; r11 = pv[k, 7]; r12 = pv[k, 8]
            r20 = pv[k, 9]; r21 = pv[k, 10]; r22 = pv[k, 11]
            d0 = pv[k, 12]; d1 = pv[k, 13]; d2 = pv[k, 14]
            # local origin: R^T (o - c)
            wx = ox - cx; wy = oy - cy; wz = oz - cz
            lx = r00 * wx + r10 * wy + r20 * wz
            ly = r01 * wx + r11 * wy + r21 * wz
            lz = r02 * wx + r12 * wy + r22 * wz
            for i in range(n):
                if kind == 0:
                    t = _sphere_one(wx, wy, wz, dv[i, 0], dv[i, 1], dv[i, 2], d0, t_near)
                else:
                    # local direction: d @ R
                    dx = dv[i, 0] * r00 + dv[i, 1] * r10 + dv[i, 2] * r20
                    dy = dv[i, 0] * r01 + dv[i, 1] * r11 + dv[i, 2] * r21
                    dz = dv[i, 0] * r02 + dv[i, 1] * r12 + dv[i, 2] * r22
                    if kind == 1:
                        t = _box_one(lx, ly, lz, dx, dy, dz, d0, d1, d2, t_near)
                    else:
                        t = _cylinder_one(lx, ly, lz, dx, dy, dz, d0, d1, t_near)
                if t < bt[i]:
                    bt[i] = t
                    bi[i] = oid
    return best_t, best_id
