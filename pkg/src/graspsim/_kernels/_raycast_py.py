"""Vectorized numpy ray caster. Fallback for the compiled kernel.

Rays are parameterized so the hit parameter t IS the optical-axis depth:
directions are R_world_from_cam @ ((u-cx)/fx, (v-cy)/fy, 1), i.e. unit
z-component in the camera frame. Both kernel implementations evaluate the
same arithmetic in the same order so they agree bit for bit.
"""

import numpy as np

KIND_SPHERE = 0
KIND_BOX = 1
KIND_CYLINDER = 2


def _sphere(origin, dirs, center, radius, t_near):
    oc = origin - center
    a = dirs[:, 0] * dirs[:, 0] + dirs[:, 1] * dirs[:, 1] + dirs[:, 2] * dirs[:, 2]
    b = 2.0 * (dirs[:, 0] * oc[0] + dirs[:, 1] * oc[1] + dirs[:, 2] * oc[2])
    c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius
    disc = b * b - 4.0 * a * c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    t = np.where(t1 >= t_near, t1, t2)
    return np.where(ok & (t >= t_near), t, np.inf)


def _local_coords(origin, dirs, center, rot):
    """Ray origin and directions in the primitive frame, written as
    explicit component sums so the compiled kernel can match them bit
    for bit (BLAS matmul may round differently)."""
    w = origin - center
    p = np.array(
        [
            rot[0, 0] * w[0] + rot[1, 0] * w[1] + rot[2, 0] * w[2],
            rot[0, 1] * w[0] + rot[1, 1] * w[1] + rot[2, 1] * w[2],
            rot[0, 2] * w[0] + rot[1, 2] * w[1] + rot[2, 2] * w[2],
        ]
    )
    dl = np.empty_like(dirs)
    dl[:, 0] = dirs[:, 0] * rot[0, 0] + dirs[:, 1] * rot[1, 0] + dirs[:, 2] * rot[2, 0]
    dl[:, 1] = dirs[:, 0] * rot[0, 1] + dirs[:, 1] * rot[1, 1] + dirs[:, 2] * rot[2, 1]
    dl[:, 2] = dirs[:, 0] * rot[0, 2] + dirs[:, 1] * rot[1, 2] + dirs[:, 2] * rot[2, 2]
    return p, dl


def _box(origin, dirs, center, rot, half, t_near):
    p, dl = _local_coords(origin, dirs, center, rot)
    tmin = np.full(dirs.shape[0], -np.inf)
    tmax = np.full(dirs.shape[0], np.inf)
    for ax in range(3):
        d_ax = dl[:, ax]
        par = d_ax == 0.0
        safe = np.where(par, 1.0, d_ax)
        t1 = (-half[ax] - p[ax]) / safe
        t2 = (half[ax] - p[ax]) / safe
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        outside = p[ax] < -half[ax] or p[ax] > half[ax]
        lo = np.where(par, -np.inf, lo)
        hi = np.where(par, np.inf if not outside else -np.inf, hi)
        tmin = np.maximum(tmin, lo)
        tmax = np.minimum(tmax, hi)
    hit = (tmax >= tmin) & (tmax >= t_near)
    t = np.where(tmin >= t_near, tmin, tmax)
    return np.where(hit & (t >= t_near), t, np.inf)


def _cylinder(origin, dirs, center, rot, radius, half_h, t_near):
    p, dl = _local_coords(origin, dirs, center, rot)
    dx, dy, dz = dl[:, 0], dl[:, 1], dl[:, 2]
    a = dx * dx + dy * dy
    b = 2.0 * (p[0] * dx + p[1] * dy)
    c = p[0] * p[0] + p[1] * p[1] - radius * radius

    t = np.full(dirs.shape[0], np.inf)

    # Lateral surface.
    axial = a == 0.0
    a_safe = np.where(axial, 1.0, a)
    disc = b * b - 4.0 * a_safe * c
    ok = (disc >= 0.0) & ~axial
    sq = np.sqrt(np.where(disc >= 0.0, disc, 0.0))
    for sign in (-1.0, 1.0):
        ts = (-b + sign * sq) / (2.0 * a_safe)
        z_hit = p[2] + ts * dz
        good = ok & (ts >= t_near) & (np.abs(z_hit) <= half_h)
        t = np.where(good & (ts < t), ts, t)

    # End caps.
    vertical = dz == 0.0
    dz_safe = np.where(vertical, 1.0, dz)
    for cap in (-half_h, half_h):
        tc = (cap - p[2]) / dz_safe
        x = p[0] + tc * dx
        y = p[1] + tc * dy
        good = ~vertical & (tc >= t_near) & (x * x + y * y <= radius * radius)
        t = np.where(good & (tc < t), tc, t)
    return t


def raycast(origin, dirs, kinds, params, ids, t_near=1e-6):
    """Nearest-hit depth and object id per ray.

    params rows: tx ty tz | r00..r22 row-major | d0 d1 d2 where the dims
    are (radius,-,-) for spheres, half-extents for boxes and
    (radius, half_height,-) for cylinders. Misses get t=inf, id=0.
    """
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_id = np.zeros(n, dtype=np.int32)
    for k in range(kinds.shape[0]):
        center = params[k, 0:3]
        rot = params[k, 3:12].reshape(3, 3)
        dims = params[k, 12:15]
        kind = int(kinds[k])
        if kind == KIND_SPHERE:
            t = _sphere(origin, dirs, center, dims[0], t_near)
        elif kind == KIND_BOX:
            t = _box(origin, dirs, center, rot, dims, t_near)
        elif kind == KIND_CYLINDER:
            t = _cylinder(origin, dirs, center, rot, dims[0], dims[1], t_near)
        else:
            raise ValueError(f"unknown primitive kind {kind}")
        closer = t < best_t
        best_t[closer] = t[closer]
        best_id[closer] = ids[k]
    return best_t, best_id
