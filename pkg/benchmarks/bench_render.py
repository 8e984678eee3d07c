#!/usr/bin/env python3
"""Benchmark the compiled ray-cast kernel against the numpy fallback.

Renders the same mixed-primitive scene through both code paths and
reports per-frame times plus the end-to-end render cost including noise.

    python benchmarks/bench_render.py [--frames 50]
"""

import argparse
import math
import time

import numpy as np

from graspsim import _kernels
from graspsim._kernels import raycast_py
from graspsim.kinematics import DEFAULT_HOME, default_chain
from graspsim.render import render_depth
from graspsim.simworld import NoiseModel, PlatformPose, Scene, SimObject
from graspsim.spatial import (
    CAMERA,
    END_EFFECTOR,
    WORLD,
    CameraIntrinsics,
    RigidTransform,
    rotation_from_axis_angle,
)

try:
    from graspsim._kernels import _raycast_cy

    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


def scene_payload(width=320, height=240, objects=6, seed=2):
    rng = np.random.default_rng(seed)
    k = CameraIntrinsics(277.0, 277.0, width / 2, height / 2, width, height)
    u = (np.arange(width) - k.cx) / k.fx
    v = (np.arange(height) - k.cy) / k.fy
    uu, vv = np.meshgrid(u, v)
    dirs = np.ascontiguousarray(np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1))
    origin = np.zeros(3)
    kinds = rng.integers(0, 3, objects).astype(np.int32)
    params = np.zeros((objects, 15))
    ids = np.arange(1, objects + 1, dtype=np.int32)
    for i in range(objects):
        params[i, 0:3] = rng.uniform(-0.5, 0.5, 3) + [0, 0, 1.5]
        rot = rotation_from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
        params[i, 3:12] = rot.ravel()
        params[i, 12:15] = rng.uniform(0.04, 0.25, 3)
    return origin, dirs, kinds, params, ids


def time_fn(fn, frames):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(frames):
        fn()
    return (time.perf_counter() - t0) / frames * 1000


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--frames", type=int, default=50)
    parser.add_argument("--objects", type=int, default=6)
    args = parser.parse_args()

    origin, dirs, kinds, params, ids = scene_payload(objects=args.objects)
    n_px = dirs.shape[0]
    print(f"ray cast: {n_px} rays x {args.objects} primitives, {args.frames} frames each")

    t_py = time_fn(lambda: raycast_py(origin, dirs, kinds, params, ids), args.frames)
    print(f"  numpy fallback : {t_py:8.2f} ms/frame")
    if HAVE_COMPILED:
        t_cy = time_fn(lambda: _raycast_cy.raycast(origin, dirs, kinds, params, ids), args.frames)
        print(f"  compiled       : {t_cy:8.2f} ms/frame   ({t_py / t_cy:.1f}x faster)")
        a = raycast_py(origin, dirs, kinds, params, ids)
        b = _raycast_cy.raycast(origin, dirs, kinds, params, ids)
        print(f"  bitwise equal  : {np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])}")
    else:
        print("  compiled       : not built")

    # Whole-pipeline render including noise and colorization.
    chain = default_chain()
    scene = Scene(
        objects=tuple(
            SimObject(
                i + 1,
                f"obj{i}",
                ("box", "sphere", "cylinder")[i % 3],
                ((0.06, 0.05, 0.07), (0.03,), (0.025, 0.09))[i % 3],
                RigidTransform(np.eye(3), [0.55 + 0.04 * i, 0.05 * (i - 2), 0.2], f"obj:{i + 1}", WORLD),
            )
            for i in range(args.objects)
        ),
        obstacles=(),
        platform=PlatformPose(0, 0, 0),
        arm_theta=np.array(DEFAULT_HOME),
        chain=chain,
        hand_eye=RigidTransform(np.eye(3), [0, 0, -0.08], CAMERA, END_EFFECTOR),
        intrinsics=CameraIntrinsics(277.0, 277.0, 160.0, 120.0, 320, 240),
        noise=NoiseModel(0.002, 0.05, 0.0005, 0.001),
        rng_seed=1,
    )
    t_full = time_fn(lambda: render_depth(scene), max(args.frames // 2, 10))
    print(f"render_depth (active backend = {_kernels.BACKEND}): {t_full:.2f} ms/frame incl. noise")


if __name__ == "__main__":
    main()
