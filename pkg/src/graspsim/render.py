"""Virtual eye-in-hand depth camera: per-pixel ray casts against the
scene's analytic primitives, then seeded sensor noise.

Depth is measured along the optical axis (z-depth, like a real depth
camera), not along the ray, so a fronto-parallel plane reads a constant
value. The per-pixel intersection work is delegated to the kernel layer
(compiled extension or numpy fallback).
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .perception import DepthFrame
from .simworld import STREAM_RENDER, Scene, SimObject, stream_rng
from .spatial import CameraIntrinsics

BACKGROUND_COLOR = (40, 44, 52)

_ray_cache: dict[tuple, np.ndarray] = {}


def _camera_rays(k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit z, one row per pixel."""
    key = (k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    cached = _ray_cache.get(key)
    if cached is None:
        u = (np.arange(k.width) - k.cx) / k.fx
        v = (np.arange(k.height) - k.cy) / k.fy
        uu, vv = np.meshgrid(u, v)
        cached = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
        cached.setflags(write=False)
        _ray_cache[key] = cached
    return cached


def _pack_primitives(objects: tuple[SimObject, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = len(objects)
    kinds = np.empty(m, dtype=np.int32)
    params = np.zeros((m, 15))
    ids = np.empty(m, dtype=np.int32)
    for i, o in enumerate(objects):
        ids[i] = o.id
        params[i, 0:3] = o.pose.translation
        params[i, 3:12] = o.pose.rotation.ravel()
        if o.shape == "sphere":
            kinds[i] = _kernels.KIND_SPHERE
            params[i, 12] = o.dims[0]
        elif o.shape == "box":
            kinds[i] = _kernels.KIND_BOX
            params[i, 12:15] = 0.5 * np.asarray(o.dims)
        else:
            kinds[i] = _kernels.KIND_CYLINDER
            params[i, 12] = o.dims[0]
            params[i, 13] = 0.5 * o.dims[1]
    return kinds, params, ids


def render_view(
    camera_pose,  # RigidTransform world <- camera
    objects: tuple[SimObject, ...],
    intrinsics: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free depth and label images for an arbitrary camera pose."""
    dirs_cam = _camera_rays(intrinsics)
    dirs_world = dirs_cam @ camera_pose.rotation.T
    origin = camera_pose.translation.astype(float)
    if objects:
        kinds, params, ids = _pack_primitives(objects)
        t, labels = _kernels.raycast(origin, np.ascontiguousarray(dirs_world), kinds, params, ids)
    else:
        n = dirs_world.shape[0]
        t = np.full(n, np.inf)
        labels = np.zeros(n, dtype=np.int32)
    depth = np.where(np.isfinite(t), t, 0.0).reshape(intrinsics.height, intrinsics.width)
    label_img = labels.reshape(intrinsics.height, intrinsics.width)
    return depth, label_img


def _colorize(label_img: np.ndarray, objects: tuple[SimObject, ...]) -> np.ndarray:
    max_id = max((o.id for o in objects), default=0)
    lut = np.zeros((max_id + 1, 3), dtype=np.uint8)
    lut[0] = BACKGROUND_COLOR
    for o in objects:
        lut[o.id] = o.color
    return lut[label_img]


def render_depth(scene: Scene) -> tuple[DepthFrame, np.ndarray]:
    """Render the scene through the eye-in-hand camera.

    Returns the noisy DepthFrame and the clean per-pixel label image
    (0 = background). Depth noise, dropout and quantization draw from a
    generator keyed to the scene's seed and step count, so rendering the
    same Scene twice gives identical output.
    """
    depth, label_img = render_view(scene.camera_transform(), scene.objects, scene.intrinsics)

    noise = scene.noise
    hit = label_img > 0
    if noise.depth_sigma > 0.0 or noise.dropout_prob > 0.0:
        rng = stream_rng(scene.rng_seed, scene.step_count, STREAM_RENDER)
        if noise.depth_sigma > 0.0:
            jitter = rng.normal(0.0, noise.depth_sigma, depth.shape)
            depth = np.where(hit, np.maximum(depth + jitter, 0.0), depth)
        if noise.dropout_prob > 0.0:
            drop = rng.random(depth.shape) < noise.dropout_prob
            depth = np.where(drop & hit, 0.0, depth)
    if noise.quantization > 0.0:
        depth = np.round(depth / noise.quantization) * noise.quantization

    frame = DepthFrame(
        depth=depth,
        color=_colorize(label_img, scene.objects),
        intrinsics=scene.intrinsics,
        timestamp=scene.clock,
    )
    return frame, label_img
