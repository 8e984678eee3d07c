"""Rigid-body math shared by every other module: tagged 3D points, rigid
transforms, and pinhole camera intrinsics.

Frames are explicit string labels validated on every compose/apply. A
mismatch raises FrameError instead of silently producing coordinates in
the wrong frame, which is the dominant failure mode when the same point
travels camera -> end-effector -> arm-base -> world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FrameError

# Canonical frame labels. Any string is accepted; these are the ones the
# pipeline itself uses.
WORLD = "world"
ARM_BASE = "arm_base"
END_EFFECTOR = "end_effector"
CAMERA = "camera"

_ORTHO_TOL = 1e-9


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3).copy()
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    a.setflags(write=False)
    return a


def _mat3(m) -> np.ndarray:
    a = np.asarray(m, dtype=float).reshape(3, 3).copy()
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Point3:
    """A point in meters, tagged with the frame it lives in."""

    x: float
    y: float
    z: float
    frame: str = WORLD

    def __post_init__(self):
        for c in (self.x, self.y, self.z):
            if not math.isfinite(c):
                raise ValueError("Point3 components must be finite")

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @staticmethod
    def from_array(a, frame: str) -> "Point3":
        a = np.asarray(a, dtype=float).reshape(3)
        return Point3(float(a[0]), float(a[1]), float(a[2]), frame)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def distance_to(self, other: "Point3") -> float:
        if other.frame != self.frame:
            raise FrameError(f"distance between frames {self.frame!r} and {other.frame!r}")
        return float(np.linalg.norm(self.xyz - other.xyz))


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues formula; axis need not be normalized."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        if abs(angle) < 1e-12:
            return np.eye(3)
        raise ValueError("zero axis with nonzero angle")
    x, y, z = axis / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_from_quaternion(w: float, x: float, y: float, z: float) -> np.ndarray:
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_vector(r: np.ndarray) -> np.ndarray:
    """Log map: rotation matrix to axis*angle vector."""
    tr = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    angle = math.acos(tr)
    if angle < 1e-12:
        return np.zeros(3)
    if angle > math.pi - 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part instead.
        a = np.sqrt(np.maximum(0.0, (np.diag(r) + 1.0) / 2.0))
        i = int(np.argmax(a))
        axis = np.zeros(3)
        axis[i] = a[i]
        j, k = (i + 1) % 3, (i + 2) % 3
        axis[j] = r[i, j] / (2.0 * a[i] + 1e-300)
        axis[k] = r[i, k] / (2.0 * a[i] + 1e-300)
        axis = axis / (np.linalg.norm(axis) + 1e-300)
        return axis * angle
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return w * (angle / (2.0 * math.sin(angle)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Maps points in `from_frame` to points in `to_frame` via R p + t."""

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: str
    to_frame: str

    def __post_init__(self):
        object.__setattr__(self, "rotation", _mat3(self.rotation))
        object.__setattr__(self, "translation", _vec3(self.translation))
        r = self.rotation
        if np.linalg.norm(r.T @ r - np.eye(3)) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")

    @staticmethod
    def identity(frame: str) -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3), frame, frame)

    @staticmethod
    def from_axis_angle(axis, angle: float, translation, from_frame: str, to_frame: str) -> "RigidTransform":
        return RigidTransform(rotation_from_axis_angle(axis, angle), translation, from_frame, to_frame)

    @staticmethod
    def from_quaternion(w, x, y, z, translation, from_frame: str, to_frame: str) -> "RigidTransform":
        return RigidTransform(rotation_from_quaternion(w, x, y, z), translation, from_frame, to_frame)

    @staticmethod
    def from_matrix(m, from_frame: str, to_frame: str) -> "RigidTransform":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return RigidTransform(m[:3, :3], m[:3, 3], from_frame, to_frame)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: maps other.from_frame to self.to_frame."""
        if self.from_frame != other.to_frame:
            raise FrameError(
                f"cannot compose: left expects {self.from_frame!r}, right produces {other.to_frame!r}"
            )
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            other.from_frame,
            self.to_frame,
        )

    def apply(self, p: Point3) -> Point3:
        if p.frame != self.from_frame:
            raise FrameError(f"point in frame {p.frame!r}, transform expects {self.from_frame!r}")
        out = self.rotation @ p.xyz + self.translation
        return Point3.from_array(out, self.to_frame)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation), self.to_frame, self.from_frame)

    def is_close(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (
            self.from_frame == other.from_frame
            and self.to_frame == other.to_frame
            and np.linalg.norm(self.rotation - other.rotation) <= tol
            and np.linalg.norm(self.translation - other.translation) <= tol
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def apply(t: RigidTransform, p: Point3) -> Point3:
    return t.apply(p)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model. fx/fy/cx/cy in pixels, image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def back_project(self, u: float, v: float, depth: float) -> Point3:
        """Pixel plus depth to a camera-frame point (x right, y down, z forward)."""
        x = (u - self.cx) * depth / self.fx
        y = (v - self.cy) * depth / self.fy
        return Point3(x, y, depth, CAMERA)

    def project(self, p: Point3) -> tuple[float, float]:
        if p.frame != CAMERA:
            raise FrameError(f"project expects a camera-frame point, got {p.frame!r}")
        if p.z <= 0:
            raise ValueError("cannot project a point at or behind the camera")
        return (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
