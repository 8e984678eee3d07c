"""Deterministic synthetic world: primitive objects with optional drift,
the mobile platform carrying the arm, and seeded noise models.

Scenes are immutable values; stepping returns a new Scene. All noise is
keyed to (scene seed, step count), so rendering the same Scene twice
gives identical images and replaying a scenario gives identical runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnknownObject
from .kinematics import KinematicChain, forward_kinematics
from .spatial import ARM_BASE, CAMERA, CameraIntrinsics, Point3, RigidTransform, WORLD

SHAPES = ("box", "sphere", "cylinder")

# Noise stream ids, combined with (seed, step_count) to key generators.
STREAM_RENDER = 1
STREAM_SERVO = 2
STREAM_TRACKER = 3


def stream_rng(seed: int, step_count: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, step_count, stream))))


@dataclass(frozen=True)
class NoiseModel:
    depth_sigma: float = 0.0
    dropout_prob: float = 0.0
    servo_sigma: float = 0.0
    quantization: float = 0.001  # 1 mm, consumer depth camera style; 0 disables

    def __post_init__(self):
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.depth_sigma < 0 or self.servo_sigma < 0 or self.quantization < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class PlatformPose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        h = (self.heading + math.pi) % (2.0 * math.pi) - math.pi
        if h <= -math.pi:
            h += 2.0 * math.pi
        object.__setattr__(self, "heading", h)


@dataclass(frozen=True)
class Obstacle:
    center: Point3
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class SimObject:
    id: int
    name: str
    shape: str
    dims: tuple[float, ...]  # box: (sx, sy, sz); sphere: (r,); cylinder: (r, h)
    pose: RigidTransform
    drift_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    graspable: bool = True
    color: tuple[int, int, int] = (200, 90, 60)

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("object ids start at 1 (0 is background)")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        expect = {"box": 3, "sphere": 1, "cylinder": 2}[self.shape]
        if len(self.dims) != expect or any(d <= 0 for d in self.dims):
            raise ValueError(f"{self.shape} needs {expect} positive dimensions")

    @property
    def grasp_width(self) -> float:
        """Extent across the gripper jaws once centered on the object."""
        if self.shape == "box":
            return min(self.dims[0], self.dims[1])
        return 2.0 * self.dims[0]


@dataclass(frozen=True)
class Scene:
    objects: tuple[SimObject, ...]
    obstacles: tuple[Obstacle, ...]
    platform: PlatformPose
    arm_theta: np.ndarray
    chain: KinematicChain
    hand_eye: RigidTransform  # end-effector <- camera
    intrinsics: CameraIntrinsics
    noise: NoiseModel
    rng_seed: int
    clock: float = 0.0
    step_count: int = 0
    arm_mount_height: float = 0.0

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        theta = np.asarray(self.arm_theta, dtype=float).reshape(-1).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "arm_theta", theta)
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def object_by_id(self, object_id: int) -> SimObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise UnknownObject(f"no object with id {object_id}")

    def names(self) -> dict[int, str]:
        return {o.id: o.name for o in self.objects}

    def base_transform(self) -> RigidTransform:
        """world <- arm_base for the current platform pose."""
        return base_transform(self.platform, self.arm_mount_height)

    def camera_transform(self) -> RigidTransform:
        """world <- camera through the platform, arm FK and hand-eye chain."""
        fk = forward_kinematics(self.chain, self.arm_theta)
        return self.base_transform().compose(fk.as_transform()).compose(self.hand_eye)


def base_transform(platform: PlatformPose, mount_height: float = 0.0) -> RigidTransform:
    c, s = math.cos(platform.heading), math.sin(platform.heading)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return RigidTransform(rot, [platform.x, platform.y, mount_height], ARM_BASE, WORLD)


def _wrap(a: float) -> float:
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return w + 2.0 * math.pi if w <= -math.pi else w


def advance_platform(
    platform: PlatformPose,
    goal: PlatformPose,
    dt: float,
    speed: float = 0.3,
    turn_rate: float = 1.0,
) -> PlatformPose:
    dx, dy = goal.x - platform.x, goal.y - platform.y
    dist = math.hypot(dx, dy)
    step = speed * dt
    if dist <= step:
        x, y = goal.x, goal.y
    else:
        x = platform.x + dx / dist * step
        y = platform.y + dy / dist * step
    dh = _wrap(goal.heading - platform.heading)
    max_turn = turn_rate * dt
    if abs(dh) <= max_turn:
        heading = goal.heading
    else:
        heading = platform.heading + math.copysign(max_turn, dh)
    return PlatformPose(x, y, heading)


def platform_arrived(platform: PlatformPose, goal: PlatformPose, pos_tol: float = 1e-3, heading_tol: float = 0.01) -> bool:
    return (
        math.hypot(goal.x - platform.x, goal.y - platform.y) <= pos_tol
        and abs(_wrap(goal.heading - platform.heading)) <= heading_tol
    )


def step_world(
    scene: Scene,
    dt: float,
    commanded_theta,
    platform_goal: PlatformPose | None = None,
    platform_speed: float = 0.3,
    platform_turn_rate: float = 1.0,
) -> Scene:
    """Advance the world by dt: objects drift, the arm tracks the command
    (plus servo noise), the platform closes on its goal."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    objects = []
    for o in scene.objects:
        v = np.asarray(o.drift_velocity)
        if np.any(v != 0.0):
            pose = RigidTransform(
                o.pose.rotation, o.pose.translation + v * dt, o.pose.from_frame, o.pose.to_frame
            )
            objects.append(replace(o, pose=pose))
        else:
            objects.append(o)

    theta = scene.chain._check(commanded_theta).copy()
    if scene.noise.servo_sigma > 0.0:
        rng = stream_rng(scene.rng_seed, scene.step_count, STREAM_SERVO)
        theta = theta + rng.normal(0.0, scene.noise.servo_sigma, theta.shape)

    platform = scene.platform
    if platform_goal is not None:
        platform = advance_platform(platform, platform_goal, dt, platform_speed, platform_turn_rate)

    return replace(
        scene,
        objects=tuple(objects),
        platform=platform,
        arm_theta=theta,
        clock=scene.clock + dt,
        step_count=scene.step_count + 1,
    )


def ground_truth_centroid(scene: Scene, object_id: int) -> Point3:
    """Analytic centroid of the shape at its current pose (world frame)."""
    obj = scene.object_by_id(object_id)
    return Point3.from_array(obj.pose.translation, WORLD)
