"""Closed-loop execution: drive the arm along its trajectory while
re-tracking the target and splicing in replanned trajectories, then
close the gripper under PID force regulation.

The gripper plant is the simulator's only contact model: a first-order
velocity servo (the command is a closing-speed setpoint) squeezing a
stiff object, force = stiffness * penetration + viscous * speed. The
same plant is the oracle for the PID acceptance tests.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CollisionUnavoidable, NoConvergence, TargetLost, Unreachable
from .kinematics import IKOptions, KinematicChain, Pose, compute_ik, forward_kinematics
from .motion import Trajectory, motion_plan
from .perception import FrameTruth, SegmenterBackend, TrackerState, track_and_pos
from .render import render_depth
from .simworld import NoiseModel, Scene, STREAM_TRACKER, step_world, stream_rng
from .spatial import ARM_BASE, Point3


# --- PID ------------------------------------------------------------------


@dataclass(frozen=True)
class PIDController:
    kp: float
    ki: float
    kd: float
    output_min: float
    output_max: float
    integral_cap: float
    integral: float = 0.0
    prev_error: float = 0.0


def pid_step(c: PIDController, setpoint: float, measurement: float, dt: float) -> tuple[PIDController, float]:
    """One controller update; returns the new controller value and the
    clamped command. The integral term is clamped to +-integral_cap."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = setpoint - measurement
    integral = min(max(c.integral + e * dt, -c.integral_cap), c.integral_cap)
    derivative = (e - c.prev_error) / dt
    raw = c.kp * e + c.ki * integral + c.kd * derivative
    command = min(max(raw, c.output_min), c.output_max)
    return replace(c, integral=integral, prev_error=e), command


# --- gripper plant ----------------------------------------------------------


@dataclass(frozen=True)
class GripperState:
    opening: float
    force_reading: float = 0.0
    closing_speed: float = 0.0
    max_opening: float = 0.10

    def __post_init__(self):
        if not (0.0 <= self.opening <= self.max_opening):
            raise ValueError("opening outside [0, max_opening]")
        if self.force_reading < 0:
            raise ValueError("force reading cannot be negative")


@dataclass(frozen=True)
class GripperPlant:
    """Fixture contact model shared by the simulator and the PID tests."""

    stiffness: float = 500.0  # N/m of jaw penetration
    viscous: float = 2.0  # N per m/s of closing speed while in contact
    servo_tau: float = 0.1  # closing-speed servo time constant, s
    substeps: int = 10

    def step(self, g: GripperState, command: float, width: float | None, dt: float) -> GripperState:
        """Advance the jaw servo by dt under `command` (m/s closing
        setpoint). `width` is the captured object's extent across the
        jaws, or None when nothing is between them."""
        v = g.closing_speed
        opening = g.opening
        h = dt / self.substeps
        for _ in range(self.substeps):
            v += (command - v) * h / self.servo_tau
            opening = min(max(opening - v * h, 0.0), g.max_opening)
        force = 0.0
        if width is not None:
            pen = width - opening
            if pen > 0.0:
                force = max(self.stiffness * pen + self.viscous * v, 0.0)
        return GripperState(opening, force, v, g.max_opening)


DEFAULT_PID = PIDController(kp=2.0, ki=4.0, kd=0.05, output_min=-0.05, output_max=0.05, integral_cap=0.01)


# --- shared control parameters ----------------------------------------------


@dataclass(frozen=True)
class ControlParams:
    dt: float = 0.02
    v_max: float = 1.5  # rad/s, per joint
    replan_threshold: float = 0.005
    arrival_tol: float = 0.002
    pregrasp_standoff: float = 0.05
    grasp_extra_advance: float = 0.015
    latency_ticks: int = 2
    approach_axis: tuple[float, float, float] | None = None  # None = outward, tilted down
    approach_tilt_deg: float | None = None  # None = adaptive with target distance
    cart_step: float = 0.10  # max Cartesian leg per intermediate goal, m
    link_radius: float = 0.03
    max_lost: int = 5
    centroid_noise_px: float = 0.0
    ik_seed: int = 0
    target_force: float = 5.0
    force_band: float = 0.2
    settle_time: float = 0.5
    grip_timeout: float = 5.0
    preclose_speed: float = 0.05
    contact_eps: float = 0.05  # N, first-contact detection
    grasp_radius: float = 0.02
    grasp_half_height: float = 0.03


@dataclass(frozen=True)
class GraspOutcome:
    status: str  # success | target_lost | ik_failure | collision_abort | grip_failure | aborted_by_user
    final_error: float | None
    timeline: tuple  # (t, phase, theta tuple, p_arm_est tuple or None)
    replans: int = 0
    relocated: bool = False
    ticks: int = 0


def approach_direction(p_arm: Point3, chain: KinematicChain, params: ControlParams) -> np.ndarray:
    """Unit approach axis for a target point, in the arm-base frame.

    Default: along the horizontal bearing to the target, tilted down by a
    fixed angle. A consistent slightly-downward approach keeps the whole
    reach inside the looking-down wrist family, so the eye-in-hand camera
    never flips away from the target mid-path.
    """
    if params.approach_axis is not None:
        a = np.asarray(params.approach_axis, dtype=float)
        return a / np.linalg.norm(a)
    bearing = np.array([p_arm.x, p_arm.y, 0.0])
    n = np.linalg.norm(bearing)
    if n < 1e-9:
        bearing = np.array([1.0, 0.0, 0.0])
    else:
        bearing = bearing / n
    if params.approach_tilt_deg is not None:
        tilt_deg = params.approach_tilt_deg
    else:
        # Steeper for close targets: the elbow cannot fold far enough to
        # come in shallow near the base, while far targets need a shallow
        # line to stay inside the workspace sphere.
        tilt_deg = min(max(25.0 + (0.60 - n) * 150.0, 25.0), 45.0)
    tilt = math.radians(tilt_deg)
    return np.array(
        [bearing[0] * math.cos(tilt), bearing[1] * math.cos(tilt), -math.sin(tilt)]
    )


def ik_to_point(
    chain: KinematicChain,
    point: np.ndarray,
    axis: np.ndarray,
    seed_theta: np.ndarray,
    params: ControlParams,
    restarts: int | None = None,
) -> np.ndarray:
    target = Pose(Point3.from_array(point, ARM_BASE), np.eye(3))
    opts = IKOptions(mode="position", approach_axis=tuple(axis), seed=params.ik_seed)
    if restarts is not None:
        opts = replace(opts, restarts=restarts)
    return compute_ik(chain, target, chain.clamp(seed_theta), opts)


def adjust_arm_motion(
    chain: KinematicChain,
    current,
    theta_new,
    params: ControlParams,
    obstacles=(),
) -> Trajectory:
    """Replacement trajectory from the arm's instantaneous configuration;
    the superseded plan is simply dropped by the caller."""
    return motion_plan(
        chain,
        chain.clamp(current),
        theta_new,
        np.full(chain.n, params.v_max),
        obstacles=obstacles,
        link_radius=params.link_radius,
    )


class ApproachExecutor:
    """Ticks the arm along its plan while re-tracking the target.

    The pre-grasp point is approached through Cartesian legs of at most
    cart_step meters, each with the tool axis pulled toward the target.
    Short legs keep the eye-in-hand camera pointed at the object the
    whole way (a long joint-space sweep would swing it out of view) and
    keep consecutive IK solutions on the same branch.

    Each tick: step the world, capture a frame, re-associate the target,
    and when the (latency-delayed) estimate has moved more than the
    replan threshold away from the point the current plan was built for,
    splice in a fresh plan from the instantaneous configuration.
    """

    def __init__(
        self,
        chain: KinematicChain,
        backend: SegmenterBackend,
        tracker: TrackerState,
        estimate: Point3,
        params: ControlParams,
        scene: Scene,
        obstacles_base=(),
        closed_loop: bool = True,
        goal_offset: float | None = None,
    ):
        self.chain = chain
        self.backend = backend
        self.tracker = tracker
        self.params = params
        self.obstacles = tuple(obstacles_base)
        self.closed_loop = closed_loop
        # Offset along the approach axis from the target estimate to the
        # TCP goal: negative stops short (pre-grasp standoff).
        self.goal_offset = -params.pregrasp_standoff if goal_offset is None else goal_offset
        self.replans = 0  # mid-flight tracking corrections
        self.alignments = 0  # sub-threshold terminal alignment splices
        self.t = 0.0
        self.estimate = estimate
        # Measurement taken at tick k is acted on at tick k + latency_ticks.
        lag = max(params.latency_ticks, 0)
        self._delayed = deque([estimate] * (lag + 1), maxlen=lag + 1)
        self.plan_target = estimate
        self.final_leg = False
        self._replan_failures = 0
        traj = self._plan(scene.arm_theta, estimate, initial=True)
        if traj is None:
            raise NoConvergence("no feasible configuration for the first approach leg")
        self.trajectory = traj

    def _goal_point(self, estimate: Point3) -> np.ndarray:
        axis = approach_direction(estimate, self.chain, self.params)
        return estimate.xyz + self.goal_offset * axis

    def _plan(self, theta_now, estimate: Point3, initial: bool = False) -> Trajectory | None:
        """Plan the next leg toward the (pre-)grasp point of `estimate`.

        Replans solve from the current configuration only: falling back to
        random IK restarts mid-flight would hop between solution families
        and swing the camera, so a failed replan returns None and the
        caller keeps flying the previous plan.
        """
        goal = self._goal_point(estimate)
        tool = forward_kinematics(self.chain, self.chain.clamp(theta_now)).position.xyz
        to_goal = goal - tool
        dist = float(np.linalg.norm(to_goal))
        if dist <= self.params.cart_step:
            leg_goal = goal
            final = True
        else:
            leg_goal = tool + to_goal * (self.params.cart_step / dist)
            final = False
        # Keep the tool (and camera) pointed at the target along the way.
        # Near or past the target the look-at ray collapses or reverses,
        # so fall back to the canonical approach axis there.
        approach = approach_direction(estimate, self.chain, self.params)
        look = estimate.xyz - leg_goal
        n = float(np.linalg.norm(look))
        if n >= 0.03 and float(look @ approach) > 0.0:
            axis = look / n
        else:
            axis = approach
        try:
            theta_goal = ik_to_point(
                self.chain, leg_goal, axis, theta_now, self.params, restarts=None if initial else 0
            )
            traj = adjust_arm_motion(self.chain, theta_now, theta_goal, self.params, self.obstacles)
        except (NoConvergence, Unreachable):
            if initial:
                raise
            return None
        self.final_leg = final
        return traj

    def step(self, scene: Scene) -> tuple[Scene, bool]:
        """One control tick. Returns the stepped scene and whether the
        goal has been reached. Raises TargetLost / NoConvergence /
        Unreachable / CollisionUnavoidable for the caller to map into an
        outcome status."""
        p = self.params
        self.t += p.dt
        commanded = self.trajectory.sample(self.t)
        scene = step_world(scene, p.dt, commanded)

        frame, labels = render_depth(scene)
        fk = forward_kinematics(self.chain, scene.arm_theta)
        rng = stream_rng(scene.rng_seed, scene.step_count, STREAM_TRACKER)
        self.tracker, measured = track_and_pos(
            self.tracker,
            frame,
            self.backend,
            scene.hand_eye,
            fk,
            FrameTruth(labels, scene.names()),
            max_lost=p.max_lost,
            centroid_noise_px=p.centroid_noise_px,
            rng=rng,
        )
        self._delayed.append(measured)
        effective = self._delayed[0]
        self.estimate = effective

        trajectory_done = self.t >= self.trajectory.total_duration
        if not self.closed_loop:
            if trajectory_done and not self.final_leg:
                self._adopt(self._plan(scene.arm_theta, self.plan_target), counter=None)
                return scene, False
            return scene, trajectory_done and self.final_leg

        deviation = float(np.linalg.norm(effective.xyz - self.plan_target.xyz))
        if deviation > p.replan_threshold:
            # Tracking correction: the target moved away from what the
            # current plan was built for.
            traj = self._plan(scene.arm_theta, effective)
            if traj is not None:
                self.plan_target = effective
            self._adopt(traj, counter="replans")
            return scene, False
        if trajectory_done and self.final_leg and deviation > p.arrival_tol:
            # Terminal alignment: below the in-motion threshold but not
            # close enough to hand over to the grasp phase.
            traj = self._plan(scene.arm_theta, effective)
            if traj is not None:
                self.plan_target = effective
            self._adopt(traj, counter="alignments")
            return scene, False
        if trajectory_done and not self.final_leg:
            # Next Cartesian leg; not a tracking correction.
            self._adopt(self._plan(scene.arm_theta, self.plan_target), counter=None)
            return scene, False
        return scene, trajectory_done and self.final_leg

    def _adopt(self, traj: Trajectory | None, counter: str | None) -> None:
        if traj is None:
            # Keep flying the previous plan; give up only after a long
            # streak of infeasible replans.
            self._replan_failures += 1
            if self._replan_failures > 50:
                raise NoConvergence("replanning failed for 50 consecutive ticks")
            return
        self._replan_failures = 0
        self.trajectory = traj
        self.t = 0.0
        if counter == "replans":
            self.replans += 1
        elif counter == "alignments":
            self.alignments += 1


class GripExecutor:
    """Closes the gripper on the tracked object under PID force control.

    Pre-closes at constant speed until first contact, then regulates the
    grip force. Success requires the force to sit inside the +-band for
    settle_time while the object's true centroid stays inside the grasp
    cylinder around the tool axis.
    """

    def __init__(self, chain: KinematicChain, target_id: int, params: ControlParams,
                 pid: PIDController = DEFAULT_PID, plant: GripperPlant = GripperPlant(),
                 gripper: GripperState | None = None):
        self.chain = chain
        self.target_id = target_id
        self.params = params
        self.pid = pid
        self.plant = plant
        self.gripper = gripper or GripperState(opening=0.10)
        self.t = 0.0
        self.in_band = 0.0
        self.contacted = False
        self.result: str | None = None

    def _capture_width(self, scene: Scene) -> float | None:
        """Object extent across the jaws when the centroid sits inside the
        grasp cylinder, else None."""
        obj = scene.object_by_id(self.target_id)
        centroid_world = Point3.from_array(obj.pose.translation, "world")
        centroid = scene.base_transform().inverse().apply(centroid_world)
        fk = forward_kinematics(self.chain, scene.arm_theta)
        axis = fk.orientation[:, 2]
        v = centroid.xyz - fk.position.xyz
        along = float(v @ axis)
        lateral = float(np.linalg.norm(v - along * axis))
        p = self.params
        if abs(along) <= p.grasp_half_height and lateral <= p.grasp_radius:
            return obj.grasp_width
        return None

    def step(self, scene: Scene) -> tuple[Scene, bool]:
        p = self.params
        self.t += p.dt
        scene = step_world(scene, p.dt, scene.arm_theta)
        width = self._capture_width(scene)

        if not self.contacted:
            command = p.preclose_speed
        else:
            self.pid, command = pid_step(self.pid, p.target_force, self.gripper.force_reading, p.dt)
        self.gripper = self.plant.step(self.gripper, command, width, p.dt)
        force = self.gripper.force_reading

        if not self.contacted:
            if force > p.contact_eps:
                self.contacted = True
                # Pinched between the jaws: the object stops drifting.
                obj = scene.object_by_id(self.target_id)
                if any(v != 0.0 for v in obj.drift_velocity):
                    objects = tuple(
                        replace(o, drift_velocity=(0.0, 0.0, 0.0)) if o.id == self.target_id else o
                        for o in scene.objects
                    )
                    scene = replace(scene, objects=objects)
            elif self.gripper.opening <= 1e-9:
                self.result = "grip_failure"
                return scene, True

        if self.contacted:
            if abs(force - p.target_force) <= p.force_band * p.target_force:
                self.in_band += p.dt
                if self.in_band >= p.settle_time:
                    self.result = "success" if width is not None else "grip_failure"
                    return scene, True
            else:
                self.in_band = 0.0

        if self.t >= p.grip_timeout:
            self.result = "grip_failure"
            return scene, True
        return scene, False


def ideal_estimate(scene: Scene, target_id: int) -> Point3 | None:
    """The arm-frame position a noise-free perception pass would report
    for the target in this scene; None when the target is not visible.
    Ground-truth comparator for closed-loop accuracy metrics."""
    from .perception import MockSegmenter, SegmentMask, avg_depth, compute_cam_coords, transform_coords

    clean = replace(scene, noise=NoiseModel(0.0, 0.0, 0.0, 0.0))
    frame, labels = render_depth(clean)
    bits = labels == target_id
    if not bits.any():
        return None
    mask = SegmentMask(bits, target_id, 1.0)
    fk = forward_kinematics(scene.chain, scene.arm_theta)
    try:
        p_cam = compute_cam_coords(mask, frame)
    except Exception:
        return None
    return transform_coords(p_cam, scene.hand_eye, fk)


def pregrasp_error(scene: Scene, chain: KinematicChain, target_id: int, params: ControlParams) -> float | None:
    """Distance between the tool and where a perfect tracker would have
    sent it (the noise-free pre-grasp point for the current scene)."""
    ideal = ideal_estimate(scene, target_id)
    if ideal is None:
        return None
    axis = approach_direction(ideal, chain, params)
    goal = ideal.xyz - params.pregrasp_standoff * axis
    tool = forward_kinematics(chain, scene.arm_theta).position.xyz
    return float(np.linalg.norm(tool - goal))


def execute_closed_loop(
    scene: Scene,
    backend: SegmenterBackend,
    tracker: TrackerState,
    estimate: Point3,
    params: ControlParams,
    obstacles_base=(),
    closed_loop: bool = True,
    max_ticks: int = 5000,
    with_grasp: bool = False,
    pid: PIDController = DEFAULT_PID,
    plant: GripperPlant = GripperPlant(),
) -> tuple[GraspOutcome, Scene]:
    """Run the tracking feedback loop to the pre-grasp pose (optionally
    followed by the grasp) and report the outcome."""
    chain = scene.chain
    timeline: list = []
    replans = 0
    ticks = 0

    def record(phase: str, est: Point3 | None):
        timeline.append(
            (
                round(scene.clock, 9),
                phase,
                tuple(float(x) for x in scene.arm_theta),
                tuple(float(x) for x in est.xyz) if est is not None else None,
            )
        )

    try:
        executor = ApproachExecutor(
            chain, backend, tracker, estimate, params, scene, obstacles_base, closed_loop=closed_loop
        )
    except (NoConvergence, Unreachable):
        return GraspOutcome("ik_failure", None, tuple(timeline)), scene
    except CollisionUnavoidable:
        return GraspOutcome("collision_abort", None, tuple(timeline)), scene

    status = "success"
    try:
        done = False
        while not done and ticks < max_ticks:
            scene, done = executor.step(scene)
            ticks += 1
            record("approaching", executor.estimate)
        replans = executor.replans
        if not done:
            status = "ik_failure"  # never converged onto the target
    except TargetLost:
        return GraspOutcome("target_lost", None, tuple(timeline), replans=executor.replans, ticks=ticks), scene
    except (NoConvergence, Unreachable):
        return GraspOutcome("ik_failure", None, tuple(timeline), replans=executor.replans, ticks=ticks), scene
    except CollisionUnavoidable:
        return GraspOutcome("collision_abort", None, tuple(timeline), replans=executor.replans, ticks=ticks), scene

    final_error = pregrasp_error(scene, chain, tracker.object_label, params)

    if status == "success" and with_grasp:
        advance = ApproachExecutor(
            chain,
            backend,
            executor.tracker,
            executor.estimate,
            params,
            scene,
            obstacles_base,
            closed_loop=closed_loop,
            goal_offset=params.grasp_extra_advance,
        )
        try:
            done = False
            while not done and ticks < max_ticks:
                scene, done = advance.step(scene)
                ticks += 1
                record("grasping", advance.estimate)
            replans += advance.replans
            grip = GripExecutor(chain, tracker.object_label, params, pid=pid, plant=plant)
            done = False
            while not done and ticks < max_ticks:
                scene, done = grip.step(scene)
                ticks += 1
                record("grasping", advance.estimate)
            status = grip.result or "grip_failure"
        except TargetLost:
            status = "target_lost"
        except (NoConvergence, Unreachable):
            status = "ik_failure"
        except CollisionUnavoidable:
            status = "collision_abort"

    return (
        GraspOutcome(status, final_error, tuple(timeline), replans=replans, ticks=ticks),
        scene,
    )
