"""Motion planning: workspace reachability, platform relocation policy,
capsule-vs-sphere collision checks, and smooth joint-space trajectories.

Trajectories are piecewise smoothstep (cubic) segments with zero endpoint
velocities, sampled onto a fixed 20 ms waypoint grid. Collision handling
is check-and-repair: one lifted via-point over the offending obstacle,
then give up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CollisionUnavoidable, DegenerateGeometry, FrameError
from .kinematics import IKOptions, KinematicChain, Pose, compute_ik, joint_origins
from .simworld import Obstacle, PlatformPose
from .spatial import ARM_BASE, Point3

WAYPOINT_DT = 0.02
DURATION_SCALE = 1.5
DEFAULT_LINK_RADIUS = 0.03
STANDOFF_RATIO = 0.6
REACH_INNER_RATIO = 0.1
REACH_OUTER_RATIO = 0.95
VIA_CLEARANCE = 0.15


@dataclass(frozen=True)
class Trajectory:
    """Joint-space plan: smoothstep segments plus the sampled waypoint grid."""

    times: np.ndarray  # (k,) strictly increasing from 0
    waypoints: np.ndarray  # (k, n)
    segments: tuple[tuple[float, float, np.ndarray, np.ndarray], ...]  # (t0, t1, q0, q1)
    total_duration: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).copy()
        w = np.asarray(self.waypoints, dtype=float).copy()
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "waypoints", w)

    def sample(self, t: float) -> np.ndarray:
        """Configuration at time t (clamped to the ends)."""
        if t <= 0.0:
            return self.waypoints[0].copy()
        if t >= self.total_duration:
            return self.waypoints[-1].copy()
        for t0, t1, q0, q1 in self.segments:
            if t <= t1:
                tau = (t - t0) / (t1 - t0)
                s = tau * tau * (3.0 - 2.0 * tau)
                return q0 + (q1 - q0) * s
        return self.waypoints[-1].copy()

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1].copy()


def is_reachable(
    chain: KinematicChain,
    p_arm: Point3,
    current_theta,
    ik_opts: IKOptions | None = None,
    inner_ratio: float = REACH_INNER_RATIO,
    outer_ratio: float = REACH_OUTER_RATIO,
) -> bool:
    """Conservative sphere-band test plus an IK confirmation.

    The band catches gross misses cheaply; the position-mode IK run from
    the current configuration catches joint-limit holes inside the band.
    """
    if p_arm.frame != ARM_BASE:
        raise FrameError(f"reachability needs an arm-base point, got {p_arm.frame!r}")
    r = p_arm.norm()
    reach = chain.max_reach
    if r < inner_ratio * reach or r > outer_ratio * reach:
        return False
    opts = ik_opts or IKOptions(mode="position")
    if opts.mode != "position":
        opts = IKOptions(**{**opts.__dict__, "mode": "position", "approach_axis": None})
    try:
        compute_ik(chain, Pose(p_arm, np.eye(3)), np.asarray(current_theta, dtype=float), opts)
    except Exception:
        return False
    return True


def plan_platform_move(
    current: PlatformPose,
    target_world: Point3,
    chain: KinematicChain,
    standoff_ratio: float = STANDOFF_RATIO,
    mount_height: float = 0.0,
    outer_ratio: float = REACH_OUTER_RATIO,
) -> PlatformPose:
    """Goal pose on the ray from the target through the current base
    position: standoff_ratio * max_reach short of the target's ground
    projection, heading facing the target.

    For targets so high that the nominal standoff would leave them outside
    the workspace sphere, the standoff shrinks until the target fits.
    """
    gx, gy = target_world.x, target_world.y
    dx, dy = current.x - gx, current.y - gy
    ground_dist = math.hypot(dx, dy)
    if ground_dist < 1e-9:
        raise DegenerateGeometry("target is directly above the platform position")
    reach = chain.max_reach
    standoff = standoff_ratio * reach
    h = target_world.z - mount_height
    budget = (outer_ratio * reach) ** 2 - h * h
    if budget > 0 and standoff * standoff > budget:
        standoff = 0.99 * math.sqrt(budget)
    ux, uy = dx / ground_dist, dy / ground_dist
    goal_x = gx + standoff * ux
    goal_y = gy + standoff * uy
    heading = math.atan2(gy - goal_y, gx - goal_x)
    return PlatformPose(goal_x, goal_y, heading)


def _segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return float(np.linalg.norm(p - a))
    s = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


def check_collision(
    chain: KinematicChain,
    theta,
    obstacles: tuple[Obstacle, ...] | list[Obstacle],
    link_radius: float = DEFAULT_LINK_RADIUS,
) -> bool:
    """True when any link capsule (consecutive joint origins, given
    radius) intersects any obstacle sphere. Obstacles must already be
    expressed in the arm-base frame."""
    if not obstacles:
        return False
    pts = joint_origins(chain, theta)
    for obs in obstacles:
        if obs.center.frame != ARM_BASE:
            raise FrameError(f"obstacle in frame {obs.center.frame!r}, expected {ARM_BASE!r}")
        c = obs.center.xyz
        clearance = link_radius + obs.radius
        for i in range(len(pts) - 1):
            if _segment_point_distance(pts[i], pts[i + 1], c) < clearance:
                return True
    return False


def _single_segment(theta_now: np.ndarray, theta_goal: np.ndarray, v_max: np.ndarray, t_start: float):
    delta = np.abs(theta_goal - theta_now)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_min = np.where(delta > 0, delta / v_max, 0.0)
    duration = DURATION_SCALE * float(t_min.max())
    return (t_start, t_start + duration, theta_now.copy(), theta_goal.copy())


def _sample_grid(segments, dt: float):
    total = segments[-1][1]
    times = [0.0]
    t = dt
    while t < total - 1e-12:
        times.append(round(t, 10))
        t += dt
    times.append(total)

    def sample(tq):
        if tq <= 0:
            return segments[0][2]
        if tq >= total:
            return segments[-1][3]
        for t0, t1, q0, q1 in segments:
            if tq <= t1:
                if t1 == t0:
                    return q1
                tau = (tq - t0) / (t1 - t0)
                s = tau * tau * (3.0 - 2.0 * tau)
                return q0 + (q1 - q0) * s
        return segments[-1][3]

    waypoints = np.array([sample(tq) for tq in times])
    return np.array(times), waypoints


def _build_trajectory(segments) -> Trajectory:
    segments = [s for s in segments if s[1] > s[0]] or [segments[0]]
    total = segments[-1][1]
    if total == 0.0:
        q = segments[0][2]
        return Trajectory(np.array([0.0]), q[None, :], tuple(segments), 0.0)
    times, waypoints = _sample_grid(segments, WAYPOINT_DT)
    return Trajectory(times, waypoints, tuple(segments), total)


def validate_trajectory(traj: Trajectory, chain: KinematicChain, v_max) -> None:
    """Raise ValueError when a plan violates its own invariants."""
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (chain.n,))
    t = traj.times
    if t[0] != 0.0:
        raise ValueError("trajectory must start at t=0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("waypoint times must be strictly increasing")
    for q in traj.waypoints:
        if not chain.within_limits(q, tol=1e-9):
            raise ValueError("waypoint outside joint limits")
    dq = np.abs(np.diff(traj.waypoints, axis=0))
    dt = np.diff(t)[:, None]
    if np.any(dq > v_max * dt * (1.0 + 1e-9) + 1e-12):
        raise ValueError("waypoint step exceeds velocity limit")
    if abs(traj.total_duration - t[-1]) > 1e-9:
        raise ValueError("total_duration does not match the last waypoint time")


def motion_plan(
    chain: KinematicChain,
    theta_now,
    theta_goal,
    v_max,
    obstacles: tuple[Obstacle, ...] | list[Obstacle] = (),
    link_radius: float = DEFAULT_LINK_RADIUS,
    ik_opts: IKOptions | None = None,
) -> Trajectory:
    """Cubic joint-space plan from theta_now to theta_goal under per-joint
    velocity caps, duration 1.5x the minimum-time bound.

    If the straight plan collides, one via-point is inserted lifting the
    tool above the first offending obstacle; if the repaired plan still
    collides the plan is abandoned.
    """
    theta_now = chain.clamp(theta_now)
    theta_goal = chain.clamp(theta_goal)
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (chain.n,)).copy()
    if np.any(v_max <= 0):
        raise ValueError("velocity limits must be positive")

    direct = _build_trajectory([_single_segment(theta_now, theta_goal, v_max, 0.0)])
    bad = _first_collision(chain, direct, obstacles, link_radius)
    if bad is None:
        validate_trajectory(direct, chain, v_max)
        return direct

    theta_hit, obstacle = bad
    via_target = Point3(
        obstacle.center.x,
        obstacle.center.y,
        obstacle.center.z + obstacle.radius + VIA_CLEARANCE,
        ARM_BASE,
    )
    opts = ik_opts or IKOptions(mode="position")
    if opts.mode != "position":
        opts = IKOptions(**{**opts.__dict__, "mode": "position", "approach_axis": None})
    try:
        theta_via = compute_ik(chain, Pose(via_target, np.eye(3)), theta_hit, opts)
    except Exception as exc:
        raise CollisionUnavoidable(f"no via-point configuration above the obstacle: {exc}") from exc

    seg1 = _single_segment(theta_now, theta_via, v_max, 0.0)
    seg2 = _single_segment(theta_via, theta_goal, v_max, seg1[1])
    repaired = _build_trajectory([seg1, seg2])
    if _first_collision(chain, repaired, obstacles, link_radius) is not None:
        raise CollisionUnavoidable("plan still collides after via-point repair")
    validate_trajectory(repaired, chain, v_max)
    return repaired


def _first_collision(chain, traj: Trajectory, obstacles, link_radius):
    if not obstacles:
        return None
    for q in traj.waypoints:
        for obs in obstacles:
            if check_collision(chain, q, (obs,), link_radius):
                return q, obs
    return None
