"""Six-axis arm model: DH parameter table, forward kinematics, geometric
Jacobian, and a damped-least-squares inverse kinematics solver.

Link transforms use the standard (distal) DH convention

    T_i = Rz(theta_i + offset_i) Tz(d_i) Tx(a_i) Rx(alpha_i)

and the tool-center-point pose is the ordered product of all link
transforms followed by the fixed tool transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ChainError, NoConvergence, Unreachable
from .spatial import ARM_BASE, END_EFFECTOR, Point3, RigidTransform, rotation_to_vector


@dataclass(frozen=True)
class DHLink:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0
    joint_min: float = -math.pi
    joint_max: float = math.pi

    def __post_init__(self):
        if not (self.joint_min < self.joint_max):
            raise ValueError("joint_min must be strictly below joint_max")
        if not (math.isfinite(self.a) and math.isfinite(self.d)):
            raise ValueError("link dimensions must be finite")

    def transform(self, theta: float) -> np.ndarray:
        th = theta + self.theta_offset
        ct, st = math.cos(th), math.sin(th)
        ca, sa = math.cos(self.alpha), math.sin(self.alpha)
        return np.array(
            [
                [ct, -st * ca, st * sa, self.a * ct],
                [st, ct * ca, -ct * sa, self.a * st],
                [0.0, sa, ca, self.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Pose:
    """End-effector position and orientation in the arm-base frame."""

    position: Point3
    orientation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.orientation, dtype=float).reshape(3, 3).copy()
        r.setflags(write=False)
        object.__setattr__(self, "orientation", r)

    def as_transform(self) -> RigidTransform:
        return RigidTransform(self.orientation, self.position.xyz, END_EFFECTOR, self.position.frame)


@dataclass(frozen=True)
class KinematicChain:
    links: tuple[DHLink, ...]
    tool_transform: RigidTransform

    def __post_init__(self):
        if len(self.links) < 1:
            raise ValueError("chain needs at least one link")
        object.__setattr__(self, "links", tuple(self.links))

    @property
    def n(self) -> int:
        return len(self.links)

    @property
    def max_reach(self) -> float:
        reach = sum(abs(l.a) + abs(l.d) for l in self.links)
        return reach + float(np.linalg.norm(self.tool_transform.translation))

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([l.joint_min for l in self.links])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([l.joint_max for l in self.links])

    def mid_range(self) -> np.ndarray:
        return 0.5 * (self.lower_limits + self.upper_limits)

    def within_limits(self, theta: np.ndarray, tol: float = 1e-12) -> bool:
        theta = self._check(theta)
        return bool(
            np.all(theta >= self.lower_limits - tol) and np.all(theta <= self.upper_limits + tol)
        )

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        theta = self._check(theta)
        return np.clip(theta, self.lower_limits, self.upper_limits)

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.n:
            raise ChainError(f"expected {self.n} joint angles, got {theta.shape[0]}")
        return theta

    @staticmethod
    def from_table(rows: list[dict], tool_offset: float = 0.0) -> "KinematicChain":
        links = tuple(
            DHLink(
                a=float(r["a"]),
                alpha=float(r["alpha"]),
                d=float(r["d"]),
                theta_offset=float(r.get("theta_offset", 0.0)),
                joint_min=float(r["min"]),
                joint_max=float(r["max"]),
            )
            for r in rows
        )
        tool = RigidTransform(np.eye(3), [0.0, 0.0, tool_offset], "tool", "flange")
        return KinematicChain(links, tool)


# Placeholder geometry for the default six-joint arm: base yaw, shoulder
# pitch, elbow pitch, forearm roll, wrist pitch, tool roll. Dimensions are
# config stand-ins, not measurements of any particular arm. Pitch limits
# are asymmetric so the mid-range configuration has a bent (non-singular)
# elbow and wrist.
DEFAULT_DH_TABLE = [
    {"a": 0.0, "alpha": math.pi / 2, "d": 0.10, "min": -3.05, "max": 3.05},
    {"a": 0.30, "alpha": 0.0, "d": 0.0, "min": -2.40, "max": 2.00},
    {"a": 0.08, "alpha": math.pi / 2, "d": 0.0, "min": -2.00, "max": 2.90},
    {"a": 0.0, "alpha": -math.pi / 2, "d": 0.25, "min": -3.35, "max": 3.35},
    {"a": 0.0, "alpha": math.pi / 2, "d": 0.0, "min": -2.60, "max": 2.00},
    {"a": 0.0, "alpha": 0.0, "d": 0.06, "min": -3.35, "max": 3.35},
]
DEFAULT_TOOL_OFFSET = 0.10

# Watch pose: arm drawn up and back, camera looking forward-down over the
# workspace in front of the platform.
DEFAULT_HOME = (0.0, 1.1, 1.9, 0.0, -2.1, 0.0)


def default_chain() -> KinematicChain:
    return KinematicChain.from_table(DEFAULT_DH_TABLE, DEFAULT_TOOL_OFFSET)


def _frames(chain: KinematicChain, theta: np.ndarray) -> np.ndarray:
    """Cumulative 4x4 transforms: base, after each link, then the TCP."""
    n = chain.n
    out = np.empty((n + 2, 4, 4))
    out[0] = np.eye(4)
    t = out[0]
    for i, (link, th) in enumerate(zip(chain.links, theta)):
        t = t @ link.transform(th)
        out[i + 1] = t
    tool = getattr(chain, "_tool_matrix", None)
    if tool is None:
        tool = chain.tool_transform.as_matrix()
        object.__setattr__(chain, "_tool_matrix", tool)
    out[n + 1] = t @ tool
    return out


def forward_kinematics(chain: KinematicChain, theta) -> Pose:
    theta = chain._check(theta)
    tcp = _frames(chain, theta)[-1]
    return Pose(Point3.from_array(tcp[:3, 3], ARM_BASE), tcp[:3, :3])


def joint_origins(chain: KinematicChain, theta) -> np.ndarray:
    """Origins of base, every joint frame, and the TCP; rows of shape (n+2, 3)."""
    theta = chain._check(theta)
    return _frames(chain, theta)[:, :3, 3].copy()


def jacobian(chain: KinematicChain, theta) -> np.ndarray:
    """Geometric Jacobian of the TCP: rows 0-2 linear (m/rad), rows 3-5 angular."""
    theta = chain._check(theta)
    return _jacobian_of(_frames(chain, theta), chain.n)


@dataclass(frozen=True)
class IKOptions:
    pos_tol: float = 1e-3
    rot_tol: float = 1e-2
    max_iters: int = 200
    damping: float = 0.05
    step_cap: float = 0.2
    restarts: int = 5
    seed: int = 0
    mode: str = "pose"  # "pose" or "position"
    approach_axis: tuple[float, float, float] | None = None
    orientation_weight: float = 0.3
    # Position mode: also require the tool axis within this angle of the
    # approach axis (None = position gate only). Keeps the eye-in-hand
    # camera pointed at the target at every planned endpoint.
    axis_tol: float | None = 0.1


def _pose_error(pose: Pose, target: Pose) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target.position.xyz - pose.position.xyz
    e[3:] = rotation_to_vector(target.orientation @ pose.orientation.T)
    return e


def _axis_error_mat(orientation: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Rotation vector that tilts the current tool z onto the desired axis.

    The vector is perpendicular to the tool axis, so roll about the tool
    stays a free degree of freedom.
    """
    z = orientation[:, 2]
    c = np.cross(z, axis)
    s = float(np.linalg.norm(c))
    d = float(np.dot(z, axis))
    if s < 1e-12:
        if d > 0:
            return np.zeros(3)
        # Anti-parallel: rotate pi about any direction perpendicular to z.
        perp = np.cross(z, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(z, [0.0, 1.0, 0.0])
        return perp / np.linalg.norm(perp) * math.pi
    return c / s * math.atan2(s, d)


def _axis_error(pose: Pose, axis: np.ndarray) -> np.ndarray:
    return _axis_error_mat(pose.orientation, axis)


def _jacobian_of(frames: np.ndarray, n: int) -> np.ndarray:
    """Geometric Jacobian assembled from precomputed cumulative frames."""
    p_tcp = frames[-1, :3, 3]
    z = frames[:n, :3, 2]
    d = p_tcp - frames[:n, :3, 3]
    cols = np.empty((6, n))
    cols[0] = z[:, 1] * d[:, 2] - z[:, 2] * d[:, 1]
    cols[1] = z[:, 2] * d[:, 0] - z[:, 0] * d[:, 2]
    cols[2] = z[:, 0] * d[:, 1] - z[:, 1] * d[:, 0]
    cols[3:] = z.T
    return cols


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _branch_flips(theta: np.ndarray) -> list[np.ndarray]:
    """Alternate solution-branch guesses for a stuck six-joint iterate.

    Wrist and shoulder flips of an articulated arm reach roughly the same
    pose through the mirrored configuration family. They are only reseeds:
    each one is clamped and re-descended numerically.
    """
    if theta.shape[0] < 6:
        return []
    wrist = theta.copy()
    wrist[3] = _wrap_angle(wrist[3] + math.pi)
    wrist[4] = -wrist[4]
    wrist[5] = _wrap_angle(wrist[5] + math.pi)
    shoulder = theta.copy()
    shoulder[0] = _wrap_angle(shoulder[0] + math.pi)
    shoulder[1] = _wrap_angle(math.pi - shoulder[1])
    shoulder[2] = _wrap_angle(-shoulder[2] - math.pi)
    both = shoulder.copy()
    both[3] = _wrap_angle(both[3] + math.pi)
    both[4] = -both[4]
    both[5] = _wrap_angle(both[5] + math.pi)
    return [wrist, shoulder, both]


def compute_ik(chain: KinematicChain, target: Pose, seed: np.ndarray, opts: IKOptions = IKOptions()) -> np.ndarray:
    """Solve for joint angles placing the TCP at `target`.

    Levenberg-Marquardt on the 6D pose error twist, with opts.damping as
    the damping floor; every iterate is clamped to the joint limits. In
    "position" mode the orientation rows only pull the tool z axis toward
    opts.approach_axis (weighted), and convergence is judged on position
    alone.
    """
    seed = chain._check(seed)
    p = np.asarray(target.position.xyz, dtype=float)
    if np.linalg.norm(p) > 0.99 * chain.max_reach:
        raise Unreachable(f"target at {np.linalg.norm(p):.3f} m exceeds 0.99 * max_reach")

    position_only = opts.mode == "position"
    if position_only:
        if opts.approach_axis is None:
            axis = p / (np.linalg.norm(p) + 1e-300)
        else:
            axis = np.asarray(opts.approach_axis, dtype=float)
            axis = axis / np.linalg.norm(axis)
    weights = np.ones(6)
    if position_only:
        weights[3:] = opts.orientation_weight
    lo, hi = chain.lower_limits, chain.upper_limits
    eye6 = np.eye(6)

    def error_of(frames: list[np.ndarray]) -> np.ndarray:
        tcp = frames[-1]
        e = np.empty(6)
        e[:3] = p - tcp[:3, 3]
        if position_only:
            e[3:] = _axis_error_mat(tcp[:3, :3], axis)
        else:
            e[3:] = rotation_to_vector(target.orientation @ tcp[:3, :3].T)
        return e

    def converged(e: np.ndarray) -> bool:
        if np.linalg.norm(e[:3]) > opts.pos_tol:
            return False
        if position_only:
            if opts.axis_tol is None:
                return True
            return np.linalg.norm(e[3:]) <= opts.axis_tol
        return np.linalg.norm(e[3:]) <= opts.rot_tol

    def solve_from(theta0: np.ndarray) -> tuple[np.ndarray, bool]:
        # Rejected steps raise the damping; accepted ones relax it back
        # toward the floor. Joints pinned at a limit and still pushing
        # outward are dropped from the solve so the rest compensate.
        theta = chain.clamp(theta0)
        frames = _frames(chain, theta)
        e = error_of(frames)
        cost = float(np.linalg.norm(e * weights))
        lam = opts.damping
        for _ in range(opts.max_iters):
            if converged(e):
                return theta, True
            j = _jacobian_of(frames, chain.n) * weights[:, None]
            ew = e * weights
            free = np.ones(chain.n, dtype=bool)
            for _ in range(3):
                jf = j * free
                step = jf.T @ np.linalg.solve(jf @ jf.T + lam * lam * eye6, ew)
                step = np.clip(step, -opts.step_cap, opts.step_cap) * free
                blocked = ((theta >= hi) & (step > 0)) | ((theta <= lo) & (step < 0))
                if not blocked.any():
                    break
                free &= ~blocked
            cand = chain.clamp(theta + step)
            cand_frames = _frames(chain, cand)
            e_cand = error_of(cand_frames)
            cost_cand = float(np.linalg.norm(e_cand * weights))
            if cost_cand < cost:
                theta, frames, e, cost = cand, cand_frames, e_cand, cost_cand
                lam = max(opts.damping, lam * 0.5)
            else:
                lam *= 4.0
                if lam > 1e3:
                    return theta, False
        return theta, converged(e)

    def attempt(theta0: np.ndarray) -> np.ndarray | None:
        # On failure, re-descend from branch flips of the stuck iterate:
        # wrist and shoulder mirrors reach the same pose through the other
        # solution family.
        sol, ok = solve_from(theta0)
        if ok:
            return sol
        for flip in _branch_flips(sol):
            sol2, ok2 = solve_from(flip)
            if ok2:
                return sol2
        return None

    result = attempt(seed)
    if result is not None:
        return result

    # Seeded random restarts; keep the converged candidate closest to the
    # seed configuration to avoid elbow flips mid-approach.
    rng = np.random.default_rng(opts.seed)
    candidates = []
    for _ in range(opts.restarts):
        sol = attempt(rng.uniform(lo, hi))
        if sol is not None:
            candidates.append(sol)
    if not candidates:
        raise NoConvergence(f"IK did not converge after {opts.restarts} restarts")
    dists = [float(np.linalg.norm(c - seed)) for c in candidates]
    return candidates[int(np.argmin(dists))]
