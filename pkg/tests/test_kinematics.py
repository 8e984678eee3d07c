import math
import time

import numpy as np
import pytest

from graspsim.errors import ChainError, Unreachable
from graspsim.kinematics import (
    DEFAULT_DH_TABLE,
    DEFAULT_TOOL_OFFSET,
    DHLink,
    IKOptions,
    KinematicChain,
    Pose,
    compute_ik,
    default_chain,
    forward_kinematics,
    jacobian,
)
from graspsim.spatial import ARM_BASE, Point3, RigidTransform, rotation_to_vector


def oracle_fk(rows, tool_offset, theta):
    """Independent brute-force product of homogeneous DH matrices."""
    m = np.eye(4)
    for row, th in zip(rows, theta):
        t = th + row.get("theta_offset", 0.0)
        a, al, d = row["a"], row["alpha"], row["d"]
        ct, st = math.cos(t), math.sin(t)
        ca, sa = math.cos(al), math.sin(al)
        link = np.array(
            [
                [ct, -st * ca, st * sa, a * ct],
                [st, ct * ca, -ct * sa, a * st],
                [0, sa, ca, d],
                [0, 0, 0, 1],
            ]
        )
        m = m @ link
    tool = np.eye(4)
    tool[2, 3] = tool_offset
    return m @ tool


def planar_two_link():
    rows = [
        {"a": 1.0, "alpha": 0.0, "d": 0.0, "min": -math.pi, "max": math.pi},
        {"a": 1.0, "alpha": 0.0, "d": 0.0, "min": -math.pi, "max": math.pi},
    ]
    return KinematicChain.from_table(rows, 0.0)


def test_fk_two_link_collinear():
    chain = planar_two_link()
    pose = forward_kinematics(chain, [0.0, 0.0])
    assert np.allclose(pose.position.xyz, [2.0, 0.0, 0.0], atol=1e-12)


def test_fk_two_link_quarter_turn():
    chain = planar_two_link()
    pose = forward_kinematics(chain, [math.pi / 2, 0.0])
    assert np.allclose(pose.position.xyz, [0.0, 2.0, 0.0], atol=1e-9)


def test_fk_default_chain_matches_oracle_at_zero():
    chain = default_chain()
    pose = forward_kinematics(chain, np.zeros(6))
    expected = oracle_fk(DEFAULT_DH_TABLE, DEFAULT_TOOL_OFFSET, np.zeros(6))
    assert np.allclose(pose.position.xyz, expected[:3, 3], atol=1e-12)
    assert np.allclose(pose.orientation, expected[:3, :3], atol=1e-12)


def test_fk_oracle_equivalence_seeded():
    chain = default_chain()
    rng = np.random.default_rng(42)
    for _ in range(100):
        theta = rng.uniform(chain.lower_limits, chain.upper_limits)
        pose = forward_kinematics(chain, theta)
        expected = oracle_fk(DEFAULT_DH_TABLE, DEFAULT_TOOL_OFFSET, theta)
        assert np.linalg.norm(pose.position.xyz - expected[:3, 3]) < 1e-9
        assert np.linalg.norm(
            rotation_to_vector(pose.orientation @ expected[:3, :3].T)
        ) < 1e-9


def test_fk_determinism():
    chain = default_chain()
    theta = np.array([0.3, -0.4, 0.9, 0.2, 0.8, -1.0])
    a = forward_kinematics(chain, theta)
    b = forward_kinematics(chain, theta)
    assert np.array_equal(a.position.xyz, b.position.xyz)
    assert np.array_equal(a.orientation, b.orientation)


def test_fk_dimension_mismatch():
    with pytest.raises(ChainError):
        forward_kinematics(default_chain(), [0.0, 0.0])


def test_jacobian_single_revolute_joint():
    rows = [{"a": 1.0, "alpha": 0.0, "d": 0.0, "min": -math.pi, "max": math.pi}]
    chain = KinematicChain.from_table(rows, 0.0)
    j = jacobian(chain, [0.0])
    assert np.allclose(j[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)
    assert np.allclose(j[3:, 0], [0.0, 0.0, 1.0], atol=1e-12)


def finite_difference_jacobian(chain, theta, h=1e-6):
    n = chain.n
    j = np.empty((6, n))
    for i in range(n):
        dp = np.zeros(n)
        dp[i] = h
        hi = forward_kinematics(chain, theta + dp)
        lo = forward_kinematics(chain, theta - dp)
        j[:3, i] = (hi.position.xyz - lo.position.xyz) / (2 * h)
        j[3:, i] = rotation_to_vector(hi.orientation @ lo.orientation.T) / (2 * h)
    return j


def test_jacobian_matches_finite_differences():
    chain = default_chain()
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(100):
        theta = rng.uniform(chain.lower_limits * 0.9, chain.upper_limits * 0.9)
        j = jacobian(chain, theta)
        jfd = finite_difference_jacobian(chain, theta)
        worst = max(worst, float(np.max(np.abs(j - jfd))))
    assert worst < 1e-5


def test_jacobian_singular_at_stretched_pose():
    chain = default_chain()
    # Zero wrist pitch aligns the forearm and tool roll axes.
    j = jacobian(chain, np.zeros(6))
    s = np.linalg.svd(j, compute_uv=False)
    assert s[-1] < 1e-8


def test_ik_fixed_point_returns_seed():
    chain = default_chain()
    theta_star = np.array([0.4, -0.7, 1.1, 0.3, 0.9, -0.2])
    target = forward_kinematics(chain, theta_star)
    out = compute_ik(chain, target, theta_star)
    assert np.array_equal(out, theta_star)


def test_ik_round_trip_seeded():
    chain = default_chain()
    rng = np.random.default_rng(2024)
    seed = chain.mid_range()
    opts = IKOptions()
    converged = 0
    trials = 100
    for _ in range(trials):
        theta_star = rng.uniform(chain.lower_limits * 0.8, chain.upper_limits * 0.8)
        target = forward_kinematics(chain, theta_star)
        try:
            sol = compute_ik(chain, target, seed, opts)
        except Exception:
            continue
        pose = forward_kinematics(chain, sol)
        err = np.linalg.norm(pose.position.xyz - target.position.xyz)
        assert err <= opts.pos_tol
        assert chain.within_limits(sol)
        converged += 1
    assert converged >= 0.99 * trials


def test_ik_unreachable():
    chain = default_chain()
    r = 1.5 * chain.max_reach
    target = Pose(Point3(r, 0.0, 0.0, ARM_BASE), np.eye(3))
    with pytest.raises(Unreachable):
        compute_ik(chain, target, chain.mid_range())


def test_ik_respects_joint_limits():
    chain = default_chain()
    rng = np.random.default_rng(9)
    opts = IKOptions()
    for _ in range(20):
        theta_star = rng.uniform(chain.lower_limits * 0.8, chain.upper_limits * 0.8)
        target = forward_kinematics(chain, theta_star)
        sol = compute_ik(chain, target, chain.mid_range(), opts)
        assert chain.within_limits(sol)


def test_ik_position_mode_aligns_approach_axis():
    chain = default_chain()
    target_pos = Point3(0.45, 0.10, 0.25, ARM_BASE)
    axis = target_pos.xyz - np.array([0.0, 0.0, 0.10])
    axis = axis / np.linalg.norm(axis)
    opts = IKOptions(mode="position", approach_axis=tuple(axis), seed=3)
    sol = compute_ik(chain, Pose(target_pos, np.eye(3)), chain.mid_range(), opts)
    pose = forward_kinematics(chain, sol)
    assert np.linalg.norm(pose.position.xyz - target_pos.xyz) <= opts.pos_tol
    # Soft orientation objective should still get the tool z close to the axis.
    cos_angle = float(np.dot(pose.orientation[:, 2], axis))
    assert cos_angle > 0.95


def test_ik_median_solve_time():
    chain = default_chain()
    rng = np.random.default_rng(77)
    seed = chain.mid_range()
    times = []
    for _ in range(50):
        theta_star = rng.uniform(chain.lower_limits * 0.8, chain.upper_limits * 0.8)
        target = forward_kinematics(chain, theta_star)
        t0 = time.perf_counter()
        try:
            compute_ik(chain, target, seed)
        except Exception:
            pass
        times.append(time.perf_counter() - t0)
    assert sorted(times)[len(times) // 2] < 0.005


def test_dh_link_validation():
    with pytest.raises(ValueError):
        DHLink(a=0.0, alpha=0.0, d=0.0, joint_min=1.0, joint_max=-1.0)


def test_max_reach():
    chain = default_chain()
    expected = 0.10 + 0.30 + 0.08 + 0.25 + 0.06 + 0.10
    assert abs(chain.max_reach - expected) < 1e-12
