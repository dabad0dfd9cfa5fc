import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from conftest import random_chain
from selfbody.kinematics import (DimensionError, KinematicChain, Link, Pose,
                                 forward_kinematics, hand_jacobian, inverse_kinematics)


def homogeneous(R=np.eye(3), p=np.zeros(3)):
    T = np.eye(4)
    T[:3, :3], T[:3, 3] = R, p
    return T


def fk_oracle(chain, theta):
    """Hand transform by explicit 4x4 products."""
    T = np.eye(4)
    for link, q in zip(chain.links, theta):
        T = T @ homogeneous(p=link.origin) @ homogeneous(R=link.rotation)
        T = T @ homogeneous(R=Rotation.from_rotvec(link.axis * q).as_matrix())
    return T @ homogeneous(p=chain.hand_offset)


def test_home_pose_is_exact():
    chain = KinematicChain([Link("a", [0, 0, 0], [0, 0, 1], -1, 1),
                            Link("b", [0, -250, 0], [0, 0, 1], -1, 1)],
                           hand_offset=[0, -200, 0])
    pose = forward_kinematics(chain, np.zeros(2))
    assert np.array_equal(pose.position, [0, -450, 0])
    assert np.array_equal(pose.orientation, [0, 0, 0, 1])


def test_quarter_turn():
    chain = KinematicChain([Link("a", [0, 0, 0], [0, 0, 1], -4, 4)], hand_offset=[100, 0, 0])
    pose = forward_kinematics(chain, [np.pi / 2])
    assert np.allclose(pose.position, [0, 100, 0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fk_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    chain = random_chain(rng)
    theta = rng.uniform(-np.pi, np.pi, 4)
    T = fk_oracle(chain, theta)
    pose = forward_kinematics(chain, theta)
    assert np.max(np.abs(pose.position - T[:3, 3])) < 1e-6
    assert np.allclose(pose.rotation_matrix, T[:3, :3], atol=1e-12)
    assert abs(np.linalg.norm(pose.orientation) - 1) < 1e-9


def test_fk_dimension_mismatch(arm):
    with pytest.raises(DimensionError):
        forward_kinematics(arm.chain, np.zeros(3))


def test_fk_bitwise_reproducible(arm):
    theta = np.array([-0.3, 0.1, 0.2, -1.0])
    a = forward_kinematics(arm.chain, theta)
    b = forward_kinematics(arm.chain, theta)
    assert a.position.tobytes() == b.position.tobytes()
    assert a.orientation.tobytes() == b.orientation.tobytes()


def test_hand_jacobian_matches_finite_differences(arm):
    theta = np.array([-0.4, 0.2, 0.1, -0.9])
    J = hand_jacobian(arm.chain, theta)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        p1 = forward_kinematics(arm.chain, theta + e)
        p0 = forward_kinematics(arm.chain, theta - e)
        assert np.allclose(J[:3, j], (p1.position - p0.position) / (2 * h), atol=1e-5)
        dr = (Rotation.from_quat(p1.orientation) * Rotation.from_quat(p0.orientation).inv())
        assert np.allclose(J[3:, j], dr.as_rotvec() / (2 * h), atol=1e-6)


def test_ik_fixed_point(arm):
    theta = np.array([-0.5, 0.1, -0.1, -1.0])
    res = inverse_kinematics(arm.chain, theta, forward_kinematics(arm.chain, theta))
    assert res.converged
    assert np.max(np.abs(res.theta - theta)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ik_recovers_nearby_target(seed):
    from selfbody.modelfile import load_model
    chain = load_model("arm4dof").chain
    rng = np.random.default_rng(seed)
    margin = 0.15
    theta = rng.uniform(chain.lower + margin, chain.upper - margin)
    delta = rng.normal(size=4)
    delta *= 0.1 / np.linalg.norm(delta)
    target = forward_kinematics(chain, theta + delta)
    res = inverse_kinematics(chain, theta, target)
    assert res.converged
    got = forward_kinematics(chain, res.theta)
    assert np.linalg.norm(got.position - target.position) < 0.1
    rel = Rotation.from_quat(got.orientation) * Rotation.from_quat(target.orientation).inv()
    assert np.linalg.norm(rel.as_rotvec()) < 1e-3


def test_ik_unreachable_is_flagged(arm):
    target = Pose([10000.0, 0.0, 0.0], [0, 0, 0, 1])
    res = inverse_kinematics(arm.chain, np.zeros(4), target)
    assert not res.converged
    assert res.reason in ("stalled", "max_iter")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3000, 3000), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_ik_respects_limits(pos, quat):
    from selfbody.modelfile import load_model
    chain = load_model("planar2dof").chain
    q = np.array(quat) + np.array([0, 0, 0, 1.5])
    res = inverse_kinematics(chain, np.zeros(2), Pose(pos, q), max_iter=50)
    assert np.all(res.theta >= chain.lower) and np.all(res.theta <= chain.upper)


def test_ik_frozen_joint_is_held(arm):
    theta = np.array([-0.5, 0.1, -0.1, -1.0])
    target = forward_kinematics(arm.chain, theta + 0.05)
    res = inverse_kinematics(arm.chain, theta, target, frozen=[False, True, False, False])
    assert res.theta[1] == theta[1]


def test_chain_validation():
    with pytest.raises(ValueError):
        Link("bad", np.zeros(3), [0, 0, 2], -1, 1)
    with pytest.raises(ValueError):
        Link("bad", np.zeros(3), [0, 0, 1], 1, -1)
