import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handover_mpc.geometry import (Pose, random_rotations, rotation_about_axis,
                                   rotation_log, twist_distance)


def rand_pose(rng):
    return Pose(random_rotations(1, rng)[0], rng.uniform(-1, 1, 3))


def test_identity_and_compose():
    rng = np.random.default_rng(0)
    a, b = rand_pose(rng), rand_pose(rng)
    c = a @ b
    assert c.is_orthonormal()
    np.testing.assert_allclose(c.translation, a.rotation @ b.translation + a.translation)
    ident = a @ a.inverse()
    assert ident.almost_equal(Pose.identity(), tol=1e-12)


def test_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1


def test_pose6_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rand_pose(rng)
        q = Pose.from_pose6(p.to_pose6())
        assert p.almost_equal(q, tol=1e-12)


def test_pose6_convention_is_intrinsic_zyx():
    # yaw about z, then pitch about the new y, then roll about the new x
    roll, pitch, yaw = 0.3, -0.4, 1.1
    p = Pose.from_rpy([0, 0, 0], roll=roll, pitch=pitch, yaw=yaw)
    expected = (rotation_about_axis([0, 0, 1], yaw)
                @ rotation_about_axis([0, 1, 0], pitch)
                @ rotation_about_axis([1, 0, 0], roll))
    np.testing.assert_allclose(p.rotation, expected, atol=1e-12)


def test_rotation_log_inverse_of_exp():
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.normal(size=3)
        v *= rng.uniform(1e-3, 0.99 * np.pi) / np.linalg.norm(v)  # principal branch
        R = rotation_about_axis(v / np.linalg.norm(v), np.linalg.norm(v))
        np.testing.assert_allclose(rotation_log(R), v, atol=1e-9)


def test_twist_distance_examples():
    a = Pose.identity()
    assert twist_distance(a, a) == 0.0
    b = Pose(np.eye(3), np.array([0.2, 0.0, 0.0]))
    assert abs(twist_distance(a, b) - 0.2) < 1e-12
    c = Pose(rotation_about_axis([0, 0, 1], np.pi / 2), np.zeros(3))
    assert abs(twist_distance(a, c) - 0.1 * np.pi / 2) < 1e-12


def test_twist_distance_metric_properties():
    rng = np.random.default_rng(3)
    poses = [rand_pose(rng) for _ in range(12)]
    for a in poses:
        assert twist_distance(a, a) == 0.0
    for a in poses[:6]:
        for b in poses[6:]:
            assert abs(twist_distance(a, b) - twist_distance(b, a)) < 1e-12
            assert twist_distance(a, b) > 0.0
    # triangle inequality on sampled triples
    for i in range(10):
        a, b, c = (poses[(i + k) % 12] for k in range(3))
        assert twist_distance(a, c) <= twist_distance(a, b) + twist_distance(b, c) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(-np.pi * 0.95, np.pi * 0.95), st.floats(0.01, 2.0))
def test_twist_distance_scales_rotation_by_weight(angle, w):
    a = Pose.identity()
    b = Pose(rotation_about_axis([0, 1, 0], angle), np.zeros(3))
    assert abs(twist_distance(a, b, rot_weight=w) - w * abs(angle)) < 1e-9
