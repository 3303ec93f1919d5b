import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handover_mpc.geometry import Pose
from handover_mpc.kinematics import forward_kinematics, jacobian, load_robot
from handover_mpc.manipulability import (ManipConfig, batch_psd_det,
                                         config_manipulability,
                                         generate_reachability_dataset,
                                         grasp_manipulability,
                                         joint_limit_penalty,
                                         joint_limit_weight_matrix,
                                         labels_to_array, load_dataset_csv,
                                         save_dataset_csv,
                                         weighted_manipulability)


@pytest.fixture(scope="module")
def planar():
    return load_robot("planar2r")


@pytest.fixture(scope="module")
def panda():
    return load_robot("panda7")


def test_batch_psd_det_matches_numpy():
    rng = np.random.default_rng(0)
    for m in (2, 6):
        X = rng.normal(size=(64, m, m + 2))
        A = X @ X.transpose(0, 2, 1)
        np.testing.assert_allclose(batch_psd_det(A), np.linalg.det(A), rtol=1e-9)
    # rank-deficient input must give exactly zero, not noise
    v = rng.normal(size=(8, 3, 1))
    sing = v @ v.transpose(0, 2, 1)
    assert (batch_psd_det(sing)[1:] == 0.0).all() or np.abs(batch_psd_det(sing)).max() < 1e-12


def test_planar_manipulability_closed_form(planar):
    # planar sub-Jacobian determinant is l1*l2*sin(t2); squared for det(J J^T)
    assert abs(config_manipulability(planar, [0.0, np.pi / 2]) - 1.0) < 1e-9
    assert config_manipulability(planar, [0.3, 0.0]) < 1e-12
    assert abs(config_manipulability(planar, [0.0, np.pi / 6]) - 0.25) < 1e-9
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = rng.uniform(-3, 3, 2)
        assert abs(config_manipulability(planar, q) - np.sin(q[1]) ** 2) < 1e-9


def test_manipulability_zero_iff_rank_deficient(panda):
    rng = np.random.default_rng(2)
    for _ in range(50):
        q = rng.uniform(panda.limit_lo, panda.limit_hi)
        J = jacobian(panda, q)
        sv = np.linalg.svd(J, compute_uv=False)
        oracle = float(np.prod(sv ** 2))
        got = config_manipulability(panda, q)
        assert got >= 0.0
        assert abs(got - oracle) < 1e-9 * max(1.0, oracle)


def test_joint_limit_penalty_worked_values():
    lo, hi = -1.0, 1.0
    assert joint_limit_penalty(0.0, lo, hi) == 0.0
    # direct evaluation: (2^2 * 1.8) / (4 * 0.1^2 * 1.9^2)
    expected = (4.0 * 1.8) / (4.0 * 0.01 * 3.61)
    assert abs(joint_limit_penalty(0.9, lo, hi) - expected) < 1e-12
    assert abs(joint_limit_penalty(-0.9, lo, hi) + expected) < 1e-12


def test_joint_limit_penalty_midpoint_exact():
    for lo, hi in [(-1.0, 1.0), (-2.8973, 2.8973), (0.5, 2.5)]:
        assert joint_limit_penalty((lo + hi) / 2.0, lo, hi) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 0.999))
def test_joint_limit_penalty_antisymmetric(frac):
    lo, hi = -1.3, 2.1
    mid = (lo + hi) / 2.0
    d = frac * (hi - mid)
    p_hi = joint_limit_penalty(mid + d, lo, hi)
    p_lo = joint_limit_penalty(mid - d, lo, hi)
    assert abs(p_hi + p_lo) <= 1e-9 * max(1.0, abs(p_hi))


def test_joint_limit_penalty_raises_at_limits():
    with pytest.raises(ValueError):
        joint_limit_penalty(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        joint_limit_penalty(-1.2, -1.0, 1.0)


def unit_limits_model():
    from handover_mpc.kinematics import robot_from_dict
    return robot_from_dict({
        "name": "unit",
        "joints": [
            {"origin_xyz": [0, 0, 0], "axis": "z", "limit_lo": -1.0, "limit_hi": 1.0},
            {"origin_xyz": [1, 0, 0], "axis": "z", "limit_lo": -1.0, "limit_hi": 1.0},
        ],
    })


def test_weight_matrix_examples(planar, panda):
    mid = 0.5 * (panda.limit_lo + panda.limit_hi)
    np.testing.assert_allclose(joint_limit_weight_matrix(panda, mid), np.eye(7), atol=1e-15)

    unit = unit_limits_model()
    W = joint_limit_weight_matrix(unit, [0.9, 0.0])
    # worked value: |P(0.9)| in [-1, 1] is 49.8615
    p = joint_limit_penalty(0.9, -1.0, 1.0)
    assert abs(W[0, 0] - 1.0 / np.sqrt(1.0 + p)) < 1e-12
    assert abs(W[0, 0] - 0.14025) < 1e-4
    assert W[1, 1] == 1.0

    # limit case maps to weight 0
    at_limit = joint_limit_weight_matrix(planar, [np.pi, 0.0])
    assert at_limit[0, 0] == 0.0


def test_weight_shrinks_toward_limit(planar):
    vals = [joint_limit_weight_matrix(planar, [f * np.pi, 0.0])[0, 0]
            for f in (0.0, 0.5, 0.9, 0.99, 0.9999)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-2


def test_weighted_le_unweighted(panda):
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = rng.uniform(panda.limit_lo, panda.limit_hi)
        assert weighted_manipulability(panda, q) <= config_manipulability(panda, q) + 1e-15


def test_weighted_reduces_to_unweighted_at_midpoint(panda):
    mid = 0.5 * (panda.limit_lo + panda.limit_hi)
    assert abs(weighted_manipulability(panda, mid) - config_manipulability(panda, mid)) < 1e-12


def test_weighted_zero_when_joint_at_limit(planar):
    # square task Jacobian: one zero weight kills the determinant
    val = weighted_manipulability(planar, [np.pi, np.pi / 2])
    assert val == 0.0


def test_grasp_manipulability_planar_branches(planar):
    cfg = ManipConfig(position_only=True)
    grasp = Pose(np.eye(3), np.array([1.0, 1.0, 0.0]))
    score = grasp_manipulability(planar, grasp, cfg)
    # both IK branches sit at |t2| = pi/2 where the unweighted det is 1;
    # the limit weighting at those configs trims it slightly
    assert 0.5 < score <= 1.0 + 1e-9


def test_grasp_manipulability_unreachable_distance(planar):
    grasp = Pose(np.eye(3), np.array([3.0, 0.0, 0.0]))
    score = grasp_manipulability(planar, grasp, ManipConfig(position_only=True))
    assert abs(score + 1.0) < 1e-3


def test_grasp_manipulability_reachable_positive(panda):
    grasp = forward_kinematics(panda, panda.home)
    assert grasp_manipulability(panda, grasp) > 0.0


def test_dataset_validation(panda):
    with pytest.raises(ValueError):
        generate_reachability_dataset(panda, 0, seed=0)


def test_dataset_outside_reach_all_negative(planar):
    box = ((5.0, 6.0), (5.0, 6.0), (0.0, 0.1))
    labels = generate_reachability_dataset(planar, 16, seed=0, workspace=box)
    assert all(l.score < 0 for l in labels)


def test_dataset_deterministic_and_chunk_invariant(planar, tmp_path):
    a = labels_to_array(generate_reachability_dataset(planar, 40, seed=9, chunk=8))
    b = labels_to_array(generate_reachability_dataset(planar, 40, seed=9, chunk=40))
    assert np.array_equal(a, b)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset_csv(pa, a)
    save_dataset_csv(pb, b)
    assert pa.read_bytes() == pb.read_bytes()


def test_dataset_csv_round_trip(planar, tmp_path):
    labels = generate_reachability_dataset(planar, 12, seed=2)
    path = tmp_path / "d.csv"
    save_dataset_csv(path, labels)
    arr = load_dataset_csv(path)
    np.testing.assert_array_equal(arr, labels_to_array(labels))
    assert path.read_text().splitlines()[0] == "x,y,z,roll,pitch,yaw,score"


def test_reachability_boundary_monotone_sweep(panda):
    # labels along a ray leaving the workspace: positive inside, negative
    # outside, with small magnitudes near the crossing
    cfg = ManipConfig(ik_seeds=12)
    radii = np.linspace(0.45, 1.25, 9)
    scores = []
    for r in radii:
        grasp = Pose(np.array([[1, 0, 0], [0, 0, 1.0], [0, -1.0, 0]]),
                     np.array([r, 0.0, 0.4]))
        scores.append(grasp_manipulability(panda, grasp, cfg))
    scores = np.array(scores)
    assert scores[0] > 0
    assert scores[-1] < 0
    crossings = np.sum(np.sign(scores[:-1]) != np.sign(scores[1:]))
    assert crossings == 1
    # beyond the boundary the deficit keeps growing
    neg = scores[scores < 0]
    assert all(a > b for a, b in zip(neg, neg[1:]))
