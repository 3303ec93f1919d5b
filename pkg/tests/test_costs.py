import numpy as np
import pytest
from importlib import resources

from handover_mpc.costs import (CostWeights, Cuboid, JointGoal, PoseGoal,
                                SceneModel, Sphere, environment_collision,
                                goal_set_cost, goal_set_cost_pose, load_scene,
                                manip_cost, pose_distance, pose_distance_batch,
                                rollout_costs, scene_from_dict, sdf_sphere_capsule,
                                sdf_sphere_cuboid, sdf_sphere_sphere,
                                self_collision, stop_cost, straight_line_cost,
                                total_rollout_cost)
from handover_mpc.geometry import Pose, rotation_about_axis
from handover_mpc.grasps import Grasp, GraspSet
from handover_mpc.kinematics import forward_kinematics, load_robot, robot_from_dict


@pytest.fixture(scope="module")
def planar():
    return load_robot("planar2r")


@pytest.fixture(scope="module")
def panda():
    return load_robot("panda7")


@pytest.fixture(scope="module")
def scene():
    ref = resources.files("handover_mpc").joinpath("data/scenes/default.toml")
    return scene_from_dict(__import__("tomli").loads(ref.read_text()))


# ---------------------------------------------------------------------------
# pose distance
# ---------------------------------------------------------------------------

def test_pose_distance_worked_examples():
    a = Pose.identity()
    assert pose_distance(a, a, 70, 220) == 0.0

    b = Pose(np.eye(3), np.array([0.1, 0.0, 0.0]))
    assert abs(pose_distance(b, a, 70, 220) - 22.0) < 1e-12

    c = Pose(rotation_about_axis([0, 0, 1], np.pi), np.zeros(3))
    # ||I - Rz(pi)||_F = ||diag(2, 2, 0)||_F = sqrt(8)
    assert abs(pose_distance(c, a, 70, 220) - 70 * np.sqrt(8)) < 1e-9


def test_pose_distance_positive_when_different():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        from scipy.spatial.transform import Rotation
        x = Pose(Rotation.from_quat(q).as_matrix(), rng.uniform(-1, 1, 3))
        assert pose_distance(x, Pose.identity(), 70, 220) > 0


def test_pose_distance_translation_term_rigid_rotation_invariant():
    rng = np.random.default_rng(1)
    a = Pose(np.eye(3), np.array([0.3, 0.1, -0.2]))
    b = Pose(np.eye(3), np.array([-0.1, 0.4, 0.2]))
    base = pose_distance(a, b, 0.0, 1.0)
    for _ in range(10):
        w = rng.normal(size=3)
        R = rotation_about_axis(w / np.linalg.norm(w), rng.uniform(0, 3))
        common = Pose(R, rng.uniform(-1, 1, 3))
        assert abs(pose_distance(common @ a, common @ b, 0.0, 1.0) - base) < 1e-9


def test_pose_distance_batch_matches_scalar():
    rng = np.random.default_rng(2)
    from scipy.spatial.transform import Rotation
    poses = [Pose(Rotation.random(random_state=i).as_matrix(), rng.uniform(-1, 1, 3))
             for i in range(6)]
    Rt = np.stack([p.rotation for p in poses[:3]])
    tt = np.stack([p.translation for p in poses[:3]])
    Rg = np.stack([p.rotation for p in poses[3:]])
    tg = np.stack([p.translation for p in poses[3:]])
    batch = pose_distance_batch(Rt, tt, Rg, tg, 70, 220)
    for i in range(3):
        for j in range(3):
            assert abs(batch[i, j] - pose_distance(poses[i], poses[3 + j], 70, 220)) < 1e-9


# ---------------------------------------------------------------------------
# goal set
# ---------------------------------------------------------------------------

def grasp_at(x, y, z):
    return Grasp(Pose(np.eye(3), np.array([x, y, z], dtype=float)), 0.5)


def test_goal_set_cost_examples(planar):
    q = [0.0, np.pi / 2]  # ee at (1, 1, 0)
    single = GraspSet([grasp_at(1.0, 0.5, 0.0)])
    cost, idx = goal_set_cost(planar, q, single, 70, 220)
    ee = forward_kinematics(planar, q)
    assert idx == 0
    assert abs(cost - pose_distance(ee, single[0].pose, 70, 220)) < 1e-9

    pair = GraspSet([grasp_at(5.0, 0.0, 0.0), Grasp(ee, 0.5)])
    cost, idx = goal_set_cost(planar, q, pair, 70, 220)
    assert idx == 1
    assert cost < 1e-6  # FK equals that member


def test_goal_set_min_union_identity():
    rng = np.random.default_rng(3)
    from scipy.spatial.transform import Rotation
    probe = Pose(Rotation.random(random_state=99).as_matrix(), np.array([0.2, 0.1, 0.3]))
    for trial in range(20):
        g1 = GraspSet([grasp_at(*rng.uniform(-1, 1, 3)) for _ in range(rng.integers(1, 5))])
        g2 = GraspSet([grasp_at(*rng.uniform(-1, 1, 3)) for _ in range(rng.integers(1, 5))])
        both = GraspSet(g1.grasps + g2.grasps)
        c_union, _ = goal_set_cost_pose(probe, both, 70, 220)
        c1, _ = goal_set_cost_pose(probe, g1, 70, 220)
        c2, _ = goal_set_cost_pose(probe, g2, 70, 220)
        assert abs(c_union - min(c1, c2)) < 1e-12


def test_goal_set_empty_rejected():
    with pytest.raises(ValueError):
        PoseGoal([])


def test_goal_set_tie_breaks_lowest_index():
    p = Pose.identity()
    dup = GraspSet([grasp_at(1, 0, 0), grasp_at(1, 0, 0)])
    _, idx = goal_set_cost_pose(p, dup, 70, 220)
    assert idx == 0


# ---------------------------------------------------------------------------
# straight-line cost
# ---------------------------------------------------------------------------

def test_straight_line_cost_examples(planar):
    q = [0.0, np.pi / 2]
    ee = forward_kinematics(planar, q).translation
    J = np.array([[-1.0, -1.0], [1.0, 0.0]])  # planar rows at this config

    # joint rates that move the tip straight toward the goal
    goal = ee + np.array([0.3, 0.0, 0.0])
    qd = np.linalg.solve(J, [0.3, 0.0])
    assert straight_line_cost(planar, q, qd, goal) < 1e-9

    # orthogonal motion
    qd = np.linalg.solve(J, [0.0, 0.2])
    assert abs(straight_line_cost(planar, q, qd, goal) - 1.0) < 1e-9

    # antiparallel motion
    qd = np.linalg.solve(J, [-0.3, 0.0])
    assert abs(straight_line_cost(planar, q, qd, goal) - 2.0) < 1e-9


def test_straight_line_cost_guards(planar):
    q = [0.0, np.pi / 2]
    ee = forward_kinematics(planar, q).translation
    assert straight_line_cost(planar, q, [0.0, 0.0], ee + [1, 0, 0]) == 0.0
    assert straight_line_cost(planar, q, [0.5, 0.2], ee) == 0.0


def test_straight_line_range(planar):
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = rng.uniform(-3, 3, 2)
        qd = rng.normal(size=2)
        goal = rng.uniform(-2, 2, 3)
        c = straight_line_cost(planar, q, qd, goal)
        assert 0.0 <= c <= 2.0


# ---------------------------------------------------------------------------
# signed distances
# ---------------------------------------------------------------------------

def test_sdf_worked_examples():
    box = Cuboid([0, 0, 0], [0.5, 0.5, 0.5])
    s = Sphere([0, 0, 1.0], 0.1)  # 0.5 above the top face
    assert abs(sdf_sphere_cuboid(s, box) - (-0.4)) < 1e-12
    tangent = Sphere([0, 0, 0.6], 0.1)
    assert abs(sdf_sphere_cuboid(tangent, box)) < 1e-12
    overlap = Sphere([0, 0, 0.55], 0.1)
    assert abs(sdf_sphere_cuboid(overlap, box) - 0.05) < 1e-12

    a = Sphere([0, 0, 0], 0.1)
    b = Sphere([1.0, 0, 0], 0.1)
    assert abs(sdf_sphere_sphere(a, b) - (-0.8)) < 1e-12
    assert abs(sdf_sphere_sphere(a, Sphere([0, 0, 0], 0.25)) - 0.35) < 1e-12
    assert abs(sdf_sphere_sphere(a, Sphere([0.2, 0, 0], 0.1))) < 1e-12

    s = Sphere([0.5, 0.5, 0.0], 0.05)
    assert abs(sdf_sphere_capsule(s, [0, 0, 0], [1, 0, 0], 0.05) - (-0.4)) < 1e-12
    beyond = Sphere([1.5, 0.0, 0.0], 0.05)
    assert abs(sdf_sphere_capsule(beyond, [0, 0, 0], [1, 0, 0], 0.05) - (-0.4)) < 1e-12
    on_seg = Sphere([0.5, 0.0, 0.0], 0.05)
    assert abs(sdf_sphere_capsule(on_seg, [0, 0, 0], [1, 0, 0], 0.07) - 0.12) < 1e-12


def surface_points_box(box, n=120):
    """Dense samples on the box surface: brute-force oracle support."""
    he = box.half_extents
    pts = []
    lin = [np.linspace(-he[i], he[i], n) for i in range(3)]
    for axis in range(3):
        for sign in (-1, 1):
            u, v = [a for a in range(3) if a != axis]
            uu, vv = np.meshgrid(lin[u], lin[v], indexing="ij")
            face = np.zeros((n * n, 3))
            face[:, u] = uu.ravel()
            face[:, v] = vv.ravel()
            face[:, axis] = sign * he[axis]
            pts.append(face)
    return np.concatenate(pts) + box.center


def oracle_point_box(point, box, coarse=80, fine=160):
    """Two-stage surface sampling: sign from the inside test, magnitude from
    nearest surface sample with local refinement."""
    surf = surface_points_box(box, coarse)
    d = np.linalg.norm(surf - point, axis=1)
    best = surf[d.argmin()]
    span = 4.0 * box.half_extents.max() / coarse
    lin = np.linspace(-span, span, fine)
    gx, gy, gz = np.meshgrid(lin, lin, lin, indexing="ij")
    local = best + np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    q = np.abs(local - box.center) - box.half_extents
    on_surface = (np.abs(q.max(axis=1)) < span / fine * 4) & (q.max(axis=1) < span / fine * 4)
    candidates = np.concatenate([surf, local[on_surface]]) if on_surface.any() else surf
    dist = np.linalg.norm(candidates - point, axis=1).min()
    inside = (np.abs(point - box.center) <= box.half_extents).all()
    return -dist if inside else dist


def test_sdf_box_against_sampling_oracle():
    rng = np.random.default_rng(5)
    for _ in range(60):
        box = Cuboid(rng.uniform(-0.3, 0.3, 3), rng.uniform(0.1, 0.6, 3))
        s = Sphere(rng.uniform(-1.0, 1.0, 3), rng.uniform(0.02, 0.2))
        got = sdf_sphere_cuboid(s, box)
        want = -(oracle_point_box(s.center, box) - s.radius)
        assert abs(got - want) < 1e-3


def test_sdf_capsule_against_sampling_oracle():
    rng = np.random.default_rng(6)
    for _ in range(60):
        p0, p1 = rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)
        r_c = rng.uniform(0.02, 0.15)
        s = Sphere(rng.uniform(-1.0, 1.0, 3), rng.uniform(0.02, 0.2))
        # oracle: dense enumeration of segment points
        ts = np.linspace(0.0, 1.0, 20001)
        seg = p0 + ts[:, None] * (p1 - p0)
        d = np.linalg.norm(seg - s.center, axis=1).min()
        want = -(d - r_c - s.radius)
        got = sdf_sphere_capsule(s, p0, p1, r_c)
        assert abs(got - want) < 1e-3


def test_sdf_sphere_against_sampling_oracle():
    rng = np.random.default_rng(7)
    for _ in range(60):
        a = Sphere(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.05, 0.3))
        b = Sphere(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.05, 0.3))
        # oracle: dense direction sampling of surface-to-center distance
        u = rng.normal(size=(20000, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        surf = a.center + a.radius * u
        d = np.linalg.norm(surf - b.center, axis=1).min()
        inside = np.linalg.norm(a.center - b.center) < a.radius  # b center inside a
        gap = d - b.radius
        got = sdf_sphere_sphere(a, b)
        # the analytic value: compare through the center-distance identity
        want = -(np.linalg.norm(a.center - b.center) - a.radius - b.radius)
        assert abs(got - want) < 1e-12
        if not inside and gap > 0:
            assert abs(-gap - got) < 2e-3


# ---------------------------------------------------------------------------
# environment / self collision
# ---------------------------------------------------------------------------

def test_environment_collision_clear_and_penetrating(panda, scene):
    clear = environment_collision(panda, panda.home, scene)
    assert clear < 0.0

    # drive a wrist through the table: straight-down configuration
    sunk = SceneModel(Cuboid([0.45, 0, 0.6], [0.55, 0.6, 0.1]), scene.hand,
                      scene.camera_origin, scene.occlusion_capsule_radius)
    assert environment_collision(panda, panda.home, sunk) > 0.0


def test_environment_collision_matches_pairwise_max(panda, scene):
    from handover_mpc.kinematics import link_spheres_world
    q = panda.home
    spheres = link_spheres_world(panda, q)
    best = -np.inf
    for s in spheres:
        sp = Sphere(s["center"], s["radius"])
        best = max(best, sdf_sphere_cuboid(sp, scene.table))
        best = max(best, sdf_sphere_sphere(sp, scene.hand))
        best = max(best, sdf_sphere_capsule(sp, scene.camera_origin,
                                            scene.hand.center,
                                            scene.occlusion_capsule_radius))
    assert abs(environment_collision(panda, q, scene) - best) < 1e-12


def test_occlusion_capsule_flagged(panda, scene):
    # hand placed so the camera-hand segment passes through the wrist area
    ee = forward_kinematics(panda, panda.home).translation
    cam = scene.camera_origin
    hand_pos = cam + 1.5 * (ee - cam)
    s2 = scene.with_hand(hand_pos)
    assert environment_collision(panda, panda.home, s2) > 0.0


def test_self_collision_zero_config_clear(panda):
    assert self_collision(panda, np.zeros(7)) < 0.0
    assert self_collision(panda, panda.home) < 0.0


def test_self_collision_enlarged_spheres_positive():
    big = robot_from_dict({
        "name": "fat",
        "joints": [
            {"origin_xyz": [0, 0, 0], "axis": "z", "limit_lo": -3.2, "limit_hi": 3.2},
            {"origin_xyz": [0.3, 0, 0], "axis": "z", "limit_lo": -3.2, "limit_hi": 3.2},
        ],
        "spheres": [
            {"link": 0, "center": [0.0, 0, 0], "radius": 0.2},
            {"link": 1, "center": [0.1, 0, 0], "radius": 0.25},
        ],
    })
    assert self_collision(big, [0.0, 0.0]) > 0.0


def test_self_collision_exemption_respected():
    cfg = {
        "name": "exempted",
        "self_collision_exempt": [[0, 1]],
        "joints": [
            {"origin_xyz": [0, 0, 0], "axis": "z", "limit_lo": -3.2, "limit_hi": 3.2},
            {"origin_xyz": [0.3, 0, 0], "axis": "z", "limit_lo": -3.2, "limit_hi": 3.2},
        ],
        "spheres": [
            {"link": 0, "center": [0.0, 0, 0], "radius": 0.2},
            {"link": 1, "center": [0.1, 0, 0], "radius": 0.25},
        ],
    }
    m = robot_from_dict(cfg)
    assert self_collision(m, [0.0, 0.0]) == -np.inf  # no active pairs at all


# ---------------------------------------------------------------------------
# manip / stop costs
# ---------------------------------------------------------------------------

def test_manip_cost_examples(planar):
    # sqrt(det) = |sin t2| on the unit 2R arm
    m0 = 0.5
    at_threshold = np.arcsin(0.5)
    assert abs(manip_cost(planar, [0.0, at_threshold], m0)) < 1e-9
    assert abs(manip_cost(planar, [0.0, 0.0], m0) - m0) < 1e-12
    assert manip_cost(planar, [0.0, np.pi / 2], m0) == 0.0  # sqrt(det)=1 = 2*m0


def test_stop_cost_examples():
    acc = np.array([2.0])
    dt = 0.1
    assert stop_cost(np.zeros((5, 1)), acc, dt) == 0.0

    # only the final step has zero braking budget left
    v = np.zeros((5, 1))
    v[-1, 0] = 1.0
    assert abs(stop_cost(v, acc, dt) - 1.0) < 1e-12

    # exactly on the braking envelope everywhere
    H = 5
    v = np.array([[(H - 1 - t) * dt * acc[0]] for t in range(H)])
    assert stop_cost(v, acc, dt) == 0.0


def test_stop_cost_validates_horizon():
    with pytest.raises(ValueError):
        stop_cost(np.zeros((0, 2)), np.ones(2), 0.1)


# ---------------------------------------------------------------------------
# total rollout cost
# ---------------------------------------------------------------------------

def test_total_cost_fixed_point(planar):
    # stationary trajectory at a goal pose with every auxiliary term disabled
    q = np.array([0.3, 1.1])
    target = forward_kinematics(planar, q)
    H = 6
    positions = np.tile(q, (H, 1))
    velocities = np.zeros((H, 2))
    weights = CostWeights(manip_weight=0.0, stop_weight=0.0, straight_line=0.0)
    goal = GraspSet([Grasp(target, 1.0)])
    total = total_rollout_cost(planar, positions, velocities, goal, None, weights, 0.1)
    assert abs(total) < 1e-9


def test_total_cost_table_penetration_term(panda, scene):
    # one step with a single 0.01 m penetration adds 5000 * 0.0001 = 0.5
    q = panda.home
    H = 4
    positions = np.tile(q, (H, 1))
    velocities = np.zeros((H, 7))
    weights = CostWeights(manip_weight=0.0, stop_weight=0.0, straight_line=0.0,
                          joint_goal_weight=0.0)
    goal = JointGoal(q)
    base = total_rollout_cost(panda, positions, velocities, goal, scene, weights, 0.1)
    assert base == 0.0

    se = environment_collision(panda, q, scene)  # negative: clearance
    lifted = SceneModel(
        Cuboid(scene.table.center + np.array([0.0, 0.0, -se + 0.01]),
               scene.table.half_extents),
        scene.hand, scene.camera_origin, scene.occlusion_capsule_radius)
    one_pen = np.tile(q, (H, 1))
    cost_pen, _ = rollout_costs(panda, one_pen[None, :1], np.zeros((1, 1, 7)),
                                goal, lifted, weights, 0.1)
    assert abs(environment_collision(panda, q, lifted) - 0.01) < 1e-9
    assert abs(cost_pen[0] - 0.5) < 1e-6


def test_total_cost_alpha2_linearity(planar):
    q = np.array([0.3, 1.1])
    offset_target = Pose(forward_kinematics(planar, q).rotation,
                         forward_kinematics(planar, q).translation + [0.2, 0, 0])
    goal = GraspSet([Grasp(offset_target, 1.0)])
    positions = np.tile(q, (3, 1))
    velocities = np.zeros((3, 2))
    w1 = CostWeights(alpha2=220, manip_weight=0, stop_weight=0, straight_line=0)
    w2 = CostWeights(alpha2=440, manip_weight=0, stop_weight=0, straight_line=0)
    c1 = total_rollout_cost(planar, positions, velocities, goal, None, w1, 0.1)
    c2 = total_rollout_cost(planar, positions, velocities, goal, None, w2, 0.1)
    assert abs(c2 - 2 * c1) < 1e-9


def test_total_cost_monotone_in_weights(panda, scene):
    rng = np.random.default_rng(8)
    q0 = panda.home
    H = 5
    positions = q0 + rng.normal(0, 0.4, size=(H, 7)).cumsum(axis=0) * 0.2
    velocities = rng.normal(0, 1.0, size=(H, 7))
    goal = GraspSet([Grasp(forward_kinematics(panda, panda.home), 1.0)])
    base = CostWeights()
    cost0 = total_rollout_cost(panda, positions, velocities, goal, scene, base, 0.1)
    assert cost0 >= 0.0
    for name in ("constraint_weight", "alpha1", "alpha2", "straight_line",
                 "manip_weight", "stop_weight"):
        kw = {name: getattr(base, name) * 2 + 1.0}
        up = CostWeights(**{**base.__dict__, **kw})
        cost_up = total_rollout_cost(panda, positions, velocities, goal, scene, up, 0.1)
        assert cost_up >= cost0 - 1e-12, name


def test_joint_goal_mode(panda):
    goal = JointGoal(panda.home)
    H = 3
    at_goal = np.tile(panda.home, (H, 1))
    off = at_goal + 0.3
    w = CostWeights(manip_weight=0, stop_weight=0, straight_line=0, constraint_weight=0)
    c_at = total_rollout_cost(panda, at_goal, np.zeros((H, 7)), goal, None, w, 0.1)
    c_off = total_rollout_cost(panda, off, np.zeros((H, 7)), goal, None, w, 0.1)
    assert c_at == 0.0
    assert abs(c_off - w.joint_goal_weight * H * 7 * 0.09) < 1e-9


def test_scene_file_loads():
    from handover_mpc.costs import load_scene
    import handover_mpc
    from pathlib import Path
    root = Path(handover_mpc.__file__).parent
    scene = load_scene(root / "data/scenes/default.toml")
    assert scene.table.half_extents[0] == 0.55
    assert scene.hand.radius == 0.06
    assert scene.occlusion_capsule_radius == 0.06


def test_weights_validated():
    with pytest.raises(ValueError):
        CostWeights(alpha1=-1.0)
