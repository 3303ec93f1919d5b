import numpy as np
import pytest

from handover_mpc.costs import (CostWeights, JointGoal, PoseGoal,
                                total_rollout_cost)
from handover_mpc.geometry import Pose
from handover_mpc.grasps import Grasp, GraspSet
from handover_mpc.kinematics import JointState, forward_kinematics, load_robot
from handover_mpc.mpc import (ControlDistribution, MpcController,
                              RolloutConfig, rollout, sample_particles,
                              solve_step, solver_config_from_dict,
                              update_distribution)


@pytest.fixture(scope="module")
def planar():
    return load_robot("planar2r")


def test_rollout_euler_examples():
    state = JointState.at_rest(np.zeros(1))
    accels = np.ones((5, 1))
    traj = rollout(state, accels, dt=0.1, acc_limits=np.array([10.0]))
    # first two steps of the semi-implicit update from rest
    assert abs(traj.velocities[0, 0] - 0.1) < 1e-12
    assert abs(traj.positions[0, 0] - 0.01) < 1e-12
    assert abs(traj.velocities[1, 0] - 0.2) < 1e-12
    assert abs(traj.positions[1, 0] - 0.03) < 1e-12


def test_rollout_zero_accel_holds_position():
    state = JointState.at_rest(np.array([0.3, -0.7]))
    traj = rollout(state, np.zeros((8, 2)), dt=0.05, acc_limits=np.array([5.0, 5.0]))
    assert np.abs(traj.positions - state.position).max() == 0.0
    assert np.abs(traj.velocities).max() == 0.0


def test_rollout_clamps_accelerations_not_positions():
    state = JointState.at_rest(np.zeros(1))
    traj = rollout(state, 100.0 * np.ones((4, 1)), dt=0.5, acc_limits=np.array([2.0]))
    assert np.abs(traj.accelerations).max() == 2.0
    assert traj.velocities.max() > 2.0  # velocities intentionally unclamped


def test_rollout_satisfies_euler_recurrence():
    rng = np.random.default_rng(0)
    state = JointState(rng.normal(size=3), rng.normal(size=3), np.zeros(3))
    accels = rng.normal(size=(10, 3))
    dt = 0.07
    traj = rollout(state, accels, dt, np.array([50.0, 50.0, 50.0]))
    v_prev, p_prev = state.velocity, state.position
    for t in range(10):
        v = v_prev + traj.accelerations[t] * dt
        p = p_prev + v * dt
        np.testing.assert_allclose(traj.velocities[t], v, atol=1e-12)
        np.testing.assert_allclose(traj.positions[t], p, atol=1e-12)
        v_prev, p_prev = v, p


def test_sample_particles_elite_and_degenerate_noise():
    cfg = RolloutConfig(horizon=6, particles=16, seed=0)
    rng = np.random.default_rng(3)
    dist = ControlDistribution(np.ones((6, 2)), noise_std=1e-12)
    particles = sample_particles(dist, cfg, rng)
    np.testing.assert_array_equal(particles[0], dist.mean)
    assert np.abs(particles - dist.mean).max() < 1e-9  # vanishing noise

    dist = ControlDistribution(np.zeros((6, 2)), noise_std=0.7)
    particles = sample_particles(dist, cfg, np.random.default_rng(4))
    np.testing.assert_array_equal(particles[0], dist.mean)
    assert np.abs(particles[1:]).max() > 0.1


def test_sample_particles_mean_preserved():
    # law of large numbers: smoothing keeps noise zero-mean
    cfg = RolloutConfig(horizon=4, particles=100_000, seed=0)
    dist = ControlDistribution(np.full((4, 1), 1.5), noise_std=1.0)
    particles = sample_particles(dist, cfg, np.random.default_rng(5))
    entry = particles[:, 2, 0]
    assert abs(entry.mean() - 1.5) < 3.0 / np.sqrt(cfg.particles)


def test_update_distribution_rules():
    mean = np.zeros((3, 1))
    dist = ControlDistribution(mean, noise_std=1.0, beta=0.5)
    particles = np.stack([np.full((3, 1), v) for v in (0.0, 1.0, 2.0, 3.0)])

    # equal costs: plain average
    upd = update_distribution(dist, particles, np.array([5.0, 5.0, 5.0, 5.0]))
    np.testing.assert_allclose(upd.mean, 1.5 * np.ones((3, 1)), atol=1e-12)

    # beta -> 0 with a unique minimizer: that particle
    cold = ControlDistribution(mean, noise_std=1.0, beta=1e-9)
    upd = update_distribution(cold, particles, np.array([4.0, 2.0, 9.0, 3.0]))
    np.testing.assert_allclose(upd.mean, particles[1], atol=1e-9)

    # all particles equal to the mean: unchanged
    same = np.stack([mean] * 4)
    upd = update_distribution(dist, same, np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(upd.mean, mean, atol=1e-15)


def test_update_weights_shift_invariant():
    rng = np.random.default_rng(6)
    particles = rng.normal(size=(8, 4, 2))
    costs = rng.uniform(0, 10, 8)
    dist = ControlDistribution(np.zeros((4, 2)), beta=0.7)
    a = update_distribution(dist, particles, costs)
    b = update_distribution(dist, particles, costs + 123.4)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)


def test_update_rejects_all_infinite():
    dist = ControlDistribution(np.zeros((2, 1)))
    with pytest.raises(ValueError):
        update_distribution(dist, np.zeros((2, 2, 1)), np.array([np.inf, np.inf]))


def test_distribution_shift_pads_zeros():
    mean = np.arange(8.0).reshape(4, 2)
    dist = ControlDistribution(mean)
    shifted = dist.shifted()
    np.testing.assert_array_equal(shifted.mean[:-1], mean[1:])
    np.testing.assert_array_equal(shifted.mean[-1], np.zeros(2))


def test_config_validation():
    with pytest.raises(ValueError):
        RolloutConfig(particles=1)
    with pytest.raises(ValueError):
        RolloutConfig(smoothing_kernel=(0.5, 0.5))  # even length
    with pytest.raises(ValueError):
        ControlDistribution(np.zeros((3, 2)), noise_std=0.0)
    with pytest.raises(ValueError):
        ControlDistribution(np.zeros((3, 2)), beta=0.0)


def test_solver_config_from_dict_round_trip():
    cfg, weights = solver_config_from_dict({
        "rollout": {"horizon": 12, "dt": 0.05, "particles": 32, "seed": 3},
        "weights": {"alpha1": 35.0, "constraint_weight": 100.0},
    })
    assert cfg.horizon == 12 and cfg.particles == 32 and cfg.seed == 3
    assert weights.alpha1 == 35.0 and weights.alpha2 == 220.0


def hold_goal(planar, q):
    return PoseGoal(GraspSet([Grasp(forward_kinematics(planar, q), 1.0)]))


def test_solve_step_fixed_point(planar):
    # at the goal, at rest: command stays near zero
    q = np.array([0.4, 1.2])
    cfg = RolloutConfig(horizon=20, particles=128, seed=0)
    ctl = MpcController(planar, CostWeights(), cfg)
    state = JointState.at_rest(q)
    cmd, diag = ctl.step(state, hold_goal(planar, q))
    assert np.linalg.norm(cmd) < 0.05
    assert diag.chosen_grasp == 0


def simulate_reach(planar, seed, straight_line_weight=30.0, sim_seconds=5.0):
    """Closed-loop 2R reach; returns (pose error history, ee path)."""
    q_goal = np.array([0.9, 1.0])
    goal = hold_goal(planar, q_goal)
    weights = CostWeights(straight_line=straight_line_weight)
    cfg = RolloutConfig(seed=seed, noise_std=0.5, particles=512)
    ctl = MpcController(planar, weights, cfg)
    state = JointState.at_rest(np.array([-1.2, 0.4]))
    dt = 1.0 / 50.0
    target = forward_kinematics(planar, q_goal).translation
    path = [forward_kinematics(planar, state.position).translation]
    errs = []
    for _ in range(int(sim_seconds / dt)):
        cmd, diag = ctl.step(state, goal)
        state.velocity = state.velocity + cmd * dt
        state.position = state.position + state.velocity * dt
        p = forward_kinematics(planar, state.position).translation
        path.append(p)
        errs.append(np.linalg.norm(p - target))
    return np.array(errs), np.array(path)


def test_free_space_reach_converges(planar):
    errs, _ = simulate_reach(planar, seed=1, sim_seconds=5.0)
    assert errs[-1] < 0.01


def test_straight_line_cost_straightens_path(planar):
    # A/B on the same seed: path-length ratio must drop with the cost on
    def ratio(weight, seed):
        errs, path = simulate_reach(planar, seed=seed, straight_line_weight=weight,
                                    sim_seconds=3.0)
        arc = np.linalg.norm(np.diff(path, axis=0), axis=1).sum()
        chord = np.linalg.norm(path[-1] - path[0])
        return arc / max(chord, 1e-9)

    wins = sum(ratio(30.0, s) < ratio(0.0, s) for s in range(3))
    assert wins >= 2


def test_solver_deterministic(planar):
    q = np.array([0.4, 1.2])
    goal = hold_goal(planar, q + 0.3)

    def run():
        ctl = MpcController(planar, CostWeights(), RolloutConfig(seed=9))
        state = JointState.at_rest(q)
        cmds = []
        for _ in range(10):
            cmd, _ = ctl.step(state, goal)
            cmds.append(cmd.copy())
        return np.stack(cmds)

    np.testing.assert_array_equal(run(), run())


def test_commands_respect_acceleration_box(planar):
    goal = hold_goal(planar, np.array([1.2, -0.8]))
    ctl = MpcController(planar, CostWeights(), RolloutConfig(seed=2))
    state = JointState.at_rest(np.array([-1.0, 1.0]))
    for _ in range(30):
        cmd, _ = ctl.step(state, goal)
        assert (np.abs(cmd) <= planar.acc_limits + 1e-12).all()
        state.velocity = state.velocity + cmd / 50.0
        state.position = state.position + state.velocity / 50.0


def test_joint_goal_mode_converges(planar):
    target = np.array([0.8, -0.5])
    ctl = MpcController(planar, CostWeights(), RolloutConfig(seed=3))
    state = JointState.at_rest(np.array([-0.5, 0.9]))
    dt = 1.0 / 50.0
    for _ in range(150):
        cmd, diag = ctl.step(state, JointGoal(target))
        assert diag.chosen_grasp == -1
        state.velocity = state.velocity + cmd * dt
        state.position = state.position + state.velocity * dt
    assert np.abs(state.position - target).max() < 0.05


def test_diagnostics_csv_row(planar):
    ctl = MpcController(planar, CostWeights(), RolloutConfig(seed=0))
    state = JointState.at_rest(np.array([0.2, 0.7]))
    _, diag = ctl.step(state, hold_goal(planar, np.array([0.2, 0.7])))
    row = diag.csv_row()
    assert row.startswith("0,")
    assert len(row.split(",")) == len(diag.CSV_HEADER.split(","))
