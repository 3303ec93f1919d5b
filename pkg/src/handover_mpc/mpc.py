"""Sampling-based stochastic MPC over joint accelerations.

Each tick: sample acceleration sequences around the current mean, roll them
out with semi-implicit Euler integration, score the rollouts with the cost
library, exponentially re-weight to update the mean, and execute the first
step (receding horizon).  No gradients anywhere, so every cost term may be
non-smooth.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .costs import CostWeights, GoalSpec, PoseGoal, SceneModel, rollout_costs
from .geometry import Pose
from .kinematics import JointState, RobotModel, batch_fk, batch_jacobian

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ControlDistribution:
    """Mean acceleration sequence (H, dof) plus fixed sampling noise."""

    mean: np.ndarray
    noise_std: float | np.ndarray = 1.0
    beta: float = 0.07

    def __post_init__(self):
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        if self.mean.shape[0] < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(np.asarray(self.noise_std) <= 0):
            raise ValueError("noise_std must be > 0")
        if self.beta <= 0:
            raise ValueError("temperature beta must be > 0")

    @staticmethod
    def zeros(horizon: int, dof: int, noise_std=1.0, beta=0.07) -> "ControlDistribution":
        return ControlDistribution(np.zeros((horizon, dof)), noise_std, beta)

    def shifted(self) -> "ControlDistribution":
        """Receding-horizon shift: drop the first step, pad a zero tail."""
        mean = np.concatenate([self.mean[1:], np.zeros((1, self.mean.shape[1]))])
        return ControlDistribution(mean, self.noise_std, self.beta)


@dataclass
class RolloutConfig:
    """Sampling geometry: 30 steps at 1/15 s give the 2 s horizon."""

    horizon: int = 30
    dt: float = 1.0 / 15.0
    particles: int = 256
    iterations_per_tick: int = 1
    smoothing_kernel: tuple = (0.25, 0.5, 0.25)
    noise_std: float = 1.0
    beta: float = 0.07
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        k = np.asarray(self.smoothing_kernel, dtype=float)
        if k.ndim != 1 or k.size % 2 != 1 or abs(k.sum() - 1.0) > 1e-9:
            raise ValueError("smoothing kernel must be odd-length and sum to 1")


@dataclass
class Trajectory:
    """Joint-space rollout; satisfies the Euler update exactly by construction."""

    positions: np.ndarray      # (H, dof)
    velocities: np.ndarray     # (H, dof)
    accelerations: np.ndarray  # (H, dof)


def rollout_batch(initial: JointState, accels: np.ndarray, dt: float,
                  acc_limits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Semi-implicit Euler for (N, H, dof) acceleration sequences.

    v_t = v_{t-1} + a_t dt, then p_t = p_{t-1} + v_t dt.  Accelerations are
    pre-clamped to the box limits; positions and velocities are left free
    (violations are costed, not clipped).
    """
    acc = np.clip(accels, -acc_limits, acc_limits)
    vel = initial.velocity + np.cumsum(acc, axis=-2) * dt
    pos = initial.position + np.cumsum(vel, axis=-2) * dt
    return pos, vel, acc


def rollout(initial: JointState, accels: np.ndarray, dt: float,
            acc_limits: np.ndarray) -> Trajectory:
    """Single-sequence rollout (H, dof)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    pos, vel, acc = rollout_batch(initial, np.asarray(accels, dtype=float)[None], dt,
                                  np.asarray(acc_limits, dtype=float))
    return Trajectory(pos[0], vel[0], acc[0])


def sample_particles(dist: ControlDistribution, cfg: RolloutConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """(N, H, dof) acceleration particles: mean + temporally smoothed noise.

    Particle 0 is always the unperturbed mean (elite retention).
    """
    H, dof = dist.mean.shape
    noise = rng.normal(size=(cfg.particles, H, dof)) * dist.noise_std
    kernel = np.asarray(cfg.smoothing_kernel, dtype=float)
    if kernel.size > 1:
        noise = convolve1d(noise, kernel, axis=1, mode="nearest")
    particles = dist.mean[None] + noise
    particles[0] = dist.mean
    return particles


def update_distribution(dist: ControlDistribution, particles: np.ndarray,
                        costs: np.ndarray) -> ControlDistribution:
    """Exponentially weighted mean update; the sampling covariance is fixed.

    The temperature scales with the batch cost spread (w_i proportional to
    exp(-(c_i - min c) / (beta * (max c - min c)))), so beta is dimensionless
    and selection pressure tracks the cost landscape through the whole task.
    Weights are invariant to adding a constant to every cost; equal costs
    give the plain particle average; beta -> 0 selects the argmin.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 1 or costs.shape[0] < 2:
        raise ValueError("need costs for at least 2 particles")
    finite = np.isfinite(costs)
    if not finite.any():
        raise ValueError("all particle costs are non-finite")
    cmin = costs[finite].min()
    span = costs[finite].max() - cmin
    shifted = np.where(finite, costs - cmin, np.inf)
    if span > 0.0:
        w = np.exp(-shifted / (dist.beta * span))
    else:
        w = np.where(finite, 1.0, 0.0)
    w /= w.sum()
    mean = np.einsum("n,nhd->hd", w, particles)
    return ControlDistribution(mean, dist.noise_std, dist.beta)


@dataclass
class MpcDiagnostics:
    """Per-tick solver telemetry."""

    tick: int
    min_cost: float
    mean_cost: float
    chosen_grasp: int
    ee_pose: Pose
    ee_speed: float
    plan_cost: float

    CSV_HEADER = "tick,min_cost,mean_cost,chosen_grasp,ee_x,ee_y,ee_z,ee_speed"

    def csv_row(self) -> str:
        t = self.ee_pose.translation
        return (f"{self.tick},{self.min_cost:.17g},{self.mean_cost:.17g},"
                f"{self.chosen_grasp},{t[0]:.17g},{t[1]:.17g},{t[2]:.17g},"
                f"{self.ee_speed:.17g}")


def solve_step(model: RobotModel, state: JointState, goal: GoalSpec,
               scene: SceneModel | None, weights: CostWeights,
               dist: ControlDistribution, cfg: RolloutConfig,
               rng: np.random.Generator, tick: int = 0
               ) -> tuple[np.ndarray, ControlDistribution, MpcDiagnostics]:
    """One control tick: optimize, return the first-step command, shift.

    The command is the first acceleration of the updated mean; the returned
    distribution is already shifted for the next tick.
    """
    min_cost = mean_cost = np.inf
    for _ in range(cfg.iterations_per_tick):
        particles = sample_particles(dist, cfg, rng)
        pos, vel, acc = rollout_batch(state, particles, cfg.dt, model.acc_limits)
        costs, _ = rollout_costs(model, pos, vel, goal, scene, weights, cfg.dt)
        dist = update_distribution(dist, acc, costs)
        min_cost = float(costs.min())
        mean_cost = float(costs.mean())

    command = np.clip(dist.mean[0], -model.acc_limits, model.acc_limits)

    # Telemetry from the updated-mean rollout and the measured state.
    mpos, mvel, _ = rollout_batch(state, dist.mean[None], cfg.dt, model.acc_limits)
    plan_cost, info = rollout_costs(model, mpos, mvel, goal, scene, weights, cfg.dt)
    kin = batch_fk(model, state.position[None], need_link_R=False)
    J = batch_jacobian(model, kin)[0]
    speed = float(np.linalg.norm(J[3:] @ state.velocity))
    diag = MpcDiagnostics(tick=tick, min_cost=min_cost, mean_cost=mean_cost,
                          chosen_grasp=int(info["final_goal_idx"][0]),
                          ee_pose=Pose(kin.ee_R[0], kin.ee_t[0]),
                          ee_speed=speed, plan_cost=float(plan_cost[0]))
    return command, dist.shifted(), diag


class MpcController:
    """Stateful wrapper that owns the distribution, RNG, and tick counter."""

    def __init__(self, model: RobotModel, weights: CostWeights | None = None,
                 cfg: RolloutConfig | None = None, scene: SceneModel | None = None):
        self.model = model
        self.weights = weights or CostWeights()
        self.cfg = cfg or RolloutConfig()
        self.scene = scene
        self.reset()

    def reset(self) -> None:
        self.dist = ControlDistribution.zeros(self.cfg.horizon, self.model.dof,
                                              noise_std=self.cfg.noise_std,
                                              beta=self.cfg.beta)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.tick = 0

    def step(self, state: JointState, goal: GoalSpec,
             scene: SceneModel | None = None) -> tuple[np.ndarray, MpcDiagnostics]:
        command, self.dist, diag = solve_step(
            self.model, state, goal, scene if scene is not None else self.scene,
            self.weights, self.dist, self.cfg, self.rng, tick=self.tick)
        self.tick += 1
        return command, diag


# ---------------------------------------------------------------------------
# Solver configuration files
# ---------------------------------------------------------------------------

def solver_config_from_dict(cfg: dict) -> tuple[RolloutConfig, CostWeights]:
    r = cfg.get("rollout", {})
    w = cfg.get("weights", {})
    rollout_cfg = RolloutConfig(
        horizon=int(r.get("horizon", 30)),
        dt=float(r.get("dt", 1.0 / 15.0)),
        particles=int(r.get("particles", 256)),
        iterations_per_tick=int(r.get("iterations_per_tick", 1)),
        smoothing_kernel=tuple(r.get("smoothing_kernel", (0.25, 0.5, 0.25))),
        noise_std=float(r.get("noise_std", 1.0)),
        beta=float(r.get("beta", 0.07)),
        seed=int(r.get("seed", 0)),
    )
    weights = CostWeights(**{k: float(v) for k, v in w.items()})
    return rollout_cfg, weights


def load_solver_config(path: str | Path) -> tuple[RolloutConfig, CostWeights]:
    with open(path, "rb") as f:
        return solver_config_from_dict(tomllib.load(f))
