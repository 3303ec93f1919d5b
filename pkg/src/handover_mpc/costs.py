"""Trajectory-optimization cost terms and constraint penalties.

Implements the full objective: goal / goal-set pose cost, straight-line
cost, signed-distance collision terms (table cuboid, hand sphere, camera
occlusion capsule, self collision), manipulability and stop costs, and the
joint box penalties.  Sign convention for signed distances: negative when
clear, positive when penetrating.

Everything is available both as scalar operations and as a batched rollout
evaluator (``rollout_costs``) used by the sampling-based solver.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fastpath
from .geometry import Pose
from .grasps import GraspSet
from .kinematics import (RobotModel, batch_fk, batch_jacobian,
                         batch_sphere_centers, forward_kinematics, jacobian)
from .manipulability import batch_psd_det

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPEED_GUARD = 1e-6  # below this speed/distance the straight-line cost is 0


# ---------------------------------------------------------------------------
# Shapes and scene
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))


@dataclass(frozen=True)
class Cuboid:
    """Axis-aligned box given by center and half extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        he = np.asarray(self.half_extents, dtype=float).reshape(3)
        if (he <= 0).any():
            raise ValueError("cuboid half extents must be > 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "half_extents", he)


@dataclass
class SceneModel:
    """Static obstacles: table, human hand, and the camera-to-hand view line."""

    table: Cuboid
    hand: Sphere | None = None
    camera_origin: np.ndarray = field(default_factory=lambda: np.array([0.9, -0.7, 0.75]))
    occlusion_capsule_radius: float = 0.06

    def __post_init__(self):
        self.camera_origin = np.asarray(self.camera_origin, dtype=float).reshape(3)
        if self.occlusion_capsule_radius <= 0:
            raise ValueError("occlusion capsule radius must be > 0")

    def with_hand(self, center) -> "SceneModel":
        hand = Sphere(center, self.hand.radius if self.hand else 0.06)
        return SceneModel(self.table, hand, self.camera_origin, self.occlusion_capsule_radius)


def scene_from_dict(cfg: dict) -> SceneModel:
    table = Cuboid(cfg["table"]["center"], cfg["table"]["half_extents"])
    hand = None
    if "hand" in cfg:
        hand = Sphere(cfg["hand"]["center"], float(cfg["hand"]["radius"]))
    cam = cfg.get("camera", {})
    return SceneModel(table, hand,
                      camera_origin=np.asarray(cam.get("origin", [0.9, -0.7, 0.75]), dtype=float),
                      occlusion_capsule_radius=float(cam.get("occlusion_capsule_radius", 0.06)))


def load_scene(path: str | Path) -> SceneModel:
    with open(path, "rb") as f:
        return scene_from_dict(tomllib.load(f))


@dataclass
class CostWeights:
    """Objective weights; constraints enter as hinge-squared penalties."""

    constraint_weight: float = 5000.0
    alpha1: float = 70.0
    alpha2: float = 220.0
    straight_line: float = 30.0
    manip_weight: float = 10.0
    stop_weight: float = 50.0
    manip_threshold: float = 0.03
    joint_goal_weight: float = 100.0

    def __post_init__(self):
        for name in ("constraint_weight", "alpha1", "alpha2", "straight_line",
                     "manip_weight", "stop_weight", "manip_threshold", "joint_goal_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


# ---------------------------------------------------------------------------
# Goal specifications
# ---------------------------------------------------------------------------

class PoseGoal:
    """Reach the closest member of a set of end-effector poses."""

    def __init__(self, poses: list[Pose] | GraspSet):
        if isinstance(poses, GraspSet):
            poses = poses.poses
        if len(poses) == 0:
            raise ValueError("goal set must be non-empty")
        self.poses = list(poses)
        self.R = np.stack([p.rotation for p in self.poses])
        self.t = np.stack([p.translation for p in self.poses])

    def __len__(self):
        return len(self.poses)


@dataclass
class JointGoal:
    """Drive the joint configuration to a target (L2 loss)."""

    config: np.ndarray

    def __post_init__(self):
        self.config = np.asarray(self.config, dtype=float).ravel()


GoalSpec = PoseGoal | JointGoal


# ---------------------------------------------------------------------------
# Pose and goal-set costs
# ---------------------------------------------------------------------------

def pose_distance(x_t: Pose, x_g: Pose, alpha1: float, alpha2: float) -> float:
    """alpha1 ||I - Rg^T Rt||_F + alpha2 ||Rg^T (dt - dg)||_2."""
    rot = np.linalg.norm(np.eye(3) - x_g.rotation.T @ x_t.rotation)
    trans = np.linalg.norm(x_g.rotation.T @ (x_t.translation - x_g.translation))
    return float(alpha1 * rot + alpha2 * trans)


def pose_distance_batch(Rt: np.ndarray, tt: np.ndarray, Rg: np.ndarray, tg: np.ndarray,
                        alpha1: float, alpha2: float) -> np.ndarray:
    """(B, G) pose distances; ||I - Q||_F = sqrt(6 - 2 tr Q) for Q in SO(3),
    and the rotated translation residual has the same norm as the plain one."""
    tr = np.einsum("bij,gij->bg", Rt, Rg)
    rot = np.sqrt(np.maximum(6.0 - 2.0 * tr, 0.0))
    diff = tt[:, None, :] - tg[None, :, :]
    trans = np.sqrt((diff * diff).sum(axis=2))
    return alpha1 * rot + alpha2 * trans


def goal_set_cost_pose(pose: Pose, grasps: GraspSet | PoseGoal,
                       alpha1: float, alpha2: float) -> tuple[float, int]:
    """Minimum pose distance to the set and the argmin index (lowest on ties)."""
    goal = grasps if isinstance(grasps, PoseGoal) else PoseGoal(grasps)
    d = pose_distance_batch(pose.rotation[None], pose.translation[None],
                            goal.R, goal.t, alpha1, alpha2)[0]
    idx = int(d.argmin())
    return float(d[idx]), idx


def goal_set_cost(model: RobotModel, q, grasps: GraspSet | PoseGoal,
                  alpha1: float, alpha2: float) -> tuple[float, int]:
    """Goal-set cost at configuration ``q`` (FK computed internally)."""
    return goal_set_cost_pose(forward_kinematics(model, q), grasps, alpha1, alpha2)


def straight_line_cost(model: RobotModel, q, qd, goal_position) -> float:
    """1 - cos(angle between end-effector velocity and the goal direction).

    Zero below the speed/distance guard: the unit vectors are undefined at
    rest and the robot should not be penalized for having no direction.
    """
    J = jacobian(model, q)
    v = J[3:] @ np.asarray(qd, dtype=float)
    pose = forward_kinematics(model, q)
    d = np.asarray(goal_position, dtype=float) - pose.translation
    nv, nd = np.linalg.norm(v), np.linalg.norm(d)
    if nv < SPEED_GUARD or nd < SPEED_GUARD:
        return 0.0
    return float(1.0 - (v / nv) @ (d / nd))


# ---------------------------------------------------------------------------
# Signed distances (negative = clear, positive = penetrating)
# ---------------------------------------------------------------------------

def point_box_distance(points: np.ndarray, box: Cuboid) -> np.ndarray:
    """Signed point-to-box-surface distance (negative inside), vectorized."""
    p = np.atleast_2d(points) - box.center
    q = np.abs(p) - box.half_extents
    outside = np.sqrt((np.maximum(q, 0.0) ** 2).sum(axis=-1))
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def point_segment_distance(points: np.ndarray, p0, p1) -> np.ndarray:
    """Distance from points to the segment p0-p1 (degenerates to a point)."""
    p0 = np.asarray(p0, dtype=float).reshape(3)
    seg = np.asarray(p1, dtype=float).reshape(3) - p0
    pts = np.atleast_2d(points) - p0
    denom = float(seg @ seg)
    if denom < 1e-300:
        return np.linalg.norm(pts, axis=-1)
    s = np.clip(pts @ seg / denom, 0.0, 1.0)
    return np.linalg.norm(pts - s[..., None] * seg, axis=-1)


def sdf_sphere_cuboid(sphere: Sphere, cuboid: Cuboid) -> float:
    """-(separation); positive means penetration depth."""
    return float(-(point_box_distance(sphere.center[None], cuboid)[0] - sphere.radius))


def sdf_sphere_sphere(a: Sphere, b: Sphere) -> float:
    return float(-(np.linalg.norm(a.center - b.center) - a.radius - b.radius))


def sdf_sphere_capsule(sphere: Sphere, p0, p1, capsule_radius: float) -> float:
    d = point_segment_distance(sphere.center[None], p0, p1)[0]
    return float(-(d - sphere.radius - capsule_radius))


def _batch_environment_sdf(centers: np.ndarray, radii: np.ndarray,
                           scene: SceneModel) -> np.ndarray:
    """(B,) max signed distance of robot spheres (B, S, 3) to the scene.

    The max signed distance is the negated minimum separation over all
    sphere-shape pairs.
    """
    B, S, _ = centers.shape
    flat = centers.reshape(B * S, 3)
    sep = (point_box_distance(flat, scene.table).reshape(B, S) - radii).min(axis=1)
    if scene.hand is not None:
        d = np.linalg.norm(flat - scene.hand.center, axis=-1).reshape(B, S)
        sep = np.minimum(sep, (d - scene.hand.radius - radii).min(axis=1))
        d = point_segment_distance(flat, scene.camera_origin, scene.hand.center).reshape(B, S)
        occ = (d - scene.occlusion_capsule_radius - radii).min(axis=1)
        sep = np.minimum(sep, occ)
    return -sep


def environment_collision(model: RobotModel, q, scene: SceneModel) -> float:
    """S_e: max signed distance over robot spheres x scene shapes."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    centers = batch_sphere_centers(model, kin)
    return float(_batch_environment_sdf(centers, model.sphere_radii, scene)[0])


def _batch_self_sdf(model: RobotModel, centers: np.ndarray) -> np.ndarray:
    if len(model._pair_a) == 0:
        return np.full(centers.shape[0], -np.inf)
    diff = centers[:, model._pair_a, :] - centers[:, model._pair_b, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    return -(d - model._pair_radius_sum).min(axis=1)


def self_collision(model: RobotModel, q) -> float:
    """S_r: max signed distance over non-exempt link sphere pairs."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    centers = batch_sphere_centers(model, kin)
    return float(_batch_self_sdf(model, centers)[0])


# ---------------------------------------------------------------------------
# Auxiliary costs
# ---------------------------------------------------------------------------

def manip_cost(model: RobotModel, q, m0: float) -> float:
    """max(0, m0 - sqrt(det(J J^T))): penalizes approach to singularity."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :], need_link_R=False)
    J = batch_jacobian(model, kin)[:, list(model.task_rows), :]
    det = batch_psd_det(np.matmul(J, J.transpose(0, 2, 1)))[0]
    return float(max(0.0, m0 - np.sqrt(max(det, 0.0))))


def stop_cost(vel_seq: np.ndarray, acc_limits: np.ndarray, dt: float) -> float:
    """Penalty on velocities that remaining-horizon braking cannot cancel."""
    v = np.atleast_2d(np.asarray(vel_seq, dtype=float))
    H = v.shape[0]
    if H < 1:
        raise ValueError("horizon must be >= 1")
    remaining = (H - 1 - np.arange(H))[:, None] * dt  # seconds of braking left
    excess = np.maximum(np.abs(v) - np.asarray(acc_limits) * remaining, 0.0)
    return float((excess * excess).sum())


# ---------------------------------------------------------------------------
# Batched rollout evaluation
# ---------------------------------------------------------------------------

def _rollout_terms_numpy(model, Q, V, goal, scene, weights):
    """Vectorized-numpy evaluation of the per-configuration cost ingredients."""
    B = Q.shape[0]
    needs_spheres = scene is not None or len(model._pair_a) > 0
    kin = batch_fk(model, Q, need_link_R=needs_spheres)
    J = batch_jacobian(model, kin)
    out = {"ee": kin.ee_t, "goal_min": np.zeros(B),
           "goal_idx": np.full(B, -1, dtype=np.int64),
           "sl": np.zeros(B), "manip": np.zeros(B),
           "se": np.full(B, -np.inf), "sr": np.full(B, -np.inf)}

    if isinstance(goal, PoseGoal):
        d = pose_distance_batch(kin.ee_R, kin.ee_t, goal.R, goal.t,
                                weights.alpha1, weights.alpha2)
        out["goal_idx"] = d.argmin(axis=1)
        out["goal_min"] = d[np.arange(B), out["goal_idx"]]
        if weights.straight_line > 0.0:
            v = np.einsum("bij,bj->bi", J[:, 3:, :], V)
            tgt = goal.t[out["goal_idx"]] - kin.ee_t
            nv = np.linalg.norm(v, axis=1)
            nd = np.linalg.norm(tgt, axis=1)
            ok = (nv > SPEED_GUARD) & (nd > SPEED_GUARD)
            cos = np.zeros(B)
            denom = np.where(ok, nv * nd, 1.0)
            cos[ok] = ((v * tgt).sum(axis=1) / denom)[ok]
            out["sl"] = np.where(ok, 1.0 - cos, 0.0)

    if weights.manip_weight > 0.0:
        Jt = J[:, list(model.task_rows), :]
        det = batch_psd_det(np.matmul(Jt, Jt.transpose(0, 2, 1)))
        out["manip"] = np.maximum(
            weights.manip_threshold - np.sqrt(np.maximum(det, 0.0)), 0.0)

    if needs_spheres and weights.constraint_weight > 0.0:
        centers = batch_sphere_centers(model, kin)
        if scene is not None:
            out["se"] = _batch_environment_sdf(centers, model.sphere_radii, scene)
        if len(model._pair_a) > 0:
            out["sr"] = _batch_self_sdf(model, centers)
    return out


def rollout_costs(model: RobotModel, positions: np.ndarray, velocities: np.ndarray,
                  goal: GoalSpec, scene: SceneModel | None, weights: CostWeights,
                  dt: float, detail: bool = False):
    """Total cost of N rollouts of shape (N, H, dof).

    Returns (costs (N,), info) where info carries the goal-set argmin at the
    final step of each rollout (-1 for joint goals) and, when ``detail`` is
    set, per-step end-effector positions and goal argmins.
    """
    N, H, dof = positions.shape
    B = N * H
    Q = np.ascontiguousarray(positions.reshape(B, dof))
    V = np.ascontiguousarray(velocities.reshape(B, dof))

    pose_goal = isinstance(goal, PoseGoal)
    if fastpath.HAVE_NUMBA:
        gR = goal.R if pose_goal else np.zeros((0, 3, 3))
        gt = goal.t if pose_goal else np.zeros((0, 3))
        terms = fastpath.rollout_terms(
            model, Q, V, gR, gt,
            scene if weights.constraint_weight > 0.0 else None,
            weights.alpha1, weights.alpha2, weights.manip_threshold,
            weights.manip_weight > 0.0,
            pose_goal and weights.straight_line > 0.0)
    else:
        terms = _rollout_terms_numpy(model, Q, V, goal, scene, weights)

    per_step = terms["goal_min"] + weights.straight_line * terms["sl"] \
        + weights.manip_weight * terms["manip"]
    if not pose_goal:
        diff = Q - goal.config
        per_step = per_step + weights.joint_goal_weight * (diff * diff).sum(axis=1)

    cw = weights.constraint_weight
    if cw > 0.0:
        if scene is not None:
            per_step = per_step + cw * np.maximum(terms["se"], 0.0) ** 2
        if len(model._pair_a) > 0:
            per_step = per_step + cw * np.maximum(terms["sr"], 0.0) ** 2
        pos_viol = (np.maximum(Q - model.limit_hi, 0.0)
                    + np.maximum(model.limit_lo - Q, 0.0))
        vel_viol = np.maximum(np.abs(V) - model.vel_limits, 0.0)
        per_step = per_step + cw * ((pos_viol * pos_viol).sum(axis=1)
                                    + (vel_viol * vel_viol).sum(axis=1))

    costs = per_step.reshape(N, H).sum(axis=1)

    if weights.stop_weight > 0.0:
        remaining = (H - 1 - np.arange(H))[None, :, None] * dt
        excess = np.maximum(np.abs(velocities) - model.acc_limits * remaining, 0.0)
        costs = costs + weights.stop_weight * (excess * excess).sum(axis=(1, 2))

    goal_idx = terms["goal_idx"]
    info = {"final_goal_idx": goal_idx.reshape(N, H)[:, -1].copy()}
    if detail:
        info["ee_positions"] = terms["ee"].reshape(N, H, 3)
        info["goal_idx"] = goal_idx.reshape(N, H)
        info["per_step_cost"] = per_step.reshape(N, H)
    return costs, info


def total_rollout_cost(model: RobotModel, positions, velocities,
                       goal: GoalSpec | GraspSet, scene: SceneModel | None,
                       weights: CostWeights, dt: float) -> float:
    """Objective value of one trajectory (H, dof)."""
    if isinstance(goal, GraspSet):
        goal = PoseGoal(goal)
    positions = np.asarray(positions, dtype=float)[None]
    velocities = np.asarray(velocities, dtype=float)[None]
    costs, _ = rollout_costs(model, positions, velocities, goal, scene, weights, dt)
    return float(costs[0])
