"""Manipulability scoring and reachability dataset generation.

The manipulability of a configuration is det(J J^T) over the robot's task
rows; the joint-limit-aware variant folds a diagonal weight matrix W into the
product, det(J W J^T), where W^ii shrinks to zero as joint i approaches a
limit.  A grasp pose is scored by the best weighted manipulability over its
IK solutions, or by the negative twist distance to the closest achievable
pose when it is unreachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import DEFAULT_ROT_WEIGHT, Pose
from .ik import DEFAULT_TOLERANCE, dls_solve_batch, ik_solve
from .kinematics import RobotModel, batch_fk, batch_jacobian

# Workspace sampling box for the 7-dof chain, meters: x, y, z bounds.
DEFAULT_WORKSPACE_BOX = ((-0.2, 1.0), (-0.8, 0.8), (0.0, 1.2))

DATASET_HEADER = "x,y,z,roll,pitch,yaw,score"


@dataclass
class ManipConfig:
    """Knobs for grasp scoring: IK restarts and the twist-distance mix weight."""

    ik_seeds: int = 16
    rot_weight: float = DEFAULT_ROT_WEIGHT
    position_only: bool = False
    ik_seed: int = 0

    def __post_init__(self):
        if self.ik_seeds < 1:
            raise ValueError("ik_seeds must be >= 1")


@dataclass
class GraspLabel:
    """A 6-DoF pose (x, y, z, roll, pitch, yaw) and its manipulability score."""

    pose6: np.ndarray
    score: float


def batch_psd_det(A: np.ndarray) -> np.ndarray:
    """Determinants of a stack of symmetric PSD matrices (K, m, m).

    Gaussian elimination without pivoting (valid for PSD input); pivots are
    clamped at zero so rank-deficient matrices return 0 rather than noise.
    """
    A = np.array(A, dtype=float, copy=True)
    K, m, _ = A.shape
    det = np.ones(K)
    for i in range(m):
        piv = np.maximum(A[:, i, i], 0.0)
        det = det * piv
        if i + 1 == m:
            break
        safe = np.where(piv > 0.0, piv, np.inf)
        factors = A[:, i + 1:, i] / safe[:, None]
        A[:, i + 1:, i + 1:] -= factors[:, :, None] * A[:, None, i, i + 1:]
    return det


def task_jacobian(model: RobotModel, q) -> np.ndarray:
    """Jacobian restricted to the robot's task rows."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    return batch_jacobian(model, kin)[0][list(model.task_rows), :]


def config_manipulability(model: RobotModel, q) -> float:
    """det(J J^T) over the task rows; zero exactly at row-rank deficiency."""
    J = task_jacobian(model, q)
    return float(batch_psd_det((J @ J.T)[None])[0])


def joint_limit_penalty(theta: float, lo: float, hi: float) -> float:
    """Joint-limit performance metric: 0 at mid-range, unbounded at the limits.

    ((hi-lo)^2 (2 theta - lo - hi)) / (4 (hi-theta)^2 (theta-lo)^2); signed,
    antisymmetric about the midpoint.
    """
    if not lo < theta < hi:
        raise ValueError("theta at or beyond a joint limit; the limit weight is 0 there")
    span = hi - lo
    return (span * span * (2.0 * theta - lo - hi)) / (4.0 * (hi - theta) ** 2 * (theta - lo) ** 2)


def _batch_limit_weights(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """Diagonal entries of W for configs (B, dof); 0 at or beyond limits."""
    lo, hi = model.limit_lo, model.limit_hi
    inside = (Q > lo) & (Q < hi)
    span2 = (hi - lo) ** 2
    num = span2 * (2.0 * Q - lo - hi)
    den = 4.0 * (hi - Q) ** 2 * (Q - lo) ** 2
    P = np.where(inside, num / np.where(inside, den, 1.0), np.inf)
    return np.where(inside, 1.0 / np.sqrt(1.0 + np.abs(P)), 0.0)


def joint_limit_weight_matrix(model: RobotModel, q) -> np.ndarray:
    """dof x dof diagonal W with W^ii = 1/sqrt(1 + |P(theta_i)|), in (0, 1]."""
    w = _batch_limit_weights(model, np.asarray(q, dtype=float)[None, :])[0]
    return np.diag(w)


def weighted_manipulability(model: RobotModel, q) -> float:
    """det(J W J^T) over the task rows."""
    q = np.asarray(q, dtype=float)
    J = task_jacobian(model, q)
    w = _batch_limit_weights(model, q[None, :])[0]
    return float(batch_psd_det(((J * w) @ J.T)[None])[0])


def _batch_weighted_manipulability(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    kin = batch_fk(model, Q, need_link_R=False)
    J = batch_jacobian(model, kin)[:, list(model.task_rows), :]
    w = _batch_limit_weights(model, Q)
    JW = J * w[:, None, :]
    return batch_psd_det(np.matmul(JW, J.transpose(0, 2, 1)))


def grasp_manipulability(model: RobotModel, grasp: Pose, cfg: ManipConfig | None = None) -> float:
    """Score of a grasp pose: best weighted manipulability over IK solutions,
    or the negative twist distance to the closest achievable pose."""
    cfg = cfg or ManipConfig()
    sols = ik_solve(model, grasp, seeds=cfg.ik_seeds, seed=cfg.ik_seed,
                    position_only=cfg.position_only)
    converged = [s for s in sols if s.converged]
    if converged:
        scores = _batch_weighted_manipulability(model, np.stack([s.config for s in converged]))
        return float(scores.max())
    best = sols[0]
    from .geometry import twist_distance
    achieved = _fk_pose(model, best.config)
    return -twist_distance(grasp, achieved, rot_weight=cfg.rot_weight)


def _fk_pose(model: RobotModel, q) -> Pose:
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    return Pose(kin.ee_R[0], kin.ee_t[0])


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _sample_chunk(rng_seeds, lo, hi, ik_seeds, dof, limit_lo, limit_hi):
    """Per-sample deterministic draws: position, orientation quat, IK starts."""
    n = len(rng_seeds)
    pos = np.empty((n, 3))
    quat = np.empty((n, 4))
    starts = np.empty((n, ik_seeds, dof))
    for i, ss in enumerate(rng_seeds):
        rng = np.random.default_rng(ss)
        pos[i] = rng.uniform(lo, hi)
        q = rng.normal(size=4)
        quat[i] = q / np.linalg.norm(q)
        starts[i] = rng.uniform(limit_lo, limit_hi, size=(ik_seeds, dof))
    return pos, quat, starts


def batch_grasp_scores(model: RobotModel, target_R: np.ndarray, target_t: np.ndarray,
                       starts: np.ndarray, rot_weight: float = DEFAULT_ROT_WEIGHT) -> np.ndarray:
    """Scores for n grasp poses given per-sample IK starts (n, S, dof)."""
    n, S, dof = starts.shape
    R_rep = np.repeat(target_R, S, axis=0)
    t_rep = np.repeat(target_t, S, axis=0)
    configs, converged, errs = dls_solve_batch(
        model, starts.reshape(n * S, dof), R_rep, t_rep)
    conv = converged.reshape(n, S)
    configs = configs.reshape(n, S, dof)
    errs = errs.reshape(n, S, 6)

    scores = np.empty(n)
    any_conv = conv.any(axis=1)

    if any_conv.any():
        idx = np.flatnonzero(any_conv)
        flat_cfgs = []
        owner = []
        for i in idx:
            for s in np.flatnonzero(conv[i]):
                flat_cfgs.append(configs[i, s])
                owner.append(i)
        vals = _batch_weighted_manipulability(model, np.stack(flat_cfgs))
        best = np.full(n, -np.inf)
        np.maximum.at(best, np.array(owner), vals)
        scores[idx] = best[idx]

    if (~any_conv).any():
        idx = np.flatnonzero(~any_conv)
        norms = np.linalg.norm(errs[idx], axis=2)
        pick = norms.argmin(axis=1)
        best_cfg = configs[idx, pick]
        kin = batch_fk(model, best_cfg)
        rel = np.matmul(target_R[idx].transpose(0, 2, 1), kin.ee_R)
        ang = Rotation.from_matrix(rel).as_rotvec()
        dt = kin.ee_t - target_t[idx]
        scores[idx] = -np.sqrt((rot_weight * rot_weight) * (ang * ang).sum(axis=1)
                               + (dt * dt).sum(axis=1))
    return scores


def generate_reachability_dataset(model: RobotModel, n: int, seed: int, *,
                                  workspace=DEFAULT_WORKSPACE_BOX,
                                  cfg: ManipConfig | None = None,
                                  chunk: int = 2048) -> list[GraspLabel]:
    """n uniformly sampled poses in the workspace box, labeled by grasp
    manipulability.  Deterministic given ``seed`` and independent of ``chunk``
    (every sample derives its own RNG stream from (seed, index))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or ManipConfig()
    box = np.asarray(workspace, dtype=float)
    lo, hi = box[:, 0], box[:, 1]

    rows = np.empty((n, 7))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        seqs = [np.random.SeedSequence(entropy=(seed, i)) for i in range(start, stop)]
        pos, quat, starts = _sample_chunk(seqs, lo, hi, cfg.ik_seeds, model.dof,
                                          model.limit_lo, model.limit_hi)
        rot = Rotation.from_quat(quat)
        R = rot.as_matrix()
        scores = batch_grasp_scores(model, R, pos, starts, rot_weight=cfg.rot_weight)
        ypr = rot.as_euler("ZYX")  # yaw, pitch, roll
        rows[start:stop, :3] = pos
        rows[start:stop, 3] = ypr[:, 2]
        rows[start:stop, 4] = ypr[:, 1]
        rows[start:stop, 5] = ypr[:, 0]
        rows[start:stop, 6] = scores
    return [GraspLabel(rows[i, :6].copy(), float(rows[i, 6])) for i in range(n)]


def labels_to_array(labels) -> np.ndarray:
    """(n, 7) array [x, y, z, roll, pitch, yaw, score] from labels or array."""
    if isinstance(labels, np.ndarray):
        return labels
    return np.array([[*l.pose6, l.score] for l in labels])


def save_dataset_csv(path, labels) -> int:
    arr = labels_to_array(labels)
    with open(path, "w") as f:
        f.write(DATASET_HEADER + "\n")
        for row in arr:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return arr.shape[0]


def load_dataset_csv(path) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != 7:
        raise ValueError(f"expected 7 columns ({DATASET_HEADER}), got {arr.shape[1]}")
    return arr
