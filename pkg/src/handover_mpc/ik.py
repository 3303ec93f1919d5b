"""Iterative inverse kinematics via damped least squares.

Runs many random restarts in one vectorized batch.  Non-convergence is data,
not an error: the best-residual configuration is always available so callers
can reason about the closest achievable end-effector pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose
from .kinematics import RobotModel, batch_fk, batch_jacobian

DEFAULT_DAMPING = 0.05
DEFAULT_MAX_ITERS = 200
DEFAULT_TOLERANCE = 1e-4
# Converged restarts keep iterating down to this residual so solutions match
# closed-form branch configurations to high precision; convergence itself is
# still judged against DEFAULT_TOLERANCE.
POLISH_TOLERANCE = 1e-11
# Restarts whose best residual stops improving for this many iterations are
# frozen; DLS stalls quickly at the workspace boundary.
STALL_PATIENCE = 25
DEDUP_GAP = 0.05  # rad, joint-space L-inf
MAX_STEP = 0.5    # rad, per-iteration step clip


@dataclass
class IkSolution:
    """One restart outcome: configuration, convergence flag, residual twist."""

    config: np.ndarray
    converged: bool
    residual_twist: np.ndarray

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual_twist))


def _pose_errors(kin_R, kin_t, target_R, target_t, position_only):
    """Twist errors (B, 6) from current to target, rows (w; v)."""
    B = kin_t.shape[0]
    err = np.zeros((B, 6))
    err[:, 3:] = target_t - kin_t
    if not position_only:
        rel = np.matmul(np.broadcast_to(target_R, (B, 3, 3)), kin_R.transpose(0, 2, 1))
        err[:, :3] = Rotation.from_matrix(rel).as_rotvec()
    return err


def dls_solve_batch(model: RobotModel, starts: np.ndarray,
                    target_R: np.ndarray, target_t: np.ndarray, *,
                    position_only: bool = False,
                    damping: float = DEFAULT_DAMPING,
                    max_iters: int = DEFAULT_MAX_ITERS,
                    tol: float = DEFAULT_TOLERANCE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Damped-least-squares iteration from each row of ``starts``.

    ``target_R``/``target_t`` may be a single pose or one pose per restart
    (shapes (3, 3)/(3,) or (B, 3, 3)/(B, 3)).  Returns (configs, converged,
    residual_twists) where configs holds the best-residual iterate seen per
    restart.
    """
    Q = model.clamp_to_limits(np.atleast_2d(np.asarray(starts, dtype=float)).copy())
    B = Q.shape[0]
    target_R = np.broadcast_to(np.asarray(target_R, dtype=float), (B, 3, 3))
    target_t = np.broadcast_to(np.asarray(target_t, dtype=float), (B, 3))
    rows = slice(3, 6) if position_only else slice(0, 6)
    nrows = 3 if position_only else 6
    lam2 = damping * damping * np.eye(nrows)

    best_Q = Q.copy()
    best_err = np.full((B, 6), np.inf)
    best_norm = np.full(B, np.inf)
    since_improved = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)

    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        kin = batch_fk(model, Q[idx], need_link_R=False)
        err = _pose_errors(kin.ee_R, kin.ee_t, target_R[idx], target_t[idx], position_only)
        norm = np.linalg.norm(err, axis=1)

        improved = norm < best_norm[idx] - 1e-12
        imp_idx = idx[improved]
        best_Q[imp_idx] = Q[imp_idx]
        best_err[imp_idx] = err[improved]
        best_norm[imp_idx] = norm[improved]
        since_improved[idx] = np.where(improved, 0, since_improved[idx] + 1)

        done = (norm < POLISH_TOLERANCE) | (since_improved[idx] >= STALL_PATIENCE)
        active[idx[done]] = False
        live = ~done
        idx = idx[live]
        if idx.size == 0:
            continue

        J = batch_jacobian(model, kin)[live][:, rows, :]
        e = err[live][:, rows]
        JJt = np.matmul(J, J.transpose(0, 2, 1)) + lam2
        y = np.linalg.solve(JJt, e[:, :, None])
        dq = np.matmul(J.transpose(0, 2, 1), y)[:, :, 0]
        step = np.abs(dq).max(axis=1, keepdims=True)
        dq = np.where(step > MAX_STEP, dq * (MAX_STEP / np.maximum(step, 1e-300)), dq)
        Q[idx] = model.clamp_to_limits(Q[idx] + dq)

    converged = best_norm < tol
    return best_Q, converged, best_err


def ik_solve(model: RobotModel, target: Pose, seeds: int = 16, *,
             seed: int = 0,
             position_only: bool = False,
             damping: float = DEFAULT_DAMPING,
             max_iters: int = DEFAULT_MAX_ITERS,
             tol: float = DEFAULT_TOLERANCE) -> list[IkSolution]:
    """Solve IK from ``seeds`` uniform-random restarts inside the joint limits.

    Converged solutions are deduplicated (joint-space L-inf gap > 0.05 rad);
    if none converge, the single best-residual solution is returned flagged
    unconverged.
    """
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    rng = np.random.default_rng(seed)
    starts = rng.uniform(model.limit_lo, model.limit_hi, size=(seeds, model.dof))
    configs, converged, errs = dls_solve_batch(
        model, starts, target.rotation, target.translation, position_only=position_only,
        damping=damping, max_iters=max_iters, tol=tol)

    norms = np.linalg.norm(errs, axis=1)
    order = np.argsort(norms, kind="stable")
    solutions: list[IkSolution] = []
    if converged.any():
        kept: list[np.ndarray] = []
        for i in order:
            if not converged[i]:
                continue
            if any(np.abs(configs[i] - k).max() <= DEDUP_GAP for k in kept):
                continue
            kept.append(configs[i])
            solutions.append(IkSolution(configs[i].copy(), True, errs[i].copy()))
    else:
        i = order[0]
        solutions.append(IkSolution(configs[i].copy(), False, errs[i].copy()))
    return solutions
