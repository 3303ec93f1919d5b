"""Serial-chain robot model: forward kinematics, geometric Jacobian, collision spheres.

The model is a chain of revolute joints.  Each joint carries a fixed transform
from its parent link frame (xyz translation + intrinsic z-y-x Euler rotation)
and spins about a fixed local axis.  Link ``j`` is the frame after joint ``j``;
link ``-1`` is the robot base.

All heavy math is implemented over batches of configurations (shape ``(B, dof)``)
so the MPC rollouts and dataset labelling can evaluate thousands of
configurations per call.  The scalar API wraps batch size 1.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Pose, rotation_about_axis

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_AXIS_NAMES = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class Joint:
    """One revolute joint: fixed parent transform, spin axis, and box limits."""

    origin: Pose
    axis: np.ndarray
    limit_lo: float
    limit_hi: float
    vel_limit: float
    acc_limit: float

    def __post_init__(self):
        if not self.limit_lo < self.limit_hi:
            raise ValueError("joint limits must satisfy limit_lo < limit_hi")
        a = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", a / n)


@dataclass(frozen=True)
class LinkSphere:
    """Collision sphere attached to a link frame (-1 = base)."""

    link: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))


@dataclass
class JointState:
    """Joint position, velocity, and acceleration vectors (length = dof)."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    @staticmethod
    def at_rest(position) -> "JointState":
        q = np.asarray(position, dtype=float).ravel()
        return JointState(q.copy(), np.zeros_like(q), np.zeros_like(q))

    def copy(self) -> "JointState":
        return JointState(self.position.copy(), self.velocity.copy(), self.acceleration.copy())


class RobotModel:
    """Immutable serial chain; safe to share across threads once constructed."""

    def __init__(self, name: str, joints: list[Joint], ee_offset: Pose | None = None,
                 spheres: list[LinkSphere] | None = None,
                 self_collision_exempt: list[tuple[int, int]] | None = None,
                 task_rows: list[int] | None = None,
                 home: np.ndarray | None = None):
        if len(joints) < 1:
            raise ValueError("robot needs at least one joint")
        self.name = name
        self.joints = list(joints)
        self.ee_offset = ee_offset if ee_offset is not None else Pose.identity()
        self.spheres = list(spheres or [])
        self.self_collision_exempt = {tuple(sorted(p)) for p in (self_collision_exempt or [])}
        self.task_rows = tuple(task_rows) if task_rows is not None else tuple(range(6))
        if any(r < 0 or r > 5 for r in self.task_rows):
            raise ValueError("task_rows must index the 6 twist rows")

        dof = len(joints)
        self.dof = dof
        self.limit_lo = np.array([j.limit_lo for j in joints])
        self.limit_hi = np.array([j.limit_hi for j in joints])
        self.vel_limits = np.array([j.vel_limit for j in joints])
        self.acc_limits = np.array([j.acc_limit for j in joints])
        self.home = (np.asarray(home, dtype=float).reshape(dof) if home is not None
                     else 0.5 * (self.limit_lo + self.limit_hi))

        # Precomputed per-joint arrays for the batch kernels.
        self._origin_R = np.stack([j.origin.rotation for j in joints])
        self._origin_t = np.stack([j.origin.translation for j in joints])
        self._axes = np.stack([j.axis for j in joints])
        self._K = np.stack([_skew(j.axis) for j in joints])
        self._K2 = np.einsum("jab,jbc->jac", self._K, self._K)
        self._ee_R = self.ee_offset.rotation
        self._ee_t = self.ee_offset.translation

        # Spheres grouped by link for batched world transforms.
        by_link: dict[int, list[int]] = {}
        for i, s in enumerate(self.spheres):
            if not -1 <= s.link < dof:
                raise ValueError(f"sphere link index {s.link} out of range")
            by_link.setdefault(s.link, []).append(i)
        self._sphere_groups = [(link, np.array(idx), np.stack([self.spheres[i].center for i in idx]))
                               for link, idx in sorted(by_link.items())]
        self.sphere_radii = np.array([s.radius for s in self.spheres]) if self.spheres else np.zeros(0)
        self.sphere_links = np.array([s.link for s in self.spheres], dtype=int) if self.spheres else np.zeros(0, dtype=int)

        # Non-exempt sphere pairs for self-collision checks (distinct links only).
        ia, ib = [], []
        for a in range(len(self.spheres)):
            for b in range(a + 1, len(self.spheres)):
                la, lb = self.spheres[a].link, self.spheres[b].link
                if la == lb or tuple(sorted((la, lb))) in self.self_collision_exempt:
                    continue
                ia.append(a)
                ib.append(b)
        self._pair_a = np.array(ia, dtype=int)
        self._pair_b = np.array(ib, dtype=int)
        self._pair_radius_sum = (self.sphere_radii[self._pair_a] + self.sphere_radii[self._pair_b]
                                 if len(ia) else np.zeros(0))

    def _check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.dof:
            raise ValueError(f"config has {q.shape[-1]} entries, robot has {self.dof} dof")
        return q

    def clamp_to_limits(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.limit_lo, self.limit_hi)


@dataclass
class BatchKinematics:
    """World-frame chain quantities for a batch of configurations.

    Link frame translations coincide with the joint axis origins, so
    ``joint_origin`` doubles as the link translation array.
    """

    link_R: np.ndarray | None  # (B, dof, 3, 3); None when skipped
    joint_origin: np.ndarray   # (B, dof, 3) world position of each joint axis
    joint_axis: np.ndarray     # (B, dof, 3) world direction of each joint axis
    ee_R: np.ndarray           # (B, 3, 3)
    ee_t: np.ndarray           # (B, 3)

    @property
    def link_t(self) -> np.ndarray:
        return self.joint_origin


def _rot_gemm(R: np.ndarray, M: np.ndarray) -> np.ndarray:
    """R @ M for a batch of rotations R (B, 3, 3) and one 3x3 M, as one GEMM."""
    B = R.shape[0]
    return np.dot(R.reshape(B * 3, 3), M).reshape(B, 3, 3)


def _rot_vec(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    """R @ v for a batch of rotations and one 3-vector, as one GEMV."""
    B = R.shape[0]
    return np.dot(R.reshape(B * 3, 3), v).reshape(B, 3)


def batch_fk(model: RobotModel, Q: np.ndarray, need_link_R: bool = True) -> BatchKinematics:
    """Chain forward kinematics for configurations ``Q`` of shape (B, dof).

    ``need_link_R=False`` skips storing per-link rotations (the IK loop only
    needs the end effector, joint origins, and axes).
    """
    Q = model._check_config(np.atleast_2d(Q))
    B, dof = Q.shape
    link_R = np.empty((B, dof, 3, 3)) if need_link_R else None
    origins = np.empty((B, dof, 3))
    axes_w = np.empty((B, dof, 3))

    R = np.broadcast_to(np.eye(3), (B, 3, 3))
    t = np.zeros((B, 3))
    s, c = np.sin(Q), np.cos(Q)
    for j in range(dof):
        R_pre = _rot_gemm(R, model._origin_R[j]) if j else np.broadcast_to(model._origin_R[0], (B, 3, 3))
        o = t + _rot_vec(R, model._origin_t[j]) if j else np.broadcast_to(model._origin_t[0], (B, 3))
        # Rodrigues about the fixed local axis, folded into the chain product:
        # R_pre @ (I + s K + (1-c) K^2).
        RK = _rot_gemm(R_pre, model._K[j])
        RK2 = _rot_gemm(R_pre, model._K2[j])
        R = R_pre + s[:, j, None, None] * RK + (1.0 - c[:, j, None, None]) * RK2
        t = o
        if need_link_R:
            link_R[:, j] = R
        origins[:, j] = o
        axes_w[:, j] = _rot_vec(R, model._axes[j])

    ee_R = _rot_gemm(R, model._ee_R)
    ee_t = t + _rot_vec(R, model._ee_t)
    return BatchKinematics(link_R, origins, axes_w, ee_R, ee_t)


def batch_jacobian(model: RobotModel, kin: BatchKinematics) -> np.ndarray:
    """Geometric Jacobians (B, 6, dof); rows are (wx, wy, wz, vx, vy, vz)."""
    arm = kin.ee_t[:, None, :] - kin.joint_origin  # (B, dof, 3)
    lin = np.cross(kin.joint_axis, arm)
    J = np.concatenate([kin.joint_axis.transpose(0, 2, 1)[:, :, :],
                        lin.transpose(0, 2, 1)], axis=1)
    return J.reshape(kin.joint_axis.shape[0], 6, model.dof)


def batch_sphere_centers(model: RobotModel, kin: BatchKinematics) -> np.ndarray:
    """World centers of all collision spheres, shape (B, n_spheres, 3)."""
    B = kin.ee_t.shape[0]
    centers = np.empty((B, len(model.spheres), 3))
    for link, idx, local in model._sphere_groups:
        if link == -1:
            centers[:, idx] = local[None, :, :]
        else:
            centers[:, idx] = (np.einsum("bij,kj->bki", kin.link_R[:, link], local)
                               + kin.link_t[:, link, None, :])
    return centers


# ---------------------------------------------------------------------------
# Scalar wrappers
# ---------------------------------------------------------------------------

def forward_kinematics(model: RobotModel, q) -> Pose:
    """End-effector pose at configuration ``q``."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    return Pose(kin.ee_R[0], kin.ee_t[0])


def jacobian(model: RobotModel, q) -> np.ndarray:
    """6 x dof geometric Jacobian mapping joint rates to the end-effector twist."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    return batch_jacobian(model, kin)[0]


def link_spheres_world(model: RobotModel, q) -> list[dict]:
    """All collision spheres transformed to the world frame."""
    kin = batch_fk(model, np.asarray(q, dtype=float)[None, :])
    centers = batch_sphere_centers(model, kin)[0]
    return [{"center": centers[i], "radius": model.spheres[i].radius}
            for i in range(len(model.spheres))]


# ---------------------------------------------------------------------------
# Robot description files
# ---------------------------------------------------------------------------

def _pose_from_table(tab: dict) -> Pose:
    xyz = tab.get("origin_xyz", [0.0, 0.0, 0.0])
    rpy = tab.get("origin_rpy", [0.0, 0.0, 0.0])
    return Pose.from_rpy(xyz, roll=rpy[0], pitch=rpy[1], yaw=rpy[2])


def _parse_axis(spec) -> np.ndarray:
    if isinstance(spec, str):
        sign = -1.0 if spec.startswith("-") else 1.0
        name = spec.lstrip("+-")
        if name not in _AXIS_NAMES:
            raise ValueError(f"unknown axis name {spec!r}")
        return sign * _AXIS_NAMES[name]
    return np.asarray(spec, dtype=float).reshape(3)


def robot_from_dict(cfg: dict) -> RobotModel:
    joints = []
    for row in cfg["joints"]:
        joints.append(Joint(
            origin=_pose_from_table(row),
            axis=_parse_axis(row.get("axis", "z")),
            limit_lo=float(row["limit_lo"]),
            limit_hi=float(row["limit_hi"]),
            vel_limit=float(row.get("vel_limit", 2.0)),
            acc_limit=float(row.get("acc_limit", 10.0)),
        ))
    spheres = [LinkSphere(int(s["link"]), s["center"], float(s["radius"]))
               for s in cfg.get("spheres", [])]
    exempt = [tuple(int(v) for v in pair) for pair in cfg.get("self_collision_exempt", [])]
    ee = _pose_from_table(cfg["ee"]) if "ee" in cfg else Pose.identity()
    return RobotModel(
        name=cfg.get("name", "robot"),
        joints=joints,
        ee_offset=ee,
        spheres=spheres,
        self_collision_exempt=exempt,
        task_rows=cfg.get("task_rows"),
        home=np.asarray(cfg["home"], dtype=float) if "home" in cfg else None,
    )


def load_robot(path_or_name: str | Path) -> RobotModel:
    """Load a robot description from a TOML file or a built-in name.

    Built-ins: ``planar2r`` (two-link planar arm, link lengths 1 m) and
    ``panda7`` (7-DOF arm with published kinematic parameters).
    """
    p = Path(path_or_name)
    if not p.suffix and not p.exists():
        ref = resources.files("handover_mpc").joinpath(f"data/robots/{path_or_name}.toml")
        if not ref.is_file():
            raise FileNotFoundError(f"no robot file and no built-in named {path_or_name!r}")
        cfg = tomllib.loads(ref.read_text())
        return robot_from_dict(cfg)
    with open(p, "rb") as f:
        cfg = tomllib.load(f)
    return robot_from_dict(cfg)


def builtin_robot_names() -> list[str]:
    base = resources.files("handover_mpc").joinpath("data/robots")
    return sorted(f.name.removesuffix(".toml") for f in base.iterdir() if f.name.endswith(".toml"))
