"""Rigid-body poses and rotation helpers.

A pose is a proper rigid transform: a 3x3 rotation matrix plus a translation
in meters.  Rotation logarithms and Euler conversions are delegated to
scipy's Rotation, which handles the angle-pi branch correctly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

ORTHONORMALITY_TOL = 1e-9

# Weight (m/rad) applied to the rotation part of a twist when mixing it with
# translation in a single norm.
DEFAULT_ROT_WEIGHT = 0.1


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid transform with rotation matrix ``rotation`` and translation ``translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = _as_vec3(self.translation)
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(R) < 0:
            raise ValueError(f"rotation is not orthonormal with det +1 (error {err:.2e})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rpy(xyz, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> "Pose":
        """Pose from translation and intrinsic z-y-x Euler angles (yaw*pitch*roll)."""
        R = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        return Pose(R, _as_vec3(xyz))

    @staticmethod
    def from_pose6(pose6) -> "Pose":
        """Pose from a 6-vector (x, y, z, roll, pitch, yaw)."""
        p = np.asarray(pose6, dtype=float).reshape(6)
        return Pose.from_rpy(p[:3], roll=p[3], pitch=p[4], yaw=p[5])

    def to_pose6(self) -> np.ndarray:
        """6-vector (x, y, z, roll, pitch, yaw), intrinsic z-y-x convention."""
        yaw, pitch, roll = Rotation.from_matrix(self.rotation).as_euler("ZYX")
        return np.array([*self.translation, roll, pitch, yaw])

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation @ _as_vec3(p) + self.translation

    def is_orthonormal(self, tol: float = ORTHONORMALITY_TOL) -> bool:
        R = self.rotation
        return (np.abs(R @ R.T - np.eye(3)).max() <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (np.abs(self.rotation - other.rotation).max() <= tol
                and np.abs(self.translation - other.translation).max() <= tol)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector of a rotation matrix (matrix logarithm)."""
    return Rotation.from_matrix(R).as_rotvec()


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    a = _as_vec3(axis)
    a = a / np.linalg.norm(a)
    return Rotation.from_rotvec(a * angle).as_matrix()


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """n rotation matrices uniform over SO(3), drawn from ``rng``."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Rotation.from_quat(q).as_matrix()


def twist_distance(a: Pose, b: Pose, rot_weight: float = DEFAULT_ROT_WEIGHT) -> float:
    """Weighted norm of the relative twist between two poses.

    ||[rot_weight * log(Ra^T Rb); tb - ta]||_2, with the rotation logarithm as
    an axis-angle 3-vector and rot_weight in m/rad.
    """
    w = rot_weight * rotation_log(a.rotation.T @ b.rotation)
    d = b.translation - a.translation
    return float(np.linalg.norm(np.concatenate([w, d])))
