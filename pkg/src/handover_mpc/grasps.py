"""Candidate grasp sets: poses with stability scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose


@dataclass(frozen=True)
class Grasp:
    pose: Pose
    stability: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.stability):
            raise ValueError("grasp stability must be finite")


@dataclass
class GraspSet:
    grasps: list[Grasp]

    def __len__(self) -> int:
        return len(self.grasps)

    def __iter__(self):
        return iter(self.grasps)

    def __getitem__(self, i: int) -> Grasp:
        return self.grasps[i]

    @property
    def poses(self) -> list[Pose]:
        return [g.pose for g in self.grasps]

    @property
    def stabilities(self) -> np.ndarray:
        return np.array([g.stability for g in self.grasps])

    def pose6_array(self) -> np.ndarray:
        """(n, 6) array of (x, y, z, roll, pitch, yaw) rows."""
        if not self.grasps:
            return np.zeros((0, 6))
        return np.stack([g.pose.to_pose6() for g in self.grasps])

    def transformed(self, world_from_local: Pose) -> "GraspSet":
        """The same grasps expressed through an object pose."""
        return GraspSet([Grasp(world_from_local @ g.pose, g.stability) for g in self.grasps])

    def subset(self, indices) -> "GraspSet":
        return GraspSet([self.grasps[i] for i in indices])
