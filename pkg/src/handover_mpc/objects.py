"""Built-in handover objects with authored grasp sets.

Grasp frames follow the gripper convention used across the package: +z is
the approach axis (pointing into the object), so the standoff pose sits at
-z.  Grasp generation from perception is out of scope; these authored sets
preserve the selection and planning problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose
from .grasps import Grasp, GraspSet


@dataclass(frozen=True)
class HandoverObject:
    tag: str
    grasps_local: GraspSet
    standing_axis: np.ndarray  # object frame, unit
    width: float               # finger gap when held (m)


def grasp_frame(position, approach, hint) -> Pose:
    """Right-handed grasp pose: +z along ``approach``, x ⟂ hint."""
    z = np.asarray(approach, dtype=float)
    z = z / np.linalg.norm(z)
    hint = np.asarray(hint, dtype=float)
    x = np.cross(hint, z)
    n = np.linalg.norm(x)
    if n < 1e-9:  # hint parallel to approach; pick any orthogonal
        alt = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = np.cross(alt, z)
        n = np.linalg.norm(x)
    x = x / n
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return Pose(R, np.asarray(position, dtype=float))


def ring_grasps(n: int, radius: float, height: float, stabilities,
                tilt_deg: float = 40.0) -> list[Grasp]:
    """n grasps around the object z axis, approaching inward and tilted
    downward; hand-held objects are taken from above-side, which also keeps
    the wrist near the middle of its range."""
    out = []
    ct, st = np.cos(np.deg2rad(tilt_deg)), np.sin(np.deg2rad(tilt_deg))
    for i in range(n):
        phi = 2.0 * np.pi * i / n
        radial = np.array([np.cos(phi), np.sin(phi), 0.0])
        pos = radius * radial + np.array([0.0, 0.0, height])
        approach = -ct * radial + np.array([0.0, 0.0, -st])
        out.append(Grasp(grasp_frame(pos, approach, [0, 0, 1.0]),
                         float(stabilities[i % len(stabilities)])))
    return out


def top_grasp(height: float, stability: float, yaw: float = 0.0) -> Grasp:
    pose = grasp_frame([0.0, 0.0, height], [0.0, 0.0, -1.0],
                       [np.cos(yaw), np.sin(yaw), 0.0])
    return Grasp(pose, stability)


def _banana() -> HandoverObject:
    grasps = ring_grasps(8, 0.018, 0.0, [0.85, 0.6, 0.7, 0.45, 0.8, 0.55, 0.75, 0.65])
    grasps.append(top_grasp(0.02, 0.7))
    return HandoverObject("banana", GraspSet(grasps), np.array([0.0, 0.0, 1.0]), 0.030)


def _cracker_box() -> HandoverObject:
    # 0.06 x 0.16 x 0.21 box gripped across its narrow dimension
    side = []
    ct, st = np.cos(np.deg2rad(40.0)), np.sin(np.deg2rad(40.0))
    for sign, s in ((1, 0.9), (-1, 0.75)):
        pos = np.array([0.0, sign * 0.08, 0.0])
        side.append(Grasp(grasp_frame(pos, [0.0, -sign * ct, -st], [0, 0, 1.0]), s))
        pos = np.array([0.0, sign * 0.08, 0.06])
        side.append(Grasp(grasp_frame(pos, [0.0, -sign * ct, -st], [0, 0, 1.0]), s - 0.15))
    tops = [top_grasp(0.105, 0.85, yaw=np.pi / 2), top_grasp(0.105, 0.55)]
    return HandoverObject("cracker_box", GraspSet(side + tops),
                          np.array([0.0, 0.0, 1.0]), 0.060)


def _pepper_bottle() -> HandoverObject:
    grasps = ring_grasps(12, 0.032, 0.0,
                         [0.9, 0.7, 0.5, 0.65, 0.8, 0.4, 0.85, 0.6, 0.75, 0.45, 0.7, 0.55])
    grasps += ring_grasps(6, 0.030, 0.05, [0.6, 0.5, 0.55, 0.45, 0.5, 0.4])[:4]
    grasps.append(top_grasp(0.09, 0.8))
    return HandoverObject("pepper_bottle", GraspSet(grasps),
                          np.array([0.0, 0.0, 1.0]), 0.055)


_REGISTRY = None


def object_library() -> dict[str, HandoverObject]:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = {o.tag: o for o in (_banana(), _cracker_box(), _pepper_bottle())}
    return _REGISTRY


def get_object(tag: str) -> HandoverObject:
    lib = object_library()
    if tag not in lib:
        raise KeyError(f"unknown object {tag!r}; have {sorted(lib)}")
    return lib[tag]
