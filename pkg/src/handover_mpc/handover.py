"""Four-phase handover executive: Wait, Approach, Grasp, Drop.

The machine consumes per-tick observations and emits a motion goal plus a
gripper command.  Approach drives the end effector to a standoff pose (15 cm
behind the grasp along its approach axis) through the solver; Grasp is a
scripted blocking sequence (advance, close, retreat) with an early close on
detected contact; a close that ends with the fingers nearly touching means
the object was missed, and the machine retries from Approach.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .costs import JointGoal, PoseGoal, pose_distance
from .geometry import Pose
from .grasps import GraspSet

STANDOFF_DISTANCE = 0.15  # m behind the grasp along its approach (+z) axis


class HandoverPhase(Enum):
    WAIT = "wait"
    APPROACH = "approach"
    GRASP = "grasp"
    DROP = "drop"


class GripperCommand(Enum):
    HOLD = "hold"
    OPEN = "open"
    CLOSE = "close"


@dataclass
class ScriptedMove:
    """Blocking Cartesian servo request for the Grasp phase."""

    target: Pose
    speed: float  # m/s along the straight segment


@dataclass(frozen=True)
class GripperModel:
    max_open: float = 0.08
    close_time: float = 0.4
    close_failure_threshold: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.close_failure_threshold < self.max_open:
            raise ValueError("failure threshold must lie inside the opening range")


@dataclass
class GraspSelectionConfig:
    """Weights of the grasp-selection cost.

    score = w_stability * max(s_min - S_g, 0) + w_prev * d(X_g, X_prev)
          + w_home * d(X_g, X_home) - w_reach * R(X_g)
    with d the pose distance at (alpha1, alpha2).  Lower is better.
    """

    w_stability: float = 10.0
    w_prev: float = 1.0
    w_home: float = 0.1
    w_reach: float = 5.0
    s_min: float = 0.5
    alpha1: float = 70.0
    alpha2: float = 220.0
    home_pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        for name in ("w_stability", "w_prev", "w_home", "w_reach"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def select_grasp(grasps: GraspSet, prev: Pose | None,
                 cfg: GraspSelectionConfig, reach_net=None) -> int:
    """Index of the best grasp under the selection cost; ties break low."""
    if len(grasps) == 0:
        raise ValueError("grasp set is empty")
    scores = np.zeros(len(grasps))
    scores += cfg.w_stability * np.maximum(cfg.s_min - grasps.stabilities, 0.0)
    for i, g in enumerate(grasps):
        if prev is not None:
            scores[i] += cfg.w_prev * pose_distance(g.pose, prev, cfg.alpha1, cfg.alpha2)
        scores[i] += cfg.w_home * pose_distance(g.pose, cfg.home_pose,
                                                cfg.alpha1, cfg.alpha2)
    if reach_net is not None and cfg.w_reach > 0.0:
        scores -= cfg.w_reach * reach_net.predict_batch(grasps.pose6_array())
    return int(scores.argmin())


def standoff_pose(grasp: Pose, distance: float = STANDOFF_DISTANCE) -> Pose:
    """Grasp pose backed off along its local approach axis (-z offset)."""
    return grasp @ Pose(np.eye(3), np.array([0.0, 0.0, -distance]))


@dataclass
class Observations:
    """Per-tick sensor snapshot consumed by the state machine."""

    time: float
    detected: bool
    ee_pose: Pose
    joint_position: np.ndarray
    grasps: GraspSet | None = None
    contact_probability: float = 0.0
    finger_gap: float = 0.08


@dataclass
class MachineConfig:
    selection: GraspSelectionConfig
    home_config: np.ndarray
    drop_config: np.ndarray
    gripper: GripperModel = field(default_factory=GripperModel)
    mode: str = "single"  # 'single' or 'goalset'
    use_reachability: bool = False
    reach_threshold: float = 0.0
    standoff_distance: float = STANDOFF_DISTANCE
    eps_standoff: float = 6.0       # pose_distance units (~2.5 cm at alpha2=220)
    eps_grasp: float = 1.2          # gate for "at the grasp" during advance
    advance_speed: float = 0.10     # m/s
    retreat_speed: float = 0.15
    reselect_interval: float = 0.2  # s
    contact_threshold: float = 0.5
    drop_tolerance: float = 0.05    # rad, L-inf

    def __post_init__(self):
        if self.mode not in ("single", "goalset"):
            raise ValueError("mode must be 'single' or 'goalset'")


@dataclass
class MachineState:
    phase: HandoverPhase = HandoverPhase.WAIT
    phase_entered: float = 0.0
    selected_index: int = -1
    target_grasp: Pose | None = None
    target_standoff: Pose | None = None
    candidate_indices: list = field(default_factory=list)
    prev_grasp: Pose | None = None
    last_selection_time: float = -np.inf
    grasp_stage: str = ""           # advance -> close -> retreat
    close_started: float = 0.0
    close_failed: bool = False
    grasp_switches: int = 0
    drops_completed: int = 0

    def enter(self, phase: HandoverPhase, now: float) -> None:
        self.phase = phase
        self.phase_entered = now


def _refresh_selection(st: MachineState, obs: Observations, cfg: MachineConfig,
                       reach_net) -> None:
    grasps = obs.grasps
    net = reach_net if cfg.use_reachability else None
    if cfg.mode == "goalset" and reach_net is not None:
        from .reachability import filter_grasps
        scores = reach_net.predict_batch(grasps.pose6_array())
        keep = np.flatnonzero(scores >= cfg.reach_threshold)
        if keep.size == 0:
            keep = np.array([int(scores.argmax())])
        indices = [int(k) for k in keep]
    elif cfg.mode == "goalset":
        indices = list(range(len(grasps)))
    else:
        indices = [select_grasp(grasps, st.prev_grasp, cfg.selection, net)]

    if st.candidate_indices and indices != st.candidate_indices:
        if cfg.mode == "single" or set(indices) != set(st.candidate_indices):
            st.grasp_switches += 1
    st.candidate_indices = indices
    st.selected_index = indices[0]
    st.last_selection_time = obs.time


def _approach_goal(st: MachineState, obs: Observations, cfg: MachineConfig):
    poses = [standoff_pose(obs.grasps[i].pose, cfg.standoff_distance)
             for i in st.candidate_indices]
    return PoseGoal(poses)


def _nearest_candidate(st: MachineState, obs: Observations, cfg: MachineConfig):
    """(distance-to-standoff, grasp index, standoff pose) of the closest candidate."""
    best = (np.inf, -1, None)
    for i in st.candidate_indices:
        so = standoff_pose(obs.grasps[i].pose, cfg.standoff_distance)
        d = pose_distance(obs.ee_pose, so, cfg.selection.alpha1, cfg.selection.alpha2)
        if d < best[0]:
            best = (d, i, so)
    return best


def step_state_machine(st: MachineState, obs: Observations, cfg: MachineConfig,
                       reach_net=None):
    """Advance the machine one tick.

    Returns (state, goal, gripper command) where goal is a PoseGoal,
    JointGoal, ScriptedMove, or None (hold).  Unknown observations (missing
    grasp set mid-approach) hold the current state.
    """
    now = obs.time

    if st.phase is HandoverPhase.WAIT:
        if obs.detected and obs.grasps is not None and len(obs.grasps) > 0:
            st.enter(HandoverPhase.APPROACH, now)
            st.candidate_indices = []
            _refresh_selection(st, obs, cfg, reach_net)
            return st, _approach_goal(st, obs, cfg), GripperCommand.OPEN
        return st, JointGoal(cfg.home_config), GripperCommand.OPEN

    if st.phase is HandoverPhase.APPROACH:
        if obs.grasps is None or len(obs.grasps) == 0:
            return st, None, GripperCommand.OPEN  # hold until perception returns
        if now - st.last_selection_time >= cfg.reselect_interval:
            _refresh_selection(st, obs, cfg, reach_net)
        dist, idx, so = _nearest_candidate(st, obs, cfg)
        if dist < cfg.eps_standoff:
            st.enter(HandoverPhase.GRASP, now)
            st.grasp_stage = "advance"
            st.selected_index = idx
            st.target_grasp = obs.grasps[idx].pose
            st.target_standoff = so
            st.close_failed = False
            return st, ScriptedMove(st.target_grasp, cfg.advance_speed), GripperCommand.OPEN
        return st, _approach_goal(st, obs, cfg), GripperCommand.OPEN

    if st.phase is HandoverPhase.GRASP:
        if st.grasp_stage == "advance":
            at_grasp = pose_distance(obs.ee_pose, st.target_grasp,
                                     cfg.selection.alpha1, cfg.selection.alpha2) < cfg.eps_grasp
            contact = obs.contact_probability > cfg.contact_threshold
            if at_grasp or contact:
                st.grasp_stage = "close"
                st.close_started = now
                return st, ScriptedMove(st.target_grasp, 0.0), GripperCommand.CLOSE
            return st, ScriptedMove(st.target_grasp, cfg.advance_speed), GripperCommand.OPEN
        if st.grasp_stage == "close":
            if now - st.close_started >= cfg.gripper.close_time:
                st.close_failed = obs.finger_gap < cfg.gripper.close_failure_threshold
                st.grasp_stage = "retreat"
            return st, ScriptedMove(st.target_grasp, 0.0), GripperCommand.CLOSE
        # retreat
        back = pose_distance(obs.ee_pose, st.target_standoff,
                             cfg.selection.alpha1, cfg.selection.alpha2)
        if back < cfg.eps_standoff:
            if st.close_failed:
                st.prev_grasp = st.target_grasp
                st.enter(HandoverPhase.APPROACH, now)
                st.candidate_indices = []
                _refresh_selection(st, obs, cfg, reach_net)
                return st, _approach_goal(st, obs, cfg), GripperCommand.OPEN
            st.enter(HandoverPhase.DROP, now)
            return st, JointGoal(cfg.drop_config), GripperCommand.HOLD
        cmd = GripperCommand.OPEN if st.close_failed else GripperCommand.HOLD
        return st, ScriptedMove(st.target_standoff, cfg.retreat_speed), cmd

    # DROP
    if np.abs(obs.joint_position - cfg.drop_config).max() < cfg.drop_tolerance:
        st.drops_completed += 1
        st.enter(HandoverPhase.WAIT, now)
        st.prev_grasp = None
        return st, JointGoal(cfg.home_config), GripperCommand.OPEN
    return st, JointGoal(cfg.drop_config), GripperCommand.HOLD
