"""Scripted handover scenarios: kinematic world, closed-loop episodes, metrics.

The world is purely kinematic: the object and hand follow scripts, the robot
integrates commanded accelerations (clamped to its boxes), and the gripper
closes onto the object only when the fingers actually straddle a valid grasp
(end effector within 1 cm / 0.1 rad of a current grasp pose).  Five planner
variants share the same task executive and differ in how Approach motion is
generated and whether the reachability model participates in selection.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .costs import (CostWeights, JointGoal, PoseGoal, SceneModel, Sphere,
                    load_scene, pose_distance, scene_from_dict)
from .geometry import Pose, rotation_about_axis
from .grasps import Grasp, GraspSet
from .handover import (GraspSelectionConfig, GripperCommand, HandoverPhase,
                       MachineConfig, MachineState, Observations, ScriptedMove,
                       step_state_machine)
from .ik import dls_solve_batch, ik_solve
from .kinematics import (JointState, RobotModel, batch_fk, batch_jacobian,
                         forward_kinematics, load_robot)
from .mpc import MpcController, RolloutConfig, solver_config_from_dict
from .objects import HandoverObject, get_object, object_library

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

VARIANTS = ("baseline-select", "baseline-select+reach",
            "mpc-single", "mpc-single+reach", "mpc-goalset")

# success tolerance: fingers must straddle a real grasp when closing
GRASP_POSITION_TOL = 0.01  # m
GRASP_ROTATION_TOL = 0.1   # rad

TICKS_CSV_HEADER = "t,state,ee_x,ee_y,ee_z,speed,accel,jerk,chosen_grasp"

PANDA_DROP_CONFIG = np.array([1.1, -0.4, 0.0, -2.0, 0.0, 1.75, 0.785])


def variant_traits(variant: str) -> tuple[str, str, bool]:
    """(controller kind, selection mode, uses reachability)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; have {VARIANTS}")
    kind = "servo" if variant.startswith("baseline") else "mpc"
    mode = "goalset" if variant.endswith("goalset") else "single"
    reach = variant.endswith("+reach") or mode == "goalset"
    return kind, mode, reach


# ---------------------------------------------------------------------------
# Scenario description
# ---------------------------------------------------------------------------

@dataclass
class HandScript:
    """Piecewise-linear hand-center trajectory; holds at the end points."""

    times: np.ndarray
    points: np.ndarray  # (k, 3)

    @staticmethod
    def hold(point) -> "HandScript":
        p = np.asarray(point, dtype=float)
        return HandScript(np.array([0.0]), p[None, :])

    def position(self, t: float) -> np.ndarray:
        if len(self.times) == 1 or t <= self.times[0]:
            return self.points[0]
        if t >= self.times[-1]:
            return self.points[-1]
        i = int(np.searchsorted(self.times, t) - 1)
        f = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1 - f) * self.points[i] + f * self.points[i + 1]


@dataclass
class Scenario:
    name: str
    obj: HandoverObject
    object_pose: Pose
    hand_offset: np.ndarray          # object frame; hand center = pose * offset
    variant: str = "mpc-single+reach"
    seed: int = 0
    perturb_rotation_deg: float = 0.0
    detection_time: float = 0.2
    hand_script: HandScript | None = None  # absolute override of the offset

    def hand_center(self, t: float) -> np.ndarray:
        if self.hand_script is not None:
            return self.hand_script.position(t)
        return self.object_pose.transform_point(self.hand_offset)


HOLDINGS = {
    "bottom": np.array([0.0, 0.0, -0.10]),
    "top": np.array([0.0, 0.0, 0.10]),
    "side_far": np.array([0.10, 0.0, 0.0]),
}

LOCATIONS = {
    "left": np.array([0.50, -0.35, 0.35]),
    "center": np.array([0.57, 0.0, 0.40]),
    "right": np.array([0.50, 0.35, 0.35]),
}


def scenario_from_dict(cfg: dict) -> Scenario:
    obj_cfg = cfg["object"]
    tag = obj_cfg["tag"]
    if "grasps" in obj_cfg:
        grasps = GraspSet([Grasp(Pose.from_pose6(g["pose6"]), float(g.get("stability", 0.5)))
                           for g in obj_cfg["grasps"]])
        base = get_object(tag) if tag in object_library() else None
        obj = HandoverObject(tag, grasps,
                             np.asarray(obj_cfg.get("standing_axis",
                                                    [0.0, 0.0, 1.0]), dtype=float),
                             float(obj_cfg.get("width", base.width if base else 0.04)))
    else:
        obj = get_object(tag)
    pose = Pose.from_pose6(cfg["object_pose6"]) if "object_pose6" in cfg \
        else Pose(np.eye(3), np.asarray(cfg["object_position"], dtype=float))
    hand = cfg.get("hand", {})
    script = None
    if "waypoints" in hand:
        times = np.array([wp["t"] for wp in hand["waypoints"]], dtype=float)
        pts = np.stack([np.asarray(wp["position"], dtype=float) for wp in hand["waypoints"]])
        script = HandScript(times, pts)
    offset = np.asarray(hand.get("offset", HOLDINGS["bottom"]), dtype=float)
    pert = cfg.get("perturbation", {})
    return Scenario(
        name=cfg.get("name", tag),
        obj=obj,
        object_pose=pose,
        hand_offset=offset,
        variant=cfg.get("variant", "mpc-single+reach"),
        seed=int(cfg.get("seed", 0)),
        perturb_rotation_deg=float(pert.get("rotate_deg", 0.0)),
        detection_time=float(cfg.get("detection_time", 0.2)),
        hand_script=script,
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "rb") as f:
        return scenario_from_dict(tomllib.load(f))


def build_suite_matrix(variant: str, base_seed: int = 0, rotation: bool = False):
    """3 objects x 3 locations x 3 holdings (or the 9-scenario rotation set)."""
    scenarios = []
    holdings = ["bottom"] if rotation else ["bottom", "top", "side_far"]
    idx = 0
    for tag in ("banana", "cracker_box", "pepper_bottle"):
        for loc_name, loc in LOCATIONS.items():
            for holding in holdings:
                scenarios.append(Scenario(
                    name=f"{tag}/{loc_name}/{holding}" + ("/rot45" if rotation else ""),
                    obj=get_object(tag),
                    object_pose=Pose(np.eye(3), loc),
                    hand_offset=HOLDINGS[holding],
                    variant=variant,
                    seed=base_seed + idx,
                    perturb_rotation_deg=45.0 if rotation else 0.0,
                ))
                idx += 1
    return scenarios


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------

class KinematicWorld:
    """Scripted object and hand, integrating robot, spring-free gripper."""

    def __init__(self, model: RobotModel, scenario: Scenario, start_config=None,
                 max_open: float = 0.08):
        self.model = model
        self.scenario = scenario
        self.state = JointState.at_rest(start_config if start_config is not None
                                        else model.home)
        self.object_pose = scenario.object_pose
        self.max_open = max_open
        self.gap = max_open
        self.gap_target = max_open
        self.attached: Pose | None = None  # grip-frame-from-object when held
        self.perturbed = False
        self.time = 0.0

    # -- robot -------------------------------------------------------------

    def ee_pose(self) -> Pose:
        return forward_kinematics(self.model, self.state.position)

    def ee_speed(self) -> float:
        kin = batch_fk(self.model, self.state.position[None], need_link_R=False)
        J = batch_jacobian(self.model, kin)[0]
        return float(np.linalg.norm(J[3:] @ self.state.velocity))

    def step_accel(self, accel: np.ndarray, dt: float) -> None:
        a = np.clip(accel, -self.model.acc_limits, self.model.acc_limits)
        v = self.state.velocity + a * dt
        v = np.clip(v, -self.model.vel_limits, self.model.vel_limits)
        q = self.state.position + v * dt
        clamped = np.clip(q, self.model.limit_lo, self.model.limit_hi)
        v = np.where(q == clamped, v, 0.0)  # hard stops kill velocity
        self.state.position = clamped
        self.state.velocity = v
        self.state.acceleration = a
        self._after_motion(dt)

    def step_scripted(self, move: ScriptedMove, dt: float) -> None:
        """Blocking Cartesian servo: damped-least-squares velocity step."""
        cur = self.ee_pose()
        lin = move.target.translation - cur.translation
        dist = np.linalg.norm(lin)
        step = min(move.speed * dt, dist) if dist > 1e-12 else 0.0
        v_lin = lin / dist * step / dt if dist > 1e-12 else np.zeros(3)
        from .geometry import rotation_log
        w_err = rotation_log(move.target.rotation @ cur.rotation.T)
        v_ang = np.clip(w_err / max(dt, 1e-6), -1.5, 1.5)
        twist = np.concatenate([v_ang, v_lin])
        kin = batch_fk(self.model, self.state.position[None], need_link_R=False)
        J = batch_jacobian(self.model, kin)[0]
        lam = 0.05
        qd = J.T @ np.linalg.solve(J @ J.T + lam * lam * np.eye(6), twist)
        qd = np.clip(qd, -self.model.vel_limits, self.model.vel_limits)
        self.state.velocity = qd
        self.state.position = self.model.clamp_to_limits(self.state.position + qd * dt)
        self.state.acceleration = np.zeros_like(qd)
        self._after_motion(dt)

    def hold_still(self, dt: float) -> None:
        self.step_accel(-self.state.velocity / max(dt, 1e-6), dt)

    def _after_motion(self, dt: float) -> None:
        self.time += dt
        if self.attached is not None:
            self.object_pose = self.ee_pose() @ self.attached

    # -- object / hand / gripper -------------------------------------------

    def world_grasps(self) -> GraspSet:
        return self.scenario.obj.grasps_local.transformed(self.object_pose)

    def hand_center(self) -> np.ndarray:
        return self.scenario.hand_center(self.time)

    def apply_perturbation(self) -> None:
        axis = self.object_pose.rotation @ self.scenario.obj.standing_axis
        R = rotation_about_axis(axis, np.deg2rad(self.scenario.perturb_rotation_deg))
        self.object_pose = Pose(R @ self.object_pose.rotation,
                                self.object_pose.translation)
        self.perturbed = True

    def _grasp_in_fingers(self) -> bool:
        ee = self.ee_pose()
        for g in self.world_grasps():
            dp = np.linalg.norm(ee.translation - g.pose.translation)
            from .geometry import rotation_log
            ang = np.linalg.norm(rotation_log(ee.rotation.T @ g.pose.rotation))
            if dp < GRASP_POSITION_TOL and ang < GRASP_ROTATION_TOL:
                return True
        return False

    def command_gripper(self, cmd: GripperCommand, dt: float, close_time: float) -> None:
        rate = self.max_open / max(close_time, 1e-6)
        if cmd is GripperCommand.OPEN:
            self.gap_target = self.max_open
            if self.attached is not None:
                self.attached = None  # release
        elif cmd is GripperCommand.CLOSE:
            self.gap_target = (self.scenario.obj.width if self._grasp_in_fingers()
                               else 0.001)
        if self.gap < self.gap_target:
            self.gap = min(self.gap + rate * dt, self.gap_target)
        else:
            self.gap = max(self.gap - rate * dt, self.gap_target)
        held = (self.gap_target > 0.002 and abs(self.gap - self.gap_target) < 1e-9
                and cmd is GripperCommand.CLOSE)
        if held and self.attached is None:
            self.attached = self.ee_pose().inverse() @ self.object_pose


class SensorSim:
    """Rolling 5x20 sensor window with contact pulses injected on touch."""

    def __init__(self, seed: int, dof: int):
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5E)))
        self.dof = dof
        self.window = np.zeros((5, 20))
        self.pulse_steps = 0
        self.pulse_force = np.zeros(3)

    def trigger_contact(self, amplitude: float = 8.0) -> None:
        d = self.rng.normal(size=3)
        self.pulse_force = amplitude * d / np.linalg.norm(d)
        self.pulse_steps = 3

    def tick(self, velocity: np.ndarray) -> np.ndarray:
        row = np.zeros(20)
        n = min(self.dof, 7)
        row[0:n] = velocity[:n]
        row[7:7 + n] = 0.8 * velocity[:n] + self.rng.normal(0.0, 0.12, n)
        row[14:17] = self.rng.normal(0.0, 0.35, 3)
        row[17:20] = self.rng.normal(0.0, 0.05, 3)
        if self.pulse_steps > 0:
            decay = np.exp(-0.8 * (3 - self.pulse_steps))
            row[14:17] += self.pulse_force * decay
            row[17:20] += np.cross([0.0, 0.0, 0.1], self.pulse_force) * decay
            row[7:7 + n] += 0.6 * decay
            self.pulse_steps -= 1
        self.window = np.vstack([self.window[1:], row[None, :]])
        return self.window


# ---------------------------------------------------------------------------
# Baseline servo controller
# ---------------------------------------------------------------------------

class ServoController:
    """Select-then-servo baseline: IK to the goal pose, PD in joint space."""

    def __init__(self, model: RobotModel, seed: int = 0, kp: float = 4.0,
                 kd: float = 4.0, vel_fraction: float = 0.4):
        self.model = model
        self.seed = seed
        self.kp = kp
        self.kd = kd
        self.vel_cap = vel_fraction * model.vel_limits
        self.target_pose: Pose | None = None
        self.target_config: np.ndarray | None = None
        self.ik_calls = 0

    def _retarget(self, pose: Pose, current: np.ndarray) -> None:
        sols = ik_solve(self.model, pose, seeds=8, seed=self.seed + self.ik_calls)
        self.ik_calls += 1
        converged = [s for s in sols if s.converged] or sols
        gaps = [np.abs(s.config - current).max() for s in converged]
        self.target_config = converged[int(np.argmin(gaps))].config
        self.target_pose = pose

    def step(self, state: JointState, goal, dt: float) -> np.ndarray:
        if isinstance(goal, JointGoal):
            target = goal.config
        else:
            pose = goal.poses[0]
            if (self.target_pose is None
                    or pose_distance(pose, self.target_pose, 70.0, 220.0) > 1e-6):
                self._retarget(pose, state.position)
            target = self.target_config
        a = self.kp * (target - state.position) - self.kd * state.velocity
        a = np.clip(a, -self.model.acc_limits, self.model.acc_limits)
        v_next = state.velocity + a * dt
        over = np.abs(v_next) > self.vel_cap
        a[over] = (np.sign(v_next[over]) * self.vel_cap[over]
                   - state.velocity[over]) / dt
        return np.clip(a, -self.model.acc_limits, self.model.acc_limits)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_motion_metrics(positions: np.ndarray, dt: float):
    """Central-difference speed, acceleration, and jerk magnitude series."""
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[0] < 4:
        raise ValueError("need at least 4 uniformly spaced samples")
    v = (p[2:] - p[:-2]) / (2.0 * dt)
    a = (v[2:] - v[:-2]) / (2.0 * dt) if v.shape[0] >= 3 else np.zeros((0, 3))
    j = (a[2:] - a[:-2]) / (2.0 * dt) if a.shape[0] >= 3 else np.zeros((0, 3))
    return (np.linalg.norm(v, axis=1), np.linalg.norm(a, axis=1),
            np.linalg.norm(j, axis=1))


@dataclass
class MetricsRecord:
    scenario: str
    variant: str
    seed: int
    success: bool
    approach_time: float
    total_time: float | None
    mean_speed: float
    mean_accel: float
    mean_jerk: float
    max_jerk: float
    grasp_switches: int
    oscillation: bool
    ticks: int

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MetricsRecord":
        return MetricsRecord(**json.loads(text))


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------

@dataclass
class SimModels:
    reach_net: object | None = None
    contact_net: object | None = None


def default_scene() -> SceneModel:
    from importlib import resources
    ref = resources.files("handover_mpc").joinpath("data/scenes/default.toml")
    return scene_from_dict(tomllib.loads(ref.read_text()))


def make_machine_config(model: RobotModel, variant: str,
                        drop_config=None) -> MachineConfig:
    _, mode, use_reach = variant_traits(variant)
    home_pose = forward_kinematics(model, model.home)
    drop = (np.asarray(drop_config, dtype=float) if drop_config is not None
            else (PANDA_DROP_CONFIG if model.dof == 7 else model.home))
    return MachineConfig(
        selection=GraspSelectionConfig(home_pose=home_pose),
        home_config=model.home.copy(),
        drop_config=drop,
        mode=mode,
        use_reachability=use_reach,
    )


def run_scenario(scenario: Scenario, model: RobotModel | None = None,
                 models: SimModels | None = None,
                 rollout_cfg: RolloutConfig | None = None,
                 weights: CostWeights | None = None,
                 scene: SceneModel | None = None,
                 tick_rate: float = 50.0,
                 timeout: float = 60.0,
                 machine_cfg: MachineConfig | None = None,
                 ticks_csv: str | Path | None = None,
                 episode_log: str | Path | None = None) -> MetricsRecord:
    """Run one closed-loop episode and return its metrics.

    Deterministic for a fixed (scenario, seed, configuration).
    """
    model = model or load_robot("panda7")
    models = models or SimModels()
    kind, mode, use_reach = variant_traits(scenario.variant)
    if use_reach and models.reach_net is None:
        raise ValueError(f"variant {scenario.variant!r} needs a reachability model")
    weights = weights or CostWeights()
    rollout_cfg = rollout_cfg or RolloutConfig()
    rollout_cfg = RolloutConfig(**{**rollout_cfg.__dict__, "seed": scenario.seed})
    cfg = machine_cfg or make_machine_config(model, scenario.variant)

    base_scene = scene or default_scene()
    world = KinematicWorld(model, scenario)
    sensors = SensorSim(scenario.seed, model.dof)
    machine = MachineState()
    if kind == "mpc":
        controller = MpcController(model, weights, rollout_cfg)
    else:
        controller = ServoController(model, seed=scenario.seed)

    dt = 1.0 / tick_rate
    detect_at = scenario.detection_time
    detection_time = None
    drop_done_time = None
    positions = []
    phases = []
    chosen = []
    contact_prob = 0.0
    was_touching = False
    log_lines = []

    max_ticks = int(round(timeout * tick_rate))
    for tick in range(max_ticks):
        t = world.time
        hand = world.hand_center()
        scene_t = base_scene.with_hand(hand)
        detected = t >= detect_at
        if detected and detection_time is None:
            detection_time = t

        # mid-motion orientation perturbation
        if (scenario.perturb_rotation_deg != 0.0 and not world.perturbed
                and detected and world.ee_speed() > 0.05):
            world.apply_perturbation()

        grasps = world.world_grasps() if detected else None
        ee = world.ee_pose()

        # contact sensing runs during the blocking grasp phase
        touching = (machine.phase is HandoverPhase.GRASP and world._grasp_in_fingers())
        if touching and not was_touching:
            sensors.trigger_contact()
        was_touching = touching
        window = sensors.tick(world.state.velocity)
        if models.contact_net is not None and machine.phase is HandoverPhase.GRASP:
            contact_prob = float(models.contact_net.detect_batch(window[None])[0])
        else:
            contact_prob = 0.0

        obs = Observations(time=t, detected=detected, ee_pose=ee,
                           joint_position=world.state.position.copy(),
                           grasps=grasps, contact_probability=contact_prob,
                           finger_gap=world.gap)
        machine, goal, grip = step_state_machine(machine, obs, cfg,
                                                 models.reach_net)

        if isinstance(goal, ScriptedMove):
            world.step_scripted(goal, dt)
        elif goal is None:
            world.hold_still(dt)
        elif kind == "mpc":
            cmd, diag = controller.step(world.state, goal, scene_t)
            world.step_accel(cmd, dt)
        else:
            cmd = controller.step(world.state, goal, dt)
            world.step_accel(cmd, dt)

        world.command_gripper(grip, dt, cfg.gripper.close_time)

        positions.append(ee.translation)
        phases.append(machine.phase.value)
        if isinstance(goal, PoseGoal) and machine.phase is HandoverPhase.APPROACH:
            chosen.append(int(machine.selected_index))
        else:
            chosen.append(-1)
        if episode_log is not None:
            log_lines.append(json.dumps({
                "t": round(t, 6), "state": machine.phase.value,
                "ee": [round(v, 6) for v in ee.translation],
                "contact_probability": round(contact_prob, 6),
                "finger_gap": round(world.gap, 6),
                "goal": type(goal).__name__ if goal is not None else "hold",
            }, sort_keys=True))

        if machine.drops_completed > 0 and drop_done_time is None:
            drop_done_time = world.time
            break

    success = drop_done_time is not None
    approach_time = phases.count("approach") * dt
    total_time = (drop_done_time - detection_time) if success else None

    pos = np.asarray(positions)
    if pos.shape[0] >= 8:
        speed, accel, jerk = compute_motion_metrics(pos, dt)
    else:
        speed = accel = jerk = np.zeros(0)

    record = MetricsRecord(
        scenario=scenario.name, variant=scenario.variant, seed=scenario.seed,
        success=success, approach_time=round(approach_time, 6),
        total_time=round(total_time, 6) if total_time is not None else None,
        mean_speed=float(speed.mean()) if speed.size else 0.0,
        mean_accel=float(accel.mean()) if accel.size else 0.0,
        mean_jerk=float(jerk.mean()) if jerk.size else 0.0,
        max_jerk=float(jerk.max()) if jerk.size else 0.0,
        grasp_switches=int(machine.grasp_switches),
        oscillation=bool(machine.grasp_switches > 10),
        ticks=len(positions),
    )

    if ticks_csv is not None:
        with open(ticks_csv, "w") as f:
            f.write(TICKS_CSV_HEADER + "\n")
            for i in range(len(positions)):
                s = speed[i - 1] if 1 <= i - 1 < len(speed) + 1 and i - 1 < len(speed) else 0.0
                a = accel[i - 2] if 0 <= i - 2 < len(accel) else 0.0
                jk = jerk[i - 3] if 0 <= i - 3 < len(jerk) else 0.0
                f.write(f"{i * dt:.6f},{phases[i]},"
                        f"{positions[i][0]:.9f},{positions[i][1]:.9f},{positions[i][2]:.9f},"
                        f"{s:.9f},{a:.9f},{jk:.9f},{chosen[i]}\n")
    if episode_log is not None:
        Path(episode_log).write_text("\n".join(log_lines) + "\n")
    return record


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

@dataclass
class VariantAggregate:
    variant: str
    episodes: int
    success_rate: float
    approach_mean: float | None
    approach_std: float | None
    total_mean: float | None
    total_std: float | None
    mean_jerk: float
    mean_switches: float
    oscillation_episodes: int


@dataclass
class SuiteReport:
    records: list
    aggregates: dict

    def to_json(self) -> str:
        return json.dumps({
            "records": [asdict(r) for r in self.records],
            "aggregates": {k: asdict(v) for k, v in self.aggregates.items()},
        }, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "SuiteReport":
        raw = json.loads(text)
        records = [MetricsRecord(**r) for r in raw["records"]]
        aggregates = {k: VariantAggregate(**v) for k, v in raw["aggregates"].items()}
        return SuiteReport(records, aggregates)


def aggregate_records(records) -> dict:
    by_variant: dict[str, list[MetricsRecord]] = {}
    for r in records:
        by_variant.setdefault(r.variant, []).append(r)
    out = {}
    for variant, recs in sorted(by_variant.items()):
        ok = [r for r in recs if r.success]
        app = np.array([r.approach_time for r in ok])
        tot = np.array([r.total_time for r in ok])
        out[variant] = VariantAggregate(
            variant=variant,
            episodes=len(recs),
            success_rate=len(ok) / len(recs),
            approach_mean=float(app.mean()) if app.size else None,
            approach_std=float(app.std()) if app.size else None,
            total_mean=float(tot.mean()) if tot.size else None,
            total_std=float(tot.std()) if tot.size else None,
            mean_jerk=float(np.mean([r.mean_jerk for r in recs])),
            mean_switches=float(np.mean([r.grasp_switches for r in recs])),
            oscillation_episodes=sum(r.oscillation for r in recs),
        )
    return out


def _run_one(args):
    scenario, kwargs = args
    return run_scenario(scenario, **kwargs)


def run_suite(scenarios, model: RobotModel | None = None,
              models: SimModels | None = None,
              rollout_cfg: RolloutConfig | None = None,
              weights: CostWeights | None = None,
              tick_rate: float = 50.0, timeout: float = 60.0,
              workers: int = 1) -> SuiteReport:
    """Run every scenario (independently; optionally across processes) and
    aggregate per variant.  Parallel and serial runs produce identical output."""
    if not scenarios:
        raise ValueError("scenario matrix is empty")
    kwargs = dict(model=model, models=models, rollout_cfg=rollout_cfg,
                  weights=weights, tick_rate=tick_rate, timeout=timeout)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, [(s, kwargs) for s in scenarios]))
    else:
        records = [run_scenario(s, **kwargs) for s in scenarios]
    return SuiteReport(records, aggregate_records(records))


def report_to_csv(report: SuiteReport, out_dir: str | Path) -> list[Path]:
    """Emit plot-ready CSV tables for a suite report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    rec_path = out / "records.csv"
    with open(rec_path, "w") as f:
        f.write("scenario,variant,seed,success,approach_time,total_time,"
                "mean_speed,mean_accel,mean_jerk,max_jerk,grasp_switches,oscillation\n")
        for r in report.records:
            f.write(f"{r.scenario},{r.variant},{r.seed},{int(r.success)},"
                    f"{r.approach_time},{r.total_time if r.total_time is not None else ''},"
                    f"{r.mean_speed:.9f},{r.mean_accel:.9f},{r.mean_jerk:.9f},"
                    f"{r.max_jerk:.9f},{r.grasp_switches},{int(r.oscillation)}\n")
    paths.append(rec_path)
    agg_path = out / "aggregates.csv"
    with open(agg_path, "w") as f:
        f.write("variant,episodes,success_rate,approach_mean,approach_std,"
                "total_mean,total_std,mean_jerk,mean_switches,oscillation_episodes\n")
        for k in sorted(report.aggregates):
            a = report.aggregates[k]
            def fmt(v):
                return "" if v is None else f"{v:.9f}"
            f.write(f"{a.variant},{a.episodes},{a.success_rate:.9f},"
                    f"{fmt(a.approach_mean)},{fmt(a.approach_std)},"
                    f"{fmt(a.total_mean)},{fmt(a.total_std)},"
                    f"{a.mean_jerk:.9f},{a.mean_switches:.9f},{a.oscillation_episodes}\n")
    paths.append(agg_path)
    return paths
