"""Ground-truth world, lockstep scheduler and trace records.

Each step runs, for every live robot in id order:

1. scripted events (kill / revive)
2. EKF prediction with the previous command
3. on measurement ticks: broadcast, bus delivery, sensing, EKF update
4. on replan ticks: waypoint planning
5. control from the EKF estimate, trace record, ground-truth step
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__
from .coretypes import Bounds, MeasurementBundle, Pose2D, TimedPlan, VelocityCommand, wrap_angle
from .estimator import EkfState, NoiseConfig, predict, scalar_uncertainty, update
from .geometry import swarm_dop_sum
from .planner import PlannerConfig, naive_plan, select_waypoint
from .sensors import SensorConfig, simulate_sun_sensor, simulate_uwb_ranges, simulate_vo
from .swarmnet import MessageBus, broadcast, neighbor_set

log = logging.getLogger(__name__)

PLANNERS = ("proposed", "naive")
TRACE_SCHEMA_VERSION = 1
# Inflated relative to the library default so the filter covariance reacts to
# VO quality within a single run.
SCENARIO_PROCESS_NOISE = np.diag([1e-2, 1e-2, 1e-3])


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class RobotSpec:
    start: Tuple[float, float, float]
    goal: Tuple[float, float]
    planner: Optional[str] = None


@dataclass
class Event:
    time: float
    action: str
    robot: int


def _default_robots() -> List[RobotSpec]:
    ys = (1.5, 2.5, 3.5, 4.5)
    return [RobotSpec((1.0, y, 0.0), (9.0, y)) for y in ys]


@dataclass
class ScenarioConfig:
    workspace: Bounds = field(default_factory=lambda: Bounds(0.0, 10.0, 0.0, 6.0))
    robots: List[RobotSpec] = field(default_factory=_default_robots)
    planner_type: str = "proposed"
    sensors: SensorConfig = field(default_factory=SensorConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    estimator: NoiseConfig = field(default_factory=lambda: NoiseConfig(Q=SCENARIO_PROCESS_NOISE))
    dt: float = 0.05
    duration: float = 60.0
    seed: int = 0
    omega_max: float = 1.5
    heading_gain: float = 2.0
    arrive_tolerance: float = 0.02
    measurement_period: float = 0.2
    actuation_noise: float = 0.05
    initial_covariance: Tuple[float, float, float] = (0.01, 0.01, 0.001)
    stop_at_goals: bool = True
    naive_collision: bool = True
    bus_delay: float = 0.0
    bus_drop_rate: float = 0.0
    events: List[Event] = field(default_factory=list)
    record_candidates: bool = False

    @property
    def v_max(self) -> float:
        return self.planner.v_max

    @property
    def robot_ids(self) -> List[int]:
        return list(range(len(self.robots)))

    def planner_for(self, rid: int) -> str:
        return self.robots[rid].planner or self.planner_type

    def validate(self) -> None:
        """Raise :class:`ConfigError` describing every problem found."""
        problems = []
        if len(self.robots) < 2:
            problems.append("need at least 2 robots")
        for i, r in enumerate(self.robots):
            if not self.workspace.contains(r.start[:2]):
                problems.append(f"robot {i} start {r.start[:2]} outside workspace")
            if not self.workspace.contains(r.goal):
                problems.append(f"robot {i} goal {r.goal} outside workspace")
            if (r.planner or self.planner_type) not in PLANNERS:
                problems.append(f"robot {i} planner {r.planner or self.planner_type!r} not in {PLANNERS}")
        if self.dt <= 0 or self.duration <= 0:
            problems.append("dt and duration must be positive")
        for name in ("measurement_period", "planner.replan_period"):
            period = self.measurement_period if name == "measurement_period" else self.planner.replan_period
            ratio = period / self.dt if self.dt > 0 else 0
            if period <= 0 or abs(ratio - round(ratio)) > 1e-6:
                problems.append(f"{name} must be a positive multiple of dt")
        if self.actuation_noise < 0:
            problems.append("actuation_noise must be >= 0")
        if any(v < 0 for v in self.initial_covariance):
            problems.append("initial_covariance entries must be >= 0")
        for e in self.events:
            if e.action not in ("kill", "revive"):
                problems.append(f"unknown event action {e.action!r}")
            if not 0 <= e.robot < len(self.robots):
                problems.append(f"event robot {e.robot} does not exist")
        if problems:
            raise ConfigError("; ".join(problems))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        planner = dataclasses.asdict(self.planner)
        sensors = dataclasses.asdict(self.sensors)
        patches = sensors.pop("noise_patches")
        sensors["noise_patches"] = [
            {"center": list(c), "radius": r, "scale": s} for c, r, s in patches
        ]
        return {
            "seed": self.seed,
            "dt": self.dt,
            "duration": self.duration,
            "workspace": self.workspace.as_list(),
            "planner_type": self.planner_type,
            "robots": [
                {"start": list(r.start), "goal": list(r.goal), **({"planner": r.planner} if r.planner else {})}
                for r in self.robots
            ],
            "robot": {
                "omega_max": self.omega_max,
                "heading_gain": self.heading_gain,
                "arrive_tolerance": self.arrive_tolerance,
                "actuation_noise": self.actuation_noise,
            },
            "measurement_period": self.measurement_period,
            "initial_covariance": list(self.initial_covariance),
            "stop_at_goals": self.stop_at_goals,
            "naive_collision": self.naive_collision,
            "record_candidates": self.record_candidates,
            "sensors": sensors,
            "planner": planner,
            "estimator": {
                "process_noise": np.diag(self.estimator.Q).tolist(),
                "gating": self.estimator.gating,
                "gate_threshold": self.estimator.gate_threshold,
            },
            "bus": {"delay": self.bus_delay, "drop_rate": self.bus_drop_rate},
            "events": [dataclasses.asdict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScenarioConfig":
        d = dict(d or {})
        known = {
            "seed", "dt", "duration", "workspace", "planner_type", "robots", "robot",
            "measurement_period", "initial_covariance", "stop_at_goals", "naive_collision",
            "record_candidates", "sensors", "planner", "estimator", "bus", "events",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        try:
            for key in ("seed",):
                if key in d:
                    cfg.seed = int(d[key])
            for key in ("dt", "duration", "measurement_period"):
                if key in d:
                    setattr(cfg, key, float(d[key]))
            for key in ("stop_at_goals", "naive_collision", "record_candidates"):
                if key in d:
                    setattr(cfg, key, bool(d[key]))
            if "planner_type" in d:
                cfg.planner_type = str(d["planner_type"])
            if "workspace" in d:
                cfg.workspace = Bounds.from_seq(d["workspace"])
            if "robots" in d:
                robots = []
                for r in d["robots"]:
                    start = [float(v) for v in r["start"]]
                    if len(start) == 2:
                        start.append(0.0)
                    robots.append(
                        RobotSpec(tuple(start), tuple(float(v) for v in r["goal"]), r.get("planner"))
                    )
                cfg.robots = robots
            robot = dict(d.get("robot", {}))
            for key in ("omega_max", "heading_gain", "arrive_tolerance", "actuation_noise"):
                if key in robot:
                    setattr(cfg, key, float(robot.pop(key)))
            if robot:
                raise ConfigError(f"unknown robot keys: {sorted(robot)}")
            if "initial_covariance" in d:
                cfg.initial_covariance = tuple(float(v) for v in d["initial_covariance"])
            if "sensors" in d:
                s = dict(d["sensors"])
                patches = [
                    (tuple(float(c) for c in p["center"]), float(p["radius"]), float(p["scale"]))
                    for p in s.pop("noise_patches", [])
                ]
                cfg.sensors = SensorConfig(noise_patches=patches, **s)
            if "planner" in d:
                cfg.planner = PlannerConfig(**d["planner"])
            if "estimator" in d:
                e = dict(d["estimator"])
                q = e.pop("process_noise", None)
                kw = {k: e.pop(k) for k in ("gating", "gate_threshold") if k in e}
                if e:
                    raise ConfigError(f"unknown estimator keys: {sorted(e)}")
                if q is not None:
                    q = np.asarray(q, dtype=float)
                    kw["Q"] = np.diag(q) if q.ndim == 1 else q
                cfg.estimator = NoiseConfig(**kw)
            if "bus" in d:
                b = dict(d["bus"])
                cfg.bus_delay = float(b.pop("delay", 0.0))
                cfg.bus_drop_rate = float(b.pop("drop_rate", 0.0))
                if b:
                    raise ConfigError(f"unknown bus keys: {sorted(b)}")
            if "events" in d:
                cfg.events = [Event(float(e["time"]), str(e["action"]), int(e["robot"])) for e in d["events"]]
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid scenario config: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ScenarioConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new


# --------------------------------------------------------------------------
# kinematics and control


def step_kinematics(pose: Pose2D, cmd: VelocityCommand, dt: float, bounds: Optional[Bounds] = None) -> Pose2D:
    """Unicycle Euler step; positions leaving ``bounds`` are clipped to the edge."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = pose.x + cmd.v * dt * math.cos(pose.yaw)
    y = pose.y + cmd.v * dt * math.sin(pose.yaw)
    if bounds is not None:
        x, y = bounds.clip((x, y))
    return Pose2D(x, y, pose.yaw + cmd.omega * dt)


def waypoint_controller(
    est_pose: Pose2D,
    target,
    v_max: float,
    omega_max: float,
    heading_gain: float = 2.0,
    lookahead: float = 0.5,
    arrive_tolerance: float = 0.02,
) -> VelocityCommand:
    """Proportional heading controller on the estimated pose."""
    dx = target[0] - est_pose.x
    dy = target[1] - est_pose.y
    dist = math.hypot(dx, dy)
    if dist < arrive_tolerance:
        return VelocityCommand(0.0, 0.0)
    err = wrap_angle(math.atan2(dy, dx) - est_pose.yaw)
    omega = min(max(heading_gain * err, -omega_max), omega_max)
    v = min(v_max * max(0.0, math.cos(err)), dist / lookahead)
    return VelocityCommand(v, omega)


def plan_target(plan: TimedPlan, t: float) -> Tuple[float, float]:
    """Position on a timed plan at time ``t`` (held at either end)."""
    times = plan.times
    xy = plan.xy
    return (float(np.interp(t, times, xy[:, 0])), float(np.interp(t, times, xy[:, 1])))


# --------------------------------------------------------------------------
# trace


@dataclass
class Trace:
    """Complete record of one run.

    Per-step arrays are indexed ``[step, robot]``. ``plans`` holds one entry
    per planning event; candidate evaluations are kept only when the
    scenario asks for them.
    """

    config: Dict[str, Any]
    times: np.ndarray
    truth: np.ndarray
    est: np.ndarray
    cov: np.ndarray
    cmd: np.ndarray
    alive: np.ndarray
    plan_epoch: np.ndarray
    distance: np.ndarray
    swarm_dop: np.ndarray
    reached: np.ndarray
    plans: List[Dict[str, Any]] = field(default_factory=list)
    events: List[Dict[str, Any]] = field(default_factory=list)
    messages: Dict[str, int] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def n_robots(self) -> int:
        return self.truth.shape[1]

    def to_jsonl(self) -> str:
        buf = io.StringIO()

        def emit(rec):
            buf.write(json.dumps(rec, separators=(",", ":")))
            buf.write("\n")

        emit({"type": "header", "schema": TRACE_SCHEMA_VERSION, "version": __version__,
              "n_robots": self.n_robots, "n_steps": self.n_steps, "config": self.config})
        for k in range(self.n_steps):
            for i in range(self.n_robots):
                emit({
                    "type": "step", "step": k, "t": float(self.times[k]), "robot": i,
                    "alive": bool(self.alive[k, i]), "reached": bool(self.reached[k, i]),
                    "truth": self.truth[k, i].tolist(), "est": self.est[k, i].tolist(),
                    "cov": self.cov[k, i].ravel().tolist(), "cmd": self.cmd[k, i].tolist(),
                    "plan_epoch": int(self.plan_epoch[k, i]), "distance": float(self.distance[k, i]),
                    "swarm_dop": float(self.swarm_dop[k]),
                })
        for p in self.plans:
            emit({"type": "plan", **p})
        for e in self.events:
            emit({"type": "event", **e})
        emit({"type": "messages", **self.messages})
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.to_jsonl())
        except OSError as exc:
            raise OSError(f"cannot write trace to {path}: {exc}") from exc
        return path

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    @classmethod
    def blank(cls, config, n_steps: int, n_robots: int) -> "Trace":
        """Zero-filled trace of the given size."""
        return _blank(config, n_steps, n_robots)

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path) as fh:
            return cls.from_lines(fh)

    @classmethod
    def from_lines(cls, lines) -> "Trace":
        header = None
        steps, plans, events, messages = [], [], [], {}
        for line in lines:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "header":
                header = rec
            elif kind == "step":
                steps.append(rec)
            elif kind == "plan":
                plans.append(rec)
            elif kind == "event":
                events.append(rec)
            elif kind == "messages":
                messages = rec
        if header is None:
            raise ValueError("trace has no header record")
        if header.get("schema") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {header.get('schema')!r}")
        S, N = header["n_steps"], header["n_robots"]
        if len(steps) != S * N:
            raise ValueError(f"trace has {len(steps)} step records, expected {S * N}")
        tr = Trace.blank(header["config"], S, N)
        for rec in steps:
            k, i = rec["step"], rec["robot"]
            tr.times[k] = rec["t"]
            tr.alive[k, i] = rec["alive"]
            tr.reached[k, i] = rec["reached"]
            tr.truth[k, i] = rec["truth"]
            tr.est[k, i] = rec["est"]
            tr.cov[k, i] = np.reshape(rec["cov"], (3, 3))
            tr.cmd[k, i] = rec["cmd"]
            tr.plan_epoch[k, i] = rec["plan_epoch"]
            tr.distance[k, i] = rec["distance"]
            tr.swarm_dop[k] = rec["swarm_dop"]
        tr.plans, tr.events, tr.messages = plans, events, messages
        return tr


def _blank(config, S, N) -> Trace:
    return Trace(
        config=config,
        times=np.zeros(S),
        truth=np.zeros((S, N, 3)),
        est=np.zeros((S, N, 3)),
        cov=np.zeros((S, N, 3, 3)),
        cmd=np.zeros((S, N, 2)),
        alive=np.zeros((S, N), bool),
        plan_epoch=np.zeros((S, N), int),
        distance=np.zeros((S, N)),
        swarm_dop=np.zeros(S),
        reached=np.zeros((S, N), bool),
    )


# --------------------------------------------------------------------------
# agents and scheduler


class Agent:
    """One robot: its filter, plan, RNG streams and neighbor table."""

    def __init__(self, rid: int, spec: RobotSpec, cfg: ScenarioConfig, bus: MessageBus):
        self.id = rid
        self.goal = spec.goal
        self.kind = cfg.planner_for(rid)
        self.truth = Pose2D(*spec.start)
        self.state = EkfState(Pose2D(*spec.start), np.diag(cfg.initial_covariance), 0.0)
        self.cmd = VelocityCommand()
        self.plan = TimedPlan(rid, ((0.0, spec.start[0], spec.start[1]),), 0)
        self.epoch = 0
        self.alive = True
        self.reached = False
        self.distance = 0.0
        self.sensor_rng = np.random.default_rng([cfg.seed, rid, 1])
        self.planner_rng = np.random.default_rng([cfg.seed, rid, 2])
        self.motion_rng = np.random.default_rng([cfg.seed, rid, 3])
        self.table = bus.register(rid)

    def broadcast(self, now: float, bus: MessageBus) -> None:
        m = self.state.mean
        broadcast(self.id, m.x, m.y, scalar_uncertainty(self.state), self.plan, now, bus)


def run_scenario(cfg: ScenarioConfig) -> Trace:
    """Run one scenario to completion in lockstep and return its trace."""
    cfg.validate()
    dt = cfg.dt
    n_steps = int(math.floor(cfg.duration / dt + 1e-9)) + 1
    meas_every = int(round(cfg.measurement_period / dt))
    plan_every = int(round(cfg.planner.replan_period / dt))
    bounds = cfg.workspace
    noise_map = cfg.sensors.noise_map(bounds)
    pcfg = cfg.planner
    Q = cfg.estimator.Q

    bus = MessageBus(cfg.bus_delay, cfg.bus_drop_rate, np.random.default_rng([cfg.seed, 10_000]))
    agents = [Agent(i, spec, cfg, bus) for i, spec in enumerate(cfg.robots)]
    N = len(agents)
    tr = Trace.blank(cfg.to_dict(), n_steps, N)
    events = sorted(cfg.events, key=lambda e: (e.time, e.robot))
    ev_idx = 0
    last = 0

    for k in range(n_steps):
        t = k * dt
        while ev_idx < len(events) and events[ev_idx].time <= t + 1e-9:
            ev = events[ev_idx]
            ev_idx += 1
            a = agents[ev.robot]
            if ev.action == "kill" and a.alive:
                a.alive = False
                a.cmd = VelocityCommand()
                bus.unregister(a.id)
            elif ev.action == "revive" and not a.alive:
                a.alive = True
                a.table = bus.register(a.id)
            tr.events.append({"t": t, "action": ev.action, "robot": ev.robot})
        live = [a for a in agents if a.alive]

        if k > 0:
            for a in live:
                a.state = predict(a.state, a.cmd, dt, Q)

        if k % meas_every == 0:
            for a in live:
                a.broadcast(t, bus)
        bus.deliver(t)

        if k % meas_every == 0:
            truth_xy = {a.id: a.truth.xy for a in live}
            for a in live:
                nbrs = neighbor_set(a.table, t, pcfg.staleness_window)
                bundle = MeasurementBundle(
                    tuple(simulate_uwb_ranges(truth_xy, a.id, cfg.sensors.uwb_sigma, a.sensor_rng, t)),
                    simulate_vo(a.truth, a.cmd, noise_map, a.sensor_rng, t),
                    simulate_sun_sensor(a.truth.yaw, cfg.sensors.sun_sigma, a.sensor_rng, t),
                )
                a.state = update(a.state, bundle, [n.estimate for n in nbrs], cfg.estimator)

        if k % plan_every == 0:
            for a in live:
                a.epoch += 1
                nbrs = neighbor_set(a.table, t, pcfg.staleness_window)
                if a.kind == "naive" and not cfg.naive_collision:
                    a.plan = naive_plan(a.state.mean, a.goal, pcfg, t, a.id, a.epoch)
                    rec = {"t": t, "robot": a.id, "epoch": a.epoch, "planner": a.kind,
                           "alpha": 0.0, "beta": 1.0, "chosen": None,
                           "waypoint": list(a.goal)}
                else:
                    res = select_waypoint(
                        a.state.mean, a.goal, a.state, nbrs, pcfg, bounds, a.planner_rng,
                        t, a.id, a.epoch, use_dop=(a.kind == "proposed"),
                    )
                    a.plan = res.plan
                    rec = {"t": t, "robot": a.id, "epoch": a.epoch, "planner": a.kind,
                           "alpha": res.alpha, "beta": res.beta, "chosen": res.chosen,
                           "waypoint": list(res.waypoint), "neighbors": [n.estimate.robot_id for n in nbrs]}
                    if cfg.record_candidates:
                        rec["candidates"] = [e.to_dict() for e in res.evaluations]
                tr.plans.append(rec)

        alive_xy = []
        for a in agents:
            if a.alive:
                target = plan_target(a.plan, t + pcfg.plan_dt)
                a.cmd = waypoint_controller(
                    a.state.mean, target, pcfg.v_max, cfg.omega_max, cfg.heading_gain,
                    pcfg.plan_dt, cfg.arrive_tolerance,
                )
                if a.truth.distance_to(a.goal) <= pcfg.goal_tolerance:
                    a.reached = True
                alive_xy.append(a.truth.xy)
            i = a.id
            m = a.state.mean
            tr.truth[k, i] = (a.truth.x, a.truth.y, a.truth.yaw)
            tr.est[k, i] = (m.x, m.y, m.yaw)
            tr.cov[k, i] = a.state.covariance
            tr.cmd[k, i] = (a.cmd.v, a.cmd.omega)
            tr.alive[k, i] = a.alive
            tr.reached[k, i] = a.reached
            tr.plan_epoch[k, i] = a.epoch
            tr.distance[k, i] = a.distance
        tr.times[k] = t
        tr.swarm_dop[k] = float(swarm_dop_sum(np.array(alive_xy))) if len(alive_xy) else 0.0
        last = k

        if cfg.stop_at_goals and all(a.reached for a in agents if a.alive):
            break

        for a in live:
            executed = a.cmd
            if cfg.actuation_noise > 0:
                n1, n2 = a.motion_rng.normal(0.0, cfg.actuation_noise, size=2)
                executed = VelocityCommand(a.cmd.v * (1 + n1), a.cmd.omega * (1 + n2))
            executed = executed.clamped(pcfg.v_max, cfg.omega_max)
            new = step_kinematics(a.truth, executed, dt, bounds)
            a.distance += math.hypot(new.x - a.truth.x, new.y - a.truth.y)
            a.truth = new

    if last + 1 < n_steps:
        tr = _truncate(tr, last + 1)
    tr.messages = {"delivered": bus.delivered, "dropped": bus.dropped}
    return tr


def _truncate(tr: Trace, n: int) -> Trace:
    return dataclasses.replace(
        tr,
        times=tr.times[:n], truth=tr.truth[:n], est=tr.est[:n], cov=tr.cov[:n], cmd=tr.cmd[:n],
        alive=tr.alive[:n], plan_epoch=tr.plan_epoch[:n], distance=tr.distance[:n],
        swarm_dop=tr.swarm_dop[:n], reached=tr.reached[:n],
    )
