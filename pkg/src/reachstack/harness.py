"""Seeded closed-loop highway episodes: 1 Hz planning, 50 Hz control and metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import ValueTable
from .metrics import (A_LAT_MAX, A_LONG_MAX, AggregateStats, Body, MetricsRecord, aggregate,
                      bodies_overlap, threat_metrics)
from .planner import PlannerConfig, plan_highway
from .rss import RSSParams
from .safety import ControllerKind, SafetyController, SafetyControllerConfig
from .traffic import DriverPopulation, ParamArrays, idm_step, mobil_targets, sample_driver_params
from .vehicles import (CarControl, CarState, LaneGeometry, PlannerState, TrackingGains, VehicleParams,
                       planner_transition, step_car, tracking_control)

log = logging.getLogger(__name__)


class SpawnError(ValueError):
    """The requested traffic cannot be placed without overlap."""


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int = 0
    duration_s: float = 30.0
    n_other_cars: int = 100
    n_lanes: int = 4
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    controller: SafetyControllerConfig = field(default_factory=lambda: SafetyControllerConfig(kind="None"))
    population: DriverPopulation = field(default_factory=DriverPopulation)
    spawn_gap: tuple[float, float] = (15.0, 40.0)
    spawn_speed: tuple[float, float] = (18.0, 27.0)
    robot_speed: float = 20.0
    robot_lane: int = 0
    road_length: float = 5000.0
    dt: float = 0.02
    replan_every: int = 50
    lane_change_s: float = 2.0
    lane_width: float = 4.0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    gains: TrackingGains = field(default_factory=TrackingGains)
    rss: RSSParams = field(default_factory=RSSParams)
    a_long_max: float = A_LONG_MAX
    a_lat_max: float = A_LAT_MAX

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.n_other_cars < 0:
            raise ValueError("n_other_cars must be nonnegative")
        if self.n_lanes < 1 or not 0 <= self.robot_lane < self.n_lanes:
            raise ValueError("robot lane must be one of the n_lanes lanes")
        if self.dt <= 0 or self.replan_every < 1:
            raise ValueError("dt and replan_every must be positive")
        lo, hi = self.spawn_gap
        if not 0 <= lo <= hi:
            raise ValueError("spawn_gap must be an ordered nonnegative range")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration_s / self.dt))

    @property
    def lanes(self) -> LaneGeometry:
        return LaneGeometry(self.n_lanes, self.lane_width)


@dataclass
class CollisionEvent:
    t: float
    agent_id: int


@dataclass
class EpisodeResult:
    records: list[MetricsRecord]
    stats: AggregateStats
    trajectory: np.ndarray  # (ticks, 5): t, px, py, theta, v of the robot
    collisions: list[CollisionEvent]
    plans: int


class Traffic:
    """Kinematic other cars driven by per-driver IDM/MOBIL with a lateral ramp on lane changes."""

    def __init__(self, s, lane, v, params, lengths, widths, lanes: LaneGeometry, change_s: float):
        self.ids = np.arange(len(s))
        self.s = np.asarray(s, float)
        self.lane = np.asarray(lane, int)
        self.v = np.asarray(v, float)
        self.y = lanes.width * self.lane.astype(float)
        self.y_from = self.y.copy()
        self.change_t = np.full(len(s), np.inf)
        self.params = params  # list of (IDMParams, MOBILParams)
        self.lengths = np.asarray(lengths, float)
        self.widths = np.asarray(widths, float)
        self.lanes = lanes
        self.change_s = change_s
        self._arrays = None

    def __len__(self) -> int:
        return len(self.s)

    def remove(self, mask):
        keep = ~np.asarray(mask, bool)
        for name in ("ids", "s", "lane", "v", "y", "y_from", "change_t", "lengths", "widths"):
            setattr(self, name, getattr(self, name)[keep])
        self.params = [p for p, k in zip(self.params, keep) if k]
        self._arrays = None

    def param_arrays(self, robot_params) -> ParamArrays:
        if self._arrays is None:
            self._arrays = ParamArrays.from_params([robot_params] + self.params)
        return self._arrays

    def vy(self) -> np.ndarray:
        moving = self.change_t < self.change_s
        target = self.lanes.width * self.lane
        return np.where(moving, (target - self.y_from) / self.change_s, 0.0)

    def states(self) -> list[CarState]:
        vy = self.vy()
        return [CarState(float(s), float(y), math.atan2(float(w), max(float(v), 1e-6)), float(v))
                for s, y, w, v in zip(self.s, self.y, vy, self.v)]

    def bodies(self) -> list[Body]:
        vy = self.vy()
        return [Body(float(s), float(y), math.atan2(float(w), max(float(v), 1e-6)), float(v), float(w), float(l),
                     float(wd)) for s, y, w, v, l, wd in zip(self.s, self.y, vy, self.v, self.lengths, self.widths)]

    def _straddling(self, y, lane, width: float = 2.0):
        """Indices of cars whose footprint reaches into a lane other than ``lane``, and that lane."""
        half = 0.5 * (self.lanes.width + width) - 1e-6
        other = np.where(y > self.lanes.width * lane, lane + 1, lane - 1)
        reach = (np.abs(y - self.lanes.width * other) < half) & (other >= 0) & (other < self.lanes.n_lanes)
        idx = np.flatnonzero(reach)
        return idx, other[idx]

    def step(self, robot: CarState, robot_length: float, robot_params, dt: float):
        """Advance one tick; the robot is an obstacle in every lane its footprint reaches."""
        n = len(self)
        if n == 0:
            return
        s = np.concatenate(([robot.px], self.s))
        lane = np.concatenate(([self.lanes.nearest(robot.py)], self.lane))
        v = np.concatenate(([robot.v], self.v))
        lengths = np.concatenate(([robot_length], self.lengths))
        y = np.concatenate(([robot.py], self.y))
        p = self.param_arrays(robot_params)
        # a car straddling two lanes blocks both: add an obstacle-only copy in the second lane
        ghost_of, ghost_lane = self._straddling(y, lane)
        s_all = np.concatenate((s, s[ghost_of]))
        v_all = np.concatenate((v, v[ghost_of]))
        len_all = np.concatenate((lengths, lengths[ghost_of]))
        lane_all = np.concatenate((lane, ghost_lane))
        p_all = p.select(np.concatenate((np.arange(n + 1), ghost_of)))
        eligible = np.concatenate(([False], self.change_t >= self.change_s, np.zeros(len(ghost_of), bool)))
        target = mobil_targets(s_all, lane_all, v_all, len_all, p_all, self.lanes.n_lanes, eligible)[: n + 1]
        changed = target[1:] != self.lane
        if changed.any():
            self.y_from = np.where(changed, self.y, self.y_from)
            self.change_t = np.where(changed, 0.0, self.change_t)
            self.lane = target[1:].copy()
            lane_all[1: n + 1] = self.lane
            ghost_of, ghost_lane = self._straddling(y, lane_all[: n + 1])
            s_all = np.concatenate((s, s[ghost_of]))
            v_all = np.concatenate((v, v[ghost_of]))
            len_all = np.concatenate((lengths, lengths[ghost_of]))
            lane_all = np.concatenate((lane_all[: n + 1], ghost_lane))
            p_all = p.select(np.concatenate((np.arange(n + 1), ghost_of)))
        acc = idm_step(s_all, lane_all, v_all, len_all, p_all)[1: n + 1]
        v_new = np.maximum(self.v + acc * dt, 0.0)
        self.s = self.s + 0.5 * (self.v + v_new) * dt
        self.v = v_new
        self.change_t = self.change_t + dt
        frac = np.minimum(self.change_t / self.change_s, 1.0)
        self.y = self.y_from + (self.lanes.width * self.lane - self.y_from) * frac


def spawn(cfg: EpisodeConfig, rng: np.random.Generator) -> tuple[CarState, Traffic]:
    """Robot rearmost at ``robot_speed``; others ahead with uniform bumper gaps per lane."""
    veh, lanes = cfg.vehicle, cfg.lanes
    robot = CarState(0.0, lanes.center(cfg.robot_lane), 0.0, cfg.robot_speed)
    n = cfg.n_other_cars
    lane_of = np.arange(n) % cfg.n_lanes
    s = np.empty(n)
    front = np.full(cfg.n_lanes, robot.px + 0.5 * veh.length)  # front bumper of the last car per lane
    for i in range(n):
        ln = lane_of[i]
        gap = rng.uniform(*cfg.spawn_gap)
        s[i] = front[ln] + gap + 0.5 * veh.length
        front[ln] = s[i] + 0.5 * veh.length
    if n and front.max() > cfg.road_length:
        raise SpawnError(f"{n} cars do not fit on {cfg.road_length} m of road")
    v = rng.uniform(*cfg.spawn_speed, size=n)
    params = [sample_driver_params(cfg.population, rng) for _ in range(n)]
    traffic = Traffic(s, lane_of, v, params, np.full(n, veh.length), np.full(n, veh.width), lanes,
                      cfg.lane_change_s)
    return robot, traffic


def _robot_body(z: CarState, veh: VehicleParams) -> Body:
    return Body(z.px, z.py, z.theta, z.v * math.cos(z.theta), z.v * math.sin(z.theta), veh.length, veh.width)


def run_episode(cfg: EpisodeConfig, table: ValueTable | None = None) -> EpisodeResult:
    rng = np.random.default_rng(cfg.seed)
    robot, traffic = spawn(cfg, rng)
    veh, lanes, w = cfg.vehicle, cfg.lanes, cfg.planner.weights
    needs_table = cfg.controller.kind is ControllerKind.SPC or w.gamma_R < 1.0
    if needs_table and table is None:
        raise ValueError("this configuration needs a value table")
    controller = SafetyController(cfg.controller, table, cfg.rss, veh.length, veh.v_floor, veh.max_steer)
    robot_params = (cfg.population.idm, cfg.population.mobil)
    setpoint = PlannerState(robot.px, cfg.robot_lane, robot.v)

    records: list[MetricsRecord] = []
    trajectory = np.empty((cfg.n_ticks, 5))
    collisions: list[CollisionEvent] = []
    plans = 0
    for k in range(cfg.n_ticks):
        t = k * cfg.dt
        if k % cfg.replan_every == 0:
            v_plan = min(max(robot.v, w.v_min), w.v_max)
            root = PlannerState(robot.px, setpoint.lane, v_plan)
            others = [PlannerState(float(s), int(ln), float(v)) for s, ln, v in zip(traffic.s, traffic.lane, traffic.v)]
            plan = plan_highway(root, others, cfg.planner, table, cfg.population, veh.length, cfg.lane_width)
            setpoint = planner_transition(root, plan.actions[0], cfg.planner.dt_plan, (w.v_min, w.v_max),
                                          (w.lane_min, min(w.lane_max, cfg.n_lanes - 1)))
            plans += 1

        other_states = traffic.states()
        desired = tracking_control(robot, setpoint, cfg.gains, veh, lanes)
        result = controller.filter(robot, other_states, desired)
        control = result.control
        if result.values:
            min_value = float(min(result.values))
        elif table is not None and other_states:
            values, _, _ = controller.pair_values(robot, [other_states[j] for j in controller.nearest(robot, other_states)])
            min_value = float(values.min())
        else:
            min_value = math.nan

        ego = _robot_body(robot, veh)
        ttc_v, btn_v, stn_v = threat_metrics(ego, traffic.bodies(), cfg.a_long_max, cfg.a_lat_max)
        a = min(max(control.a, veh.a_min), veh.a_max)
        control = CarControl(control.delta, a)
        trajectory[k] = (t, robot.px, robot.py, robot.theta, robot.v)

        # advance the world
        traffic.step(robot, veh.length, robot_params, cfg.dt)
        robot = step_car(robot, control, cfg.dt, veh.length)
        hit = np.zeros(len(traffic), bool)
        ego_after = _robot_body(robot, veh)
        for j, body in enumerate(traffic.bodies()):
            if abs(body.x - robot.px) < 10.0 and bodies_overlap(ego_after, body):
                hit[j] = True
                collisions.append(CollisionEvent(t + cfg.dt, int(traffic.ids[j])))
                log.info("collision at t=%.2f with car %d", t + cfg.dt, traffic.ids[j])
        if hit.any():
            traffic.remove(hit)
        records.append(MetricsRecord(t, ttc_v, btn_v, stn_v, float(trajectory[k, 4]), abs(a),
                                     result.intervened, min_value, int(hit.sum())))
    return EpisodeResult(records, aggregate(records), trajectory, collisions, plans)


def run_batch(cfg: EpisodeConfig, episodes: int, base_seed: int = 0, table: ValueTable | None = None):
    """Episodes with seeds ``base_seed .. base_seed + episodes - 1``, in seed order."""
    return [run_episode(replace(cfg, seed=base_seed + i), table) for i in range(episodes)]
