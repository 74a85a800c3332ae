"""Run configuration: JSON blocks mapped onto the package's dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .grid import GridSpec
from .harness import EpisodeConfig
from .hji import DEFAULT_GRID, RelDynamicsBounds, SolverConfig
from .planner import PlannerConfig, RewardWeights
from .rss import RSSParams
from .safety import ControllerKind, Mode, SafetyControllerConfig
from .tablefile import default_table_dir
from .traffic import DriverPopulation


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridBlock:
    lower: tuple[float, ...] = DEFAULT_GRID.lower
    upper: tuple[float, ...] = DEFAULT_GRID.upper
    node_counts: tuple[int, ...] = DEFAULT_GRID.node_counts
    periodic: tuple[bool, ...] = DEFAULT_GRID.periodic

    def spec(self) -> GridSpec:
        return GridSpec(self.lower, self.upper, self.node_counts, self.periodic)


@dataclass(frozen=True)
class SolverBlock:
    cfl_number: float = 0.5
    time_horizon_tau: float = 3.0
    dissipation_margin: float = 1.1
    precision: int = 8

    def solver_config(self) -> SolverConfig:
        return SolverConfig(cfl_number=self.cfl_number, time_horizon_tau=self.time_horizon_tau,
                            dissipation_margin=self.dissipation_margin)


@dataclass(frozen=True)
class PlannerBlock:
    kind: str = "HJOP"  # OP ignores gamma_R (plain reward)
    gamma_R: float = 0.9
    budget: int = 300
    horizon: int = 4
    discount: float = 0.9
    n_agents: int = 6
    gamma1: float = 0.4
    gamma2: float = 1.0
    gamma3: float = 1.0
    v_min: float = 15.0
    v_max: float = 30.0
    hji_clip: tuple[float, float] = (-20.0, 5.0)

    def planner_config(self, n_lanes: int) -> PlannerConfig:
        if self.kind not in ("OP", "HJOP"):
            raise ConfigError(f"planner kind must be OP or HJOP, got {self.kind!r}")
        w = RewardWeights(gamma1=self.gamma1, gamma2=self.gamma2, gamma3=self.gamma3, v_min=self.v_min,
                          v_max=self.v_max, lane_min=0, lane_max=n_lanes - 1,
                          gamma_R=1.0 if self.kind == "OP" else self.gamma_R,
                          discount_gamma=self.discount, hji_clip=self.hji_clip)
        return PlannerConfig(horizon=self.horizon, budget=self.budget, n_agents=self.n_agents, weights=w)


@dataclass(frozen=True)
class ControllerBlock:
    kind: ControllerKind = ControllerKind.SPC
    mode: Mode = Mode.MI
    epsilon: float = 0.5
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float = 1.0
    n_agents: int = 6
    rss_margin: float = 0.5


@dataclass(frozen=True)
class ScenarioBlock:
    duration_s: float = 30.0
    n_other_cars: int = 100
    n_lanes: int = 4
    spawn_gap: tuple[float, float] = (15.0, 40.0)
    spawn_speed: tuple[float, float] = (18.0, 27.0)
    robot_speed: float = 20.0
    robot_lane: int = 0
    dt: float = 0.02
    replan_every: int = 50
    lane_change_s: float = 2.0
    lane_width: float = 4.0


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "runs"
    name: str | None = None
    table_path: str | None = None
    episodes: int = 1
    base_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    dynamics_bounds: RelDynamicsBounds = field(default_factory=RelDynamicsBounds)
    rss: RSSParams = field(default_factory=RSSParams)
    solver: SolverBlock = field(default_factory=SolverBlock)
    traffic: DriverPopulation = field(default_factory=DriverPopulation)
    planner: PlannerBlock = field(default_factory=PlannerBlock)
    controller: ControllerBlock = field(default_factory=ControllerBlock)
    scenario: ScenarioBlock = field(default_factory=ScenarioBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def __post_init__(self):
        if self.output.episodes < 1:
            raise ConfigError("episode count must be at least 1")

    @property
    def name(self) -> str:
        if self.output.name:
            return self.output.name
        parts = [self.planner.kind, self.controller.kind.value]
        if self.controller.kind is not ControllerKind.NONE:
            parts.append(self.controller.mode.value)
        return "-".join(parts)

    @property
    def needs_table(self) -> bool:
        return self.planner.kind == "HJOP" or self.controller.kind is ControllerKind.SPC

    def table_key(self) -> str:
        """Content hash of everything that determines the value table."""
        blob = json.dumps({k: to_dict(getattr(self, k)) for k in ("grid", "dynamics_bounds", "rss", "solver")},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def table_path(self) -> Path:
        if self.output.table_path:
            return Path(self.output.table_path)
        return default_table_dir() / f"brt-{self.table_key()}.hjvt"

    def controller_config(self) -> SafetyControllerConfig:
        c = self.controller
        return SafetyControllerConfig(epsilon=c.epsilon, mode=c.mode, kind=c.kind, lambda1=c.lambda1,
                                      lambda2=c.lambda2, lambda3=c.lambda3, bounds=self.dynamics_bounds,
                                      n_agents=c.n_agents, rss_margin=c.rss_margin)

    def episode_config(self, seed: int) -> EpisodeConfig:
        sc = self.scenario
        return EpisodeConfig(
            seed=seed, duration_s=sc.duration_s, n_other_cars=sc.n_other_cars, n_lanes=sc.n_lanes,
            planner=self.planner.planner_config(sc.n_lanes), controller=self.controller_config(),
            population=self.traffic, spawn_gap=sc.spawn_gap, spawn_speed=sc.spawn_speed,
            robot_speed=sc.robot_speed, robot_lane=sc.robot_lane, dt=sc.dt, replan_every=sc.replan_every,
            lane_change_s=sc.lane_change_s, lane_width=sc.lane_width, rss=self.rss,
        )


# ---------------------------------------------------------------------------
# dict <-> dataclass
# ---------------------------------------------------------------------------

def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries")
        return tuple(_convert(a, v, where) for a, v in zip(args, value))
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def from_dict(cls, data, where: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}".lstrip(".")) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from None


def parse_config(data: dict) -> RunConfig:
    return from_dict(RunConfig, data)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are JSON, falling back to plain strings."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return data


def load_config(path, overrides: list[str] = ()) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text()) if path else {}
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(apply_overrides(data, list(overrides)))
