"""Optimistic tree search over the highway MDP with an HJI-shaped reward.

The planner state of each car is ``(s, lane, v)``. Other cars in the
generative model follow mean-parameter IDM/MOBIL; the robot follows the five
discrete planner actions. The per-step reward blends the lane/speed/crash
reward with the smallest pairwise reachability value.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .grid import ValueTable
from .traffic import DriverPopulation, ParamArrays, idm_step, mobil_targets
from .vehicles import Action, PlannerState

N_ACTIONS = len(Action)
EMPTY_HJI_VALUE = 5.0


@dataclass(frozen=True)
class RewardWeights:
    gamma1: float = 0.4
    gamma2: float = 1.0
    gamma3: float = 1.0
    v_min: float = 15.0
    v_max: float = 30.0
    lane_min: int = 0
    lane_max: int = 3
    gamma_R: float = 1.0
    discount_gamma: float = 0.9
    hji_clip: tuple[float, float] = (-20.0, EMPTY_HJI_VALUE)

    def __post_init__(self):
        if not 0.0 <= self.gamma_R <= 1.0:
            raise ValueError("gamma_R must lie in [0, 1]")
        if not 0.0 < self.discount_gamma < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.hji_clip[0] > self.hji_clip[1]:
            raise ValueError("hji_clip must be an ordered pair")

    def max_step_reward(self) -> float:
        """Upper bound of the blended per-step reward."""
        return self.gamma_R * (self.gamma1 + self.gamma2) + (1.0 - self.gamma_R) * self.hji_clip[1]


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 4
    dt_plan: float = 1.0
    budget: int = 300
    n_agents: int = 6
    weights: RewardWeights = field(default_factory=RewardWeights)


def reward(x_r: PlannerState, collided: bool, w: RewardWeights) -> float:
    """Speed and lane reward minus the crash penalty."""
    r = w.gamma1 * (x_r.v - w.v_min) / (w.v_max - w.v_min)
    if w.lane_max > w.lane_min:
        r += w.gamma2 * (x_r.lane - w.lane_min) / (w.lane_max - w.lane_min)
    return r - w.gamma3 * float(collided)


def hji_reward(x_rel_all: Sequence, table: ValueTable | None, clip: tuple[float, float] | None = None,
               empty_value: float = EMPTY_HJI_VALUE) -> float:
    """Smallest interpolated pairwise value; ``empty_value`` with no agents."""
    if table is None or len(x_rel_all) == 0:
        value = empty_value
    else:
        value = float(np.min(table.interpolate(np.asarray(x_rel_all, dtype=float).reshape(-1, 5))))
    return value if clip is None else min(max(value, clip[0]), clip[1])


def total_reward(r: float, r_hji: float, gamma_R: float) -> float:
    return gamma_R * r + (1.0 - gamma_R) * r_hji


# ---------------------------------------------------------------------------
# optimistic planning
# ---------------------------------------------------------------------------

class GenerativeModel(Protocol):
    def children(self, state) -> list[tuple[object, float]]:
        """Successor state and reward for each action, in action order."""


@dataclass
class SearchNode:
    state: object
    path: tuple[int, ...]
    value: float  # discounted reward accumulated along the path
    b_value: float = math.inf
    children: list["SearchNode"] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.path)


@dataclass
class PlanResult:
    actions: list[int]
    value: float
    expansions: int
    reward_evaluations: int
    complete: bool


def op_plan(root_state, model: GenerativeModel, budget: int, horizon: int, discount: float,
            max_reward: float = 1.0, idle_action: int = int(Action.IDLE)) -> PlanResult:
    """Optimistic planning with a finite horizon.

    Leaves are expanded in order of their upper bound ``value + max_reward *
    sum_{i=depth}^{horizon-1} discount^i``; ties go to the lexicographically
    smallest action path. The search stops early once the best bound belongs
    to a full-horizon leaf, whose plan is then optimal.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")

    def bound(node: SearchNode) -> float:
        d = node.depth
        return node.value + max_reward * (discount**d - discount**horizon) / (1.0 - discount)

    root = SearchNode(root_state, (), 0.0)
    root.b_value = bound(root)
    heap = [(-root.b_value, root.path, root)]
    complete: list[SearchNode] = []
    deepest: list[SearchNode] = [root]
    expansions = evaluations = 0
    while heap:
        neg_b, _, node = heap[0]
        if node.depth == horizon:
            heapq.heappop(heap)
            return PlanResult(list(node.path), node.value, expansions, evaluations, True)
        if expansions >= budget:
            break
        heapq.heappop(heap)
        expansions += 1
        successors = model.children(node.state)
        evaluations += len(successors)
        scale = discount ** node.depth
        for action, (child_state, r) in enumerate(successors):
            child = SearchNode(child_state, node.path + (action,), node.value + scale * r)
            child.b_value = bound(child)
            node.children.append(child)
            heapq.heappush(heap, (-child.b_value, child.path, child))
            if child.depth == horizon:
                complete.append(child)
            if child.depth > deepest[0].depth:
                deepest = [child]
            elif child.depth == deepest[0].depth:
                deepest.append(child)
    if complete:
        best = min(complete, key=lambda n: (-n.value, n.path))
        return PlanResult(list(best.path), best.value, expansions, evaluations, True)
    best = min(deepest, key=lambda n: (-n.value, n.path))
    actions = list(best.path) + [idle_action] * (horizon - best.depth)
    return PlanResult(actions, best.value, expansions, evaluations, False)


# ---------------------------------------------------------------------------
# highway generative model
# ---------------------------------------------------------------------------

@dataclass
class JointState:
    """Planner states of the robot (index 0) and the modelled agents."""
    s: np.ndarray
    lane: np.ndarray
    v: np.ndarray

    @property
    def robot(self) -> PlannerState:
        return PlannerState(float(self.s[0]), int(self.lane[0]), float(self.v[0]))


class HighwayModel:
    """Deterministic mean-parameter traffic model used inside the search."""

    def __init__(self, cfg: PlannerConfig, n_agents: int, table: ValueTable | None = None,
                 population: DriverPopulation = DriverPopulation(), car_length: float = 5.0,
                 lane_width: float = 4.0):
        self.cfg = cfg
        self.w = cfg.weights
        self.table = table if cfg.weights.gamma_R < 1.0 else None
        self.n_lanes = self.w.lane_max - self.w.lane_min + 1
        self.lane_width = lane_width
        n = n_agents + 1
        mean = [(population.idm, population.mobil)] * n
        self.params = ParamArrays.from_params(mean)
        self.lengths = np.full(n, car_length)
        self.eligible = np.arange(n) > 0
        # per action: speed change and lane change of the robot
        self._dv = np.array([1.0, -1.0, 0.0, 0.0, 0.0])
        self._dl = np.array([0, 0, 1, -1, 0])

    def children(self, state: JointState) -> list[tuple[JointState, float]]:
        w, dt = self.w, self.cfg.dt_plan
        B = N_ACTIONS
        s = np.broadcast_to(state.s, (B, state.s.size)).copy()
        lane = np.broadcast_to(state.lane, (B, state.lane.size)).copy()
        v = np.broadcast_to(state.v, (B, state.v.size)).copy()
        lengths = np.broadcast_to(self.lengths, s.shape)

        # robot action
        old_lane = lane.copy()
        lane[:, 0] = np.clip(lane[:, 0] + self._dl, w.lane_min, w.lane_max)
        new_v0 = np.clip(v[:, 0] + self._dv, w.v_min, w.v_max)

        # other cars: MOBIL then IDM in the chosen lanes
        others_lane = mobil_targets(s, lane, v, lengths, self.params, self.n_lanes, self.eligible)
        lane[:, 1:] = others_lane[:, 1:]
        acc = idm_step(s, lane, v, lengths, self.params)
        s_new = s + v * dt + 0.5 * acc * dt**2
        v_new = np.maximum(v + acc * dt, 0.0)
        stopped = (v + acc * dt) < 0
        s_new = np.where(stopped & (acc < 0), s + 0.5 * v * v / np.maximum(-acc, 1e-9), s_new)
        s_new[:, 0] = s[:, 0] + v[:, 0] * dt
        v_new[:, 0] = new_v0

        # swept overlap at planner resolution; lane changes occupy both lanes
        d0 = s[:, 1:] - s[:, :1]
        d1 = s_new[:, 1:] - s_new[:, :1]
        min_sep = np.where(np.sign(d0) != np.sign(d1), 0.0, np.minimum(np.abs(d0), np.abs(d1)))
        reach = 0.5 * (lengths[:, 1:] + lengths[:, :1])
        share = ((old_lane[:, 1:] == old_lane[:, :1]) | (old_lane[:, 1:] == lane[:, :1])
                 | (lane[:, 1:] == old_lane[:, :1]) | (lane[:, 1:] == lane[:, :1]))
        collided = np.any(share & (min_sep < reach), axis=1)

        r = w.gamma1 * (new_v0 - w.v_min) / (w.v_max - w.v_min)
        if w.lane_max > w.lane_min:
            r = r + w.gamma2 * (lane[:, 0] - w.lane_min) / (w.lane_max - w.lane_min)
        r = r - w.gamma3 * collided
        if self.table is not None:
            r_hji = self._hji(s_new, lane, v_new)
            r = w.gamma_R * r + (1.0 - w.gamma_R) * r_hji
        return [(JointState(s_new[k], lane[k], v_new[k]), float(r[k])) for k in range(B)]

    def _hji(self, s, lane, v) -> np.ndarray:
        B, n = s.shape
        if n == 1:
            return np.full(B, min(EMPTY_HJI_VALUE, self.w.hji_clip[1]))
        x = np.empty((B, n - 1, 5))
        x[..., 0] = s[:, :1] - s[:, 1:]
        x[..., 1] = self.lane_width * (lane[:, :1] - lane[:, 1:])
        x[..., 2] = 0.0
        x[..., 3] = v[:, :1]
        x[..., 4] = v[:, 1:]
        values = self.table.interpolate(x.reshape(-1, 5)).reshape(B, n - 1).min(axis=1)
        return np.clip(values, *self.w.hji_clip)


def plan_highway(robot: PlannerState, others: Sequence[PlannerState], cfg: PlannerConfig,
                 table: ValueTable | None = None, population: DriverPopulation = DriverPopulation(),
                 car_length: float = 5.0, lane_width: float = 4.0) -> PlanResult:
    """Plan from the robot's planner state and the nearest agents' states."""
    nearest = sorted(others, key=lambda o: abs(o.s - robot.s))[: cfg.n_agents]
    model = HighwayModel(cfg, len(nearest), table, population, car_length, lane_width)
    root = JointState(
        np.array([robot.s] + [o.s for o in nearest], dtype=float),
        np.array([robot.lane] + [o.lane for o in nearest], dtype=int),
        np.array([robot.v] + [o.v for o in nearest], dtype=float),
    )
    w = cfg.weights
    return op_plan(root, model, cfg.budget, cfg.horizon, w.discount_gamma, w.max_step_reward())
