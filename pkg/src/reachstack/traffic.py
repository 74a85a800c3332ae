"""IDM car-following and MOBIL lane changes for the non-robot traffic.

Scalar entry points (:func:`idm_accel`, :func:`mobil_decide`) follow the
textbook formulas. :func:`lane_neighbors`, :func:`idm_step` and
:func:`mobil_targets` evaluate the same rules for whole vehicle arrays (with
optional leading batch axes) and are what the simulator and the planner's
generative model call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

# braking used for overlapping cars and as the lower clamp of IDM
B_MAX_PHYSICAL = 9.0


@dataclass(frozen=True)
class IDMParams:
    v0: float = 25.0
    T: float = 1.5
    s0: float = 2.0
    a_idm: float = 1.5
    b_idm: float = 2.0
    delta_exp: float = 4.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"IDM parameter {f.name} must be positive")


@dataclass(frozen=True)
class MOBILParams:
    politeness: float = 0.3
    a_threshold: float = 0.2
    b_safe: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.a_threshold <= 0 or self.b_safe <= 0:
            raise ValueError("a_threshold and b_safe must be positive")


@dataclass(frozen=True)
class DriverPopulation:
    idm: IDMParams = field(default_factory=IDMParams)
    mobil: MOBILParams = field(default_factory=MOBILParams)
    relative_std: float = 0.1
    seed: int = 0

    def std(self) -> tuple[dict, dict]:
        r = self.relative_std
        return ({f.name: r * getattr(self.idm, f.name) for f in fields(self.idm)},
                {f.name: r * getattr(self.mobil, f.name) for f in fields(self.mobil)})


def idm_accel(v, gap, v_leader, p: IDMParams, b_max: float = B_MAX_PHYSICAL):
    """IDM acceleration for bumper gap ``gap`` (``inf`` means no leader).

    Vectorizes over numpy arrays; nonpositive gaps return ``-b_max``.
    """
    v = np.asarray(v, dtype=float)
    gap = np.asarray(gap, dtype=float)
    free = 1.0 - (np.maximum(v, 0.0) / p.v0) ** p.delta_exp
    with np.errstate(divide="ignore", invalid="ignore"):
        s_star = p.s0 + np.maximum(0.0, v * p.T + v * (v - v_leader) / (2.0 * math.sqrt(p.a_idm * p.b_idm)))
        interaction = np.where(np.isinf(gap), 0.0, (s_star / gap) ** 2)
    acc = p.a_idm * (free - interaction)
    acc = np.where(gap <= 0, -b_max, np.clip(acc, -b_max, p.a_idm))
    return float(acc) if acc.ndim == 0 else acc


class LaneDecision(Enum):
    STAY = "stay"
    CHANGE = "change"


@dataclass(frozen=True)
class MobilContext:
    """Bumper gaps (m) and speeds (m/s) around the ego car.

    ``*_front*`` gaps run from the ego front bumper to the leader's rear;
    ``*_rear*`` gaps from the follower's front bumper to the ego rear.
    Missing vehicles use ``inf`` gaps (their speeds are ignored).
    """
    v: float
    gap_front: float = math.inf
    v_front: float = 0.0
    gap_front_target: float = math.inf
    v_front_target: float = 0.0
    gap_rear_target: float = math.inf
    v_rear_target: float = 0.0
    gap_rear: float = math.inf
    v_rear: float = 0.0
    length: float = 5.0


def mobil_decide(ctx: MobilContext, p_idm: IDMParams, p_mobil: MOBILParams) -> LaneDecision:
    """Standard MOBIL incentive and safety criterion for one candidate lane."""
    if ctx.gap_front_target <= 0 or ctx.gap_rear_target <= 0:
        return LaneDecision.STAY
    new_follower_after = 0.0
    new_follower_before = 0.0
    if math.isfinite(ctx.gap_rear_target):
        new_follower_after = idm_accel(ctx.v_rear_target, ctx.gap_rear_target, ctx.v, p_idm)
        if new_follower_after < -p_mobil.b_safe:
            return LaneDecision.STAY
        gap_before = ctx.gap_rear_target + ctx.length + ctx.gap_front_target
        new_follower_before = idm_accel(ctx.v_rear_target, gap_before, ctx.v_front_target, p_idm)
    old_follower_delta = 0.0
    if math.isfinite(ctx.gap_rear):
        before = idm_accel(ctx.v_rear, ctx.gap_rear, ctx.v, p_idm)
        after = idm_accel(ctx.v_rear, ctx.gap_rear + ctx.length + ctx.gap_front, ctx.v_front, p_idm)
        old_follower_delta = after - before
    ego_delta = (idm_accel(ctx.v, ctx.gap_front_target, ctx.v_front_target, p_idm)
                 - idm_accel(ctx.v, ctx.gap_front, ctx.v_front, p_idm))
    incentive = ego_delta + p_mobil.politeness * ((new_follower_after - new_follower_before) + old_follower_delta)
    return LaneDecision.CHANGE if incentive > p_mobil.a_threshold else LaneDecision.STAY


def sample_driver_params(pop: DriverPopulation, rng: np.random.Generator) -> tuple[IDMParams, MOBILParams]:
    """Independent Gaussian draw per parameter, clamped positive (politeness to [0, 1])."""
    idm_std, mobil_std = pop.std()
    idm = {}
    for f in fields(pop.idm):
        mean = getattr(pop.idm, f.name)
        idm[f.name] = max(rng.normal(mean, idm_std[f.name]) if idm_std[f.name] > 0 else mean, 1e-3 * mean)
    mobil = {}
    for f in fields(pop.mobil):
        mean = getattr(pop.mobil, f.name)
        value = rng.normal(mean, mobil_std[f.name]) if mobil_std[f.name] > 0 else mean
        mobil[f.name] = min(max(value, 0.0), 1.0) if f.name == "politeness" else max(value, 1e-3 * mean)
    return IDMParams(**idm), MOBILParams(**mobil)


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------

@dataclass
class ParamArrays:
    """Per-car IDM/MOBIL parameters as arrays (broadcastable against car arrays)."""
    v0: np.ndarray
    T: np.ndarray
    s0: np.ndarray
    a_idm: np.ndarray
    b_idm: np.ndarray
    delta_exp: np.ndarray
    politeness: np.ndarray
    a_threshold: np.ndarray
    b_safe: np.ndarray

    @classmethod
    def from_params(cls, pairs: list[tuple[IDMParams, MOBILParams]]) -> "ParamArrays":
        cols = {}
        for f in fields(IDMParams):
            cols[f.name] = np.array([getattr(i, f.name) for i, _ in pairs], dtype=float)
        for f in fields(MOBILParams):
            cols[f.name] = np.array([getattr(m, f.name) for _, m in pairs], dtype=float)
        return cls(**cols)

    def select(self, idx) -> "ParamArrays":
        """Parameters of the cars at ``idx`` (1-D arrays only)."""
        return ParamArrays(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


def _idm_array(v, gap, v_leader, p: ParamArrays, b_max: float = B_MAX_PHYSICAL):
    free = 1.0 - (np.maximum(v, 0.0) / p.v0) ** p.delta_exp
    with np.errstate(divide="ignore", invalid="ignore"):
        s_star = p.s0 + np.maximum(0.0, v * p.T + v * (v - v_leader) / (2.0 * np.sqrt(p.a_idm * p.b_idm)))
        interaction = np.where(np.isinf(gap), 0.0, (s_star / gap) ** 2)
    acc = np.clip(p.a_idm * (free - interaction), -b_max, p.a_idm)
    return np.where(gap <= 0, -b_max, acc)


def lane_neighbors(s: np.ndarray, lane: np.ndarray, query_lane: np.ndarray):
    """Leader and follower of each car within ``query_lane`` (index -1 if none).

    ``s`` are center positions. Cars at identical positions are ordered by
    index. Leading batch axes are supported.
    """
    n = s.shape[-1]
    ds = s[..., None, :] - s[..., :, None]  # ds[..., i, j] = s_j - s_i
    order = np.arange(n)
    ahead = (ds > 0) | ((ds == 0) & (order[None, :] > order[:, None]))
    in_lane = lane[..., None, :] == query_lane[..., :, None]
    not_self = order[None, :] != order[:, None]
    cand = in_lane & not_self
    lead_d = np.where(cand & ahead, ds, np.inf)
    follow_d = np.where(cand & ~ahead, ds, -np.inf)
    leader = np.argmin(lead_d, axis=-1)
    follower = np.argmax(follow_d, axis=-1)
    leader = np.where(np.isfinite(np.take_along_axis(lead_d, leader[..., None], -1)[..., 0]), leader, -1)
    follower = np.where(np.isfinite(np.take_along_axis(follow_d, follower[..., None], -1)[..., 0]), follower, -1)
    return leader, follower


def _gap(s, lengths, i_rear, j_front):
    """Bumper gap from car ``i_rear`` to ``j_front`` (inf where j_front == -1)."""
    sj = np.take_along_axis(s, np.maximum(j_front, 0), -1)
    li = np.take_along_axis(lengths, np.maximum(i_rear, 0), -1)
    lj = np.take_along_axis(lengths, np.maximum(j_front, 0), -1)
    si = np.take_along_axis(s, np.maximum(i_rear, 0), -1)
    gap = sj - si - 0.5 * (li + lj)
    return np.where((j_front < 0) | (i_rear < 0), np.inf, gap)


def idm_step(s, lane, v, lengths, p: ParamArrays):
    """IDM accelerations of all cars given their current lanes."""
    idx = np.broadcast_to(np.arange(s.shape[-1]), s.shape)
    leader, _ = lane_neighbors(s, lane, lane)
    gap = _gap(s, lengths, idx, leader)
    v_lead = np.where(leader >= 0, np.take_along_axis(v, np.maximum(leader, 0), -1), 0.0)
    return _idm_array(v, gap, v_lead, p)


def mobil_targets(s, lane, v, lengths, p: ParamArrays, n_lanes: int, eligible=None):
    """Lane each car wants to be in after one MOBIL evaluation.

    Both neighbouring lanes are evaluated; the one with the larger positive
    incentive wins (left on ties). ``eligible`` masks cars allowed to change.
    """
    shape = s.shape
    idx = np.broadcast_to(np.arange(shape[-1]), shape)
    leader, follower = lane_neighbors(s, lane, lane)
    gap_front = _gap(s, lengths, idx, leader)
    v_front = np.where(leader >= 0, np.take_along_axis(v, np.maximum(leader, 0), -1), 0.0)
    a_ego = _idm_array(v, gap_front, v_front, p)
    gap_rear = _gap(s, lengths, follower, idx)
    has_rear = follower >= 0
    v_rear = np.where(has_rear, np.take_along_axis(v, np.maximum(follower, 0), -1), 0.0)
    p_rear = _take_params(p, follower)
    old_before = np.where(has_rear, _idm_array(v_rear, gap_rear, v, p_rear), 0.0)
    gap_rear_after = gap_rear + lengths + gap_front
    old_after = np.where(has_rear, _idm_array(v_rear, gap_rear_after, v_front, p_rear), 0.0)
    old_delta = old_after - old_before

    best = np.full(shape, -np.inf)
    target = lane.copy()
    for direction in (1, -1):  # left first so that it wins ties
        t_lane = lane + direction
        valid = (t_lane >= 0) & (t_lane < n_lanes)
        t_lead, t_follow = lane_neighbors(s, lane, t_lane)
        gap_ft = _gap(s, lengths, idx, t_lead)
        v_ft = np.where(t_lead >= 0, np.take_along_axis(v, np.maximum(t_lead, 0), -1), 0.0)
        gap_rt = _gap(s, lengths, t_follow, idx)
        has_nf = t_follow >= 0
        v_rt = np.where(has_nf, np.take_along_axis(v, np.maximum(t_follow, 0), -1), 0.0)
        p_nf = _take_params(p, t_follow)
        nf_after = np.where(has_nf, _idm_array(v_rt, gap_rt, v, p_nf), 0.0)
        gap_nf_before = gap_rt + lengths + gap_ft
        nf_before = np.where(has_nf, _idm_array(v_rt, gap_nf_before, v_ft, p_nf), 0.0)
        safe = (gap_ft > 0) & (gap_rt > 0) & (nf_after >= -p.b_safe)
        incentive = (_idm_array(v, gap_ft, v_ft, p) - a_ego
                     + p.politeness * ((nf_after - nf_before) + old_delta))
        ok = valid & safe & (incentive > p.a_threshold) & (incentive > best)
        if eligible is not None:
            ok &= eligible
        best = np.where(ok, incentive, best)
        target = np.where(ok, t_lane, target)
    return target


def _take_params(p: ParamArrays, idx) -> ParamArrays:
    safe = np.maximum(idx, 0)
    return ParamArrays(**{f.name: np.take_along_axis(np.broadcast_to(getattr(p, f.name), idx.shape), safe, -1)
                          for f in fields(ParamArrays)})
