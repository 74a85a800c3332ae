"""Multi-agent safety filter on robot turn rate and acceleration.

Each near-violating pair contributes a halfplane ``g . w >= -c0 - eta_k`` in
``w = (omega_r, a_r)``. The filter solves::

    min  l1 (omega - omega_des)^2 + l2 (a - a_des)^2 + l3 max_k eta_k
    s.t. g_k . w >= -c0_k - eta_k,  control box,  eta_k >= 0 (MI only)

by enumerating active sets of the epigraph form in ``(omega, a, t)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .grid import ValueTable
from .hji import RelDynamicsBounds, SafetyConstraint, halfplane_from_costate
from .rss import RSSParams, rss_lateral_distance, rss_longitudinal_distance
from .vehicles import CarControl, CarState, delta_to_omega, omega_to_delta, relative_state

DEGENERATE_NORM = 1e-10
_FEAS_TOL = 1e-9


class Mode(str, Enum):
    MI = "MI"
    SW = "SW"


class ControllerKind(str, Enum):
    NONE = "None"
    SPC = "SPC"
    RSS = "RSS"


@dataclass(frozen=True)
class SafetyControllerConfig:
    epsilon: float = 0.5
    mode: Mode = Mode.MI
    kind: ControllerKind = ControllerKind.SPC
    lambda1: float | None = None  # defaults to omega_max^-2
    lambda2: float | None = None  # defaults to a_max^-2
    lambda3: float = 1.0
    bounds: RelDynamicsBounds = field(default_factory=RelDynamicsBounds)
    n_agents: int = 6
    rss_margin: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "kind", ControllerKind(self.kind))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lambda3 < 0 or (self.lambda1 or 0) < 0 or (self.lambda2 or 0) < 0:
            raise ValueError("weights must be nonnegative")

    @property
    def weights(self) -> tuple[float, float, float]:
        b = self.bounds
        l1 = self.lambda1 if self.lambda1 is not None else max(abs(b.omega_r_min), abs(b.omega_r_max)) ** -2
        l2 = self.lambda2 if self.lambda2 is not None else max(abs(b.a_r_min), abs(b.a_r_max)) ** -2
        return l1, l2, self.lambda3


def active_set(values: Sequence[float], epsilon: float) -> list[int]:
    """Indices of pairs whose value is at or below ``epsilon``."""
    return [j for j, v in enumerate(values) if v <= epsilon]


# ---------------------------------------------------------------------------
# QP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QPSolution:
    omega: float
    a: float
    slack: float
    objective: float


def qp_objective(omega: float, a: float, constraints: Sequence[SafetyConstraint], desired: tuple[float, float],
                 weights: tuple[float, float, float], mode: Mode) -> float:
    """Objective at ``(omega, a)`` with the per-pair slacks at their optimal values."""
    l1, l2, l3 = weights
    worst = _worst_violation(omega, a, constraints, mode)
    return l1 * (omega - desired[0]) ** 2 + l2 * (a - desired[1]) ** 2 + l3 * worst


def _worst_violation(omega, a, constraints, mode):
    worst = 0.0 if mode is Mode.MI else -math.inf
    for c in constraints:
        worst = max(worst, -c.c0 - c.g_omega * omega - c.g_a * a)
    return worst if math.isfinite(worst) else 0.0


def _prepare(constraints: Sequence[SafetyConstraint], mode: Mode):
    """Affine lower bounds on t as (g_omega, g_a, beta): t >= beta - g . w."""
    rows = []
    for c in constraints:
        if math.hypot(c.g_omega, c.g_a) < DEGENERATE_NORM:
            if c.c0 >= 0:
                continue
            rows.append((0.0, 0.0, -c.c0))
        else:
            rows.append((c.g_omega, c.g_a, -c.c0))
    if mode is Mode.MI:
        rows.append((0.0, 0.0, 0.0))
    return rows


def solve_safety_qp(constraints: Sequence[SafetyConstraint], desired: tuple[float, float],
                    cfg: SafetyControllerConfig) -> QPSolution:
    """Global minimizer of the slack-relaxed safety program.

    In SW mode the acceleration weight is dropped (``lambda2 = 0``) and slacks
    may be negative; remaining freedom in the acceleration is resolved towards
    the smallest ``|a|``.
    """
    b = cfg.bounds
    l1, l2, l3 = cfg.weights
    if cfg.mode is Mode.SW:
        l2 = 0.0
    weights = (l1, l2, l3)
    lo = np.array([b.omega_r_min, b.a_r_min])
    hi = np.array([b.omega_r_max, b.a_r_max])
    w_des = np.asarray(desired, dtype=float)
    rows = _prepare(constraints, cfg.mode)
    if not rows:
        w = np.clip(w_des, lo, hi)
        if cfg.mode is Mode.SW and l2 == 0.0:
            w[1] = min(max(0.0, lo[1]), hi[1])
        return QPSolution(float(w[0]), float(w[1]), 0.0,
                          qp_objective(w[0], w[1], constraints, desired, weights, cfg.mode))

    G = np.array([[r[0], r[1]] for r in rows])
    beta = np.array([r[2] for r in rows])
    quad = np.array([l1, l2])
    fixes = [None, (0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])]
    best = None
    for n_fix in range(3):
        for fix in itertools.combinations(fixes[1:], n_fix):
            if n_fix == 2 and fix[0][0] == fix[1][0]:
                continue
            fixed = dict(fix)
            for n_tie in range(1, 4 - n_fix):
                for tie in itertools.combinations(range(len(rows)), n_tie):
                    cand = _kkt_candidate(G, beta, quad, w_des, l3, fixed, tie)
                    if cand is None:
                        continue
                    w = cand
                    if np.any(w < lo - _FEAS_TOL) or np.any(w > hi + _FEAS_TOL):
                        continue
                    w = np.clip(w, lo, hi)
                    t = float(np.max(beta - G @ w))
                    obj = l1 * (w[0] - w_des[0]) ** 2 + l2 * (w[1] - w_des[1]) ** 2 + l3 * t
                    if best is None or obj < best[0] - 1e-12:
                        best = (obj, w, t)
    if best is None:  # cannot happen for a bounded box; kept as a guard
        w = np.clip(w_des, lo, hi)
        best = (None, w, float(np.max(beta - G @ w)))
    _, w, t = best
    if cfg.mode is Mode.SW and l2 == 0.0:
        w = w.copy()
        w[1] = _least_accel(G, beta, w[0], t, lo[1], hi[1])
        t = float(np.max(beta - G @ w))
    obj = qp_objective(w[0], w[1], constraints, desired, weights, cfg.mode)
    slack = (t if t > _FEAS_TOL else 0.0) if cfg.mode is Mode.MI else t
    return QPSolution(float(w[0]), float(w[1]), slack, obj)


def _kkt_candidate(G, beta, quad, w_des, l3, fixed: dict, tie: tuple):
    """Stationary point with the ``tie`` rows holding t with equality and ``fixed`` coordinates."""
    free = [i for i in (0, 1) if i not in fixed]
    nf, nt = len(free), len(tie)
    size = nf + 1 + nt
    K = np.zeros((size, size))
    rhs = np.zeros(size)
    w_fixed = np.zeros(2)
    for i, val in fixed.items():
        w_fixed[i] = val
    # stationarity in free coordinates: 2 q_i (w_i - wd_i) - sum_j mu_j G_ji = 0
    for r, i in enumerate(free):
        K[r, r] = 2.0 * quad[i]
        rhs[r] = 2.0 * quad[i] * w_des[i]
        for c, j in enumerate(tie):
            K[r, nf + 1 + c] = -G[j, i]
    # stationarity in t: l3 - sum_j mu_j = 0
    K[nf, nf + 1:] = 1.0
    rhs[nf] = l3
    # t + G_j . w = beta_j for tied rows
    for c, j in enumerate(tie):
        row = nf + 1 + c
        for r, i in enumerate(free):
            K[row, r] = G[j, i]
        K[row, nf] = 1.0
        rhs[row] = beta[j] - sum(G[j, i] * w_fixed[i] for i in fixed)
    try:
        if abs(np.linalg.det(K)) < 1e-12 * max(1.0, np.abs(K).max()) ** size:
            return None
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    w = w_fixed.copy()
    for r, i in enumerate(free):
        w[i] = sol[r]
    return w


def _least_accel(G, beta, omega, t_star, a_lo, a_hi) -> float:
    """Smallest-magnitude acceleration that keeps ``max_k (beta_k - g_k.w)`` at its optimum."""
    lo, hi = a_lo, a_hi
    level = t_star + 1e-9 * max(1.0, abs(t_star))
    for (g_w, g_a), bk in zip(G, beta):
        rest = level - bk + g_w * omega  # need -g_a * a <= rest
        if abs(g_a) < DEGENERATE_NORM:
            continue
        if g_a > 0:
            lo = max(lo, -rest / g_a)
        else:
            hi = min(hi, -rest / g_a)
    if lo > hi:
        return 0.5 * (lo + hi)
    return min(max(0.0, lo), hi)


# ---------------------------------------------------------------------------
# RSS proper response
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RSSBox:
    omega: tuple[float, float]
    a: tuple[float, float]


def rss_pair_box(z_r: CarState, z_o: CarState, p: RSSParams, bounds: RelDynamicsBounds,
                 margin: float, v_floor: float = 1.0) -> RSSBox | None:
    """Proper-response box for one pair, or ``None`` if the pair is RSS-safe."""
    dx = z_r.px - z_o.px
    dy = z_r.py - z_o.py
    vr_long, vr_lat = z_r.v * math.cos(z_r.theta), z_r.v * math.sin(z_r.theta)
    vo_long, vo_lat = z_o.v, 0.0
    if dx >= 0:
        d_long = rss_longitudinal_distance(vo_long, vr_long, p)
    else:
        d_long = rss_longitudinal_distance(vr_long, vo_long, p)
    if dy >= 0:
        d_lat = rss_lateral_distance(vo_lat, vr_lat, p)
    else:
        d_lat = rss_lateral_distance(vr_lat, vo_lat, p)
    if not (abs(dx) < float(d_long) + margin and abs(dy) < float(d_lat) + margin):
        return None
    om_lo, om_hi = bounds.omega_r_min, bounds.omega_r_max
    a_lo, a_hi = bounds.a_r_min, bounds.a_r_max
    if dx < 0:
        a_hi = min(a_hi, -p.min_brake)  # rear car brakes at least min_brake
    else:
        a_lo = max(a_lo, -p.max_brake)  # front car brakes at most max_brake
    # lateral: accelerate away from the other car at lateral_accel
    w_lat = p.lateral_accel / max(z_r.v, v_floor)
    if dy >= 0:
        om_lo = max(om_lo, w_lat)
    else:
        om_hi = min(om_hi, -w_lat)
    return RSSBox((om_lo, om_hi), (a_lo, a_hi))


def _intersect(boxes: Sequence[RSSBox]) -> RSSBox:
    om = (max(b.omega[0] for b in boxes), min(b.omega[1] for b in boxes))
    a = (max(b.a[0] for b in boxes), min(b.a[1] for b in boxes))
    return RSSBox(om, a)


def rss_proper_response(z_r: CarState, others: Sequence[CarState], p: RSSParams, desired: tuple[float, float],
                        mode: Mode, bounds: RelDynamicsBounds = RelDynamicsBounds(), margin: float = 0.5,
                        omega_prev: float = 0.0) -> tuple[float, float, bool]:
    """RSS proper-response control ``(omega, a, active)``.

    Per-pair boxes are intersected; MI projects the desired control onto the
    box, SW takes the box corner farthest into the response (the previous
    turn rate on unconstrained axes). Empty intervals fall back to their
    midpoint, which minimizes the worst violation.
    """
    boxes = [box for z_o in others if (box := rss_pair_box(z_r, z_o, p, bounds, margin)) is not None]
    if not boxes:
        return float(desired[0]), float(desired[1]), False
    box = _intersect(boxes)
    full = RSSBox((bounds.omega_r_min, bounds.omega_r_max), (bounds.a_r_min, bounds.a_r_max))

    def pick(interval, full_interval, want, sw_default):
        lo, hi = interval
        if lo > hi:
            return 0.5 * (lo + hi)
        if mode is Mode.MI:
            return min(max(want, lo), hi)
        if hi < full_interval[1] and lo <= full_interval[0]:
            return lo
        if lo > full_interval[0] and hi >= full_interval[1]:
            return hi
        return min(max(sw_default, lo), hi)

    omega = pick(box.omega, full.omega, desired[0], omega_prev)
    a = pick(box.a, full.a, desired[1], desired[1])
    return float(omega), float(a), True


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------

@dataclass
class FilterResult:
    control: CarControl
    intervened: bool
    slack: float = 0.0
    values: list[float] = field(default_factory=list)
    active: list[int] = field(default_factory=list)
    constraints: list[SafetyConstraint] = field(default_factory=list)


class SafetyController:
    """Per-episode safety filter instance (holds the previous turn rate for SW)."""

    def __init__(self, cfg: SafetyControllerConfig, table: ValueTable | None = None,
                 rss: RSSParams = RSSParams(), length: float = 5.0, v_floor: float = 1.0,
                 max_steer: float = 0.4):
        if cfg.kind is ControllerKind.SPC and table is None:
            raise ValueError("the SPC controller needs a value table")
        self.cfg = cfg
        self.table = table
        self.rss = rss
        self.length = length
        self.v_floor = v_floor
        self.max_steer = max_steer
        self.omega_prev = 0.0

    def nearest(self, z_r: CarState, others: Sequence[CarState]) -> list[int]:
        order = sorted(range(len(others)), key=lambda j: (abs(others[j].px - z_r.px), j))
        return order[: self.cfg.n_agents]

    def pair_values(self, z_r: CarState, others: Sequence[CarState]):
        """Values and gradients for the given agents (arrays of shape (J,), (J, 5))."""
        if not others:
            return np.empty(0), np.empty((0, 5)), np.empty((0, 5))
        x = np.array([relative_state(z_r, z_o) for z_o in others], dtype=float)
        values, grads = self.table.value_and_gradient(x)
        return values, grads, x

    def filter(self, z_r: CarState, others: Sequence[CarState], desired: CarControl) -> FilterResult:
        cfg = self.cfg
        v = max(z_r.v, self.v_floor)
        omega_des = delta_to_omega(desired.delta, v, self.length)
        if cfg.kind is ControllerKind.NONE:
            self.omega_prev = omega_des
            return FilterResult(desired, False)
        idx = self.nearest(z_r, others)
        near = [others[j] for j in idx]
        if cfg.kind is ControllerKind.RSS:
            omega, a, active = rss_proper_response(z_r, near, self.rss, (omega_des, desired.a), cfg.mode,
                                                   cfg.bounds, cfg.rss_margin, self.omega_prev)
            result = FilterResult(desired, False)
            if active:
                result = FilterResult(self._to_control(omega, a, v), True)
                self.omega_prev = omega
            else:
                self.omega_prev = omega_des
            return result

        values, grads, x = self.pair_values(z_r, near)
        active = active_set(values, cfg.epsilon)
        if not active:
            self.omega_prev = omega_des
            return FilterResult(desired, False, values=list(values))
        constraints = [halfplane_from_costate(x[k], grads[k], cfg.bounds, pair_id=idx[k]) for k in active]
        target = (self.omega_prev, desired.a) if cfg.mode is Mode.SW else (omega_des, desired.a)
        sol = solve_safety_qp(constraints, target, cfg)
        self.omega_prev = sol.omega
        return FilterResult(self._to_control(sol.omega, sol.a, v), True, sol.slack, list(values),
                            [idx[k] for k in active], constraints)

    def _to_control(self, omega: float, a: float, v: float) -> CarControl:
        delta = omega_to_delta(omega, v, self.length, self.v_floor)
        return CarControl(min(max(delta, -self.max_steer), self.max_steer), a)


def filter_control(controller: SafetyController, z_r: CarState, others: Sequence[CarState],
                   desired: CarControl) -> tuple[CarControl, bool]:
    result = controller.filter(z_r, others, desired)
    return result.control, result.intervened
