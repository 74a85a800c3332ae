"""Threat metrics (TTC, BTN, STN) and their aggregation over episodes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

TTC_CAP = 20.0
SWEEP_DT = 0.01
DECEL_CAP = 20.0
SEARCH_TOL = 0.01
A_LONG_MAX = 5.0
A_LAT_MAX = 0.2 * 9.81
_TOUCH = 1e-9


@dataclass(frozen=True)
class Body:
    """Rectangle footprint moving at constant velocity (heading taken as the body axis)."""
    x: float
    y: float
    heading: float
    vx: float
    vy: float
    length: float = 5.0
    width: float = 2.0

    @property
    def radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)


@dataclass(frozen=True)
class MetricsRecord:
    t: float
    ttc: float
    btn: float
    stn: float
    v_r: float
    abs_a_r: float
    intervened: bool
    min_pair_value: float
    collision_event: int = 0


@dataclass(frozen=True)
class AggregateStats:
    frac_ttc_ge_3: float
    ttc_p10: float
    frac_btn_le_1: float
    btn_p90: float
    frac_stn_le_1: float
    stn_p90: float
    mean_v: float
    mean_abs_a: float
    intervention_pct: float
    collision_count: int

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateStats":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in d]
        if missing:
            raise ValueError(f"aggregate is missing {missing}")
        return cls(**{n: d[n] for n in names})


def rect_overlap(x1, y1, h1, l1, w1, x2, y2, h2, l2, w2, tol: float = _TOUCH):
    """Separating-axis test for oriented rectangles; arrays broadcast. Touching counts."""
    dx, dy = x2 - x1, y2 - y1
    c1, s1, c2, s2 = np.cos(h1), np.sin(h1), np.cos(h2), np.sin(h2)
    hit = np.ones(np.broadcast(dx, dy, c1, c2).shape, dtype=bool)
    for ux, uy in ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2)):
        dist = np.abs(dx * ux + dy * uy)
        r1 = 0.5 * l1 * np.abs(c1 * ux + s1 * uy) + 0.5 * w1 * np.abs(-s1 * ux + c1 * uy)
        r2 = 0.5 * l2 * np.abs(c2 * ux + s2 * uy) + 0.5 * w2 * np.abs(-s2 * ux + c2 * uy)
        hit &= dist <= r1 + r2 + tol
    return hit


def bodies_overlap(a: Body, b: Body) -> bool:
    return bool(rect_overlap(a.x, a.y, a.heading, a.length, a.width, b.x, b.y, b.heading, b.length, b.width))


def _circle_window(ego: Body, other: Body, horizon: float) -> tuple[float, float] | None:
    """Time interval in [0, horizon] where bounding circles intersect under constant velocity."""
    px, py = other.x - ego.x, other.y - ego.y
    vx, vy = other.vx - ego.vx, other.vy - ego.vy
    r = ego.radius + other.radius
    a = vx * vx + vy * vy
    b = 2.0 * (px * vx + py * vy)
    c = px * px + py * py - r * r
    if a < 1e-12:
        return (0.0, horizon) if c <= 0 else None
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    t1, t2 = (-b - sq) / (2 * a), (-b + sq) / (2 * a)
    lo, hi = max(t1, 0.0), min(t2, horizon)
    return (lo, hi) if lo <= hi else None


def time_to_collision(ego: Body, other: Body, cap: float = TTC_CAP, dt: float = SWEEP_DT) -> float:
    """Earliest sweep time at which the two rectangles overlap; ``cap`` if never."""
    window = _circle_window(ego, other, cap)
    if window is None:
        return cap
    n_max = int(round(cap / dt))
    k0 = max(int(math.floor(window[0] / dt)) - 1, 0)
    k1 = min(int(math.ceil(window[1] / dt)) + 1, n_max)
    t = np.arange(k0, k1 + 1) * dt
    hit = rect_overlap(ego.x + ego.vx * t, ego.y + ego.vy * t, ego.heading, ego.length, ego.width,
                       other.x + other.vx * t, other.y + other.vy * t, other.heading, other.length, other.width)
    if not hit.any():
        return cap
    return float(t[np.argmax(hit)])


def ttc(ego: Body, others: Sequence[Body], cap: float = TTC_CAP, dt: float = SWEEP_DT) -> tuple[float, int]:
    """Minimum TTC over agents and the index of the critical agent (-1 if none)."""
    best, arg = cap, -1
    for j, o in enumerate(others):
        t = time_to_collision(ego, o, cap, dt)
        if t < best:
            best, arg = t, j
    return best, arg


def _sweep_hits(ego_x, ego_y, ego: Body, other: Body, t: np.ndarray) -> bool:
    ox, oy = other.x + other.vx * t, other.y + other.vy * t
    near = np.hypot(ox - ego_x, oy - ego_y) <= ego.radius + other.radius + _TOUCH
    if not near.any():
        return False
    return bool(rect_overlap(ego_x[near], ego_y[near], ego.heading, ego.length, ego.width,
                             ox[near], oy[near], other.heading, other.length, other.width).any())


def _braking_path(ego: Body, decel: float, t: np.ndarray):
    speed = math.hypot(ego.vx, ego.vy)
    if speed < 1e-12:
        return np.full_like(t, ego.x), np.full_like(t, ego.y)
    ux, uy = ego.vx / speed, ego.vy / speed
    if decel <= 0:
        dist = speed * t
    else:
        t_stop = speed / decel
        tc = np.minimum(t, t_stop)
        dist = speed * tc - 0.5 * decel * tc * tc
    return ego.x + ux * dist, ego.y + uy * dist


def _steering_path(ego: Body, accel: float, t: np.ndarray):
    nx, ny = -math.sin(ego.heading), math.cos(ego.heading)
    off = 0.5 * accel * t * t
    return ego.x + ego.vx * t + nx * off, ego.y + ego.vy * t + ny * off


def _min_avoiding(hits_at, cap: float, tol: float) -> float:
    """Smallest magnitude in [0, cap] for which ``hits_at`` is false (cap if none)."""
    if not hits_at(0.0):
        return 0.0
    if hits_at(cap):
        return cap
    lo, hi = 0.0, cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if hits_at(mid):
            lo = mid
        else:
            hi = mid
    return hi


def required_decel(ego: Body, other: Body, horizon: float = TTC_CAP, dt: float = SWEEP_DT,
                   cap: float = DECEL_CAP, tol: float = SEARCH_TOL) -> float:
    t = np.arange(int(round(horizon / dt)) + 1) * dt
    return _min_avoiding(lambda d: _sweep_hits(*_braking_path(ego, d, t), ego, other, t), cap, tol)


def required_lateral(ego: Body, other: Body, horizon: float = TTC_CAP, dt: float = SWEEP_DT,
                     cap: float = DECEL_CAP, tol: float = SEARCH_TOL) -> float:
    t = np.arange(int(round(horizon / dt)) + 1) * dt
    need = [_min_avoiding(lambda a, s=sign: _sweep_hits(*_steering_path(ego, s * a, t), ego, other, t), cap, tol)
            for sign in (1.0, -1.0)]
    return min(need)


def btn(ego: Body, others: Sequence[Body], a_long_max: float = A_LONG_MAX, critical: int | None = None) -> float:
    """Required braking for the TTC-critical agent over the available maximum.

    Threats that braking cannot resolve (e.g. from behind) saturate at the
    search cap.
    """
    if a_long_max <= 0:
        raise ValueError("a_long_max must be positive")
    if critical is None:
        _, critical = ttc(ego, others)
    if critical < 0:
        return 0.0
    return required_decel(ego, others[critical]) / a_long_max


def stn(ego: Body, others: Sequence[Body], a_lat_max: float = A_LAT_MAX, critical: int | None = None) -> float:
    if a_lat_max <= 0:
        raise ValueError("a_lat_max must be positive")
    if critical is None:
        _, critical = ttc(ego, others)
    if critical < 0:
        return 0.0
    return required_lateral(ego, others[critical]) / a_lat_max


def threat_metrics(ego: Body, others: Sequence[Body], a_long_max: float = A_LONG_MAX,
                   a_lat_max: float = A_LAT_MAX) -> tuple[float, float, float]:
    t, crit = ttc(ego, others)
    if crit < 0:
        return t, 0.0, 0.0
    return t, btn(ego, others, a_long_max, crit), stn(ego, others, a_lat_max, crit)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def aggregate(records: Iterable[MetricsRecord]) -> AggregateStats:
    """Pool per-tick records (all episodes of a configuration) into summary statistics."""
    recs = list(records)
    if not recs:
        raise ValueError("cannot aggregate an empty record set")
    ttc_a = np.array([r.ttc for r in recs])
    btn_a = np.array([r.btn for r in recs])
    stn_a = np.array([r.stn for r in recs])
    return AggregateStats(
        frac_ttc_ge_3=float(np.mean(ttc_a >= 3.0)),
        ttc_p10=float(np.percentile(ttc_a, 10)),
        frac_btn_le_1=float(np.mean(btn_a <= 1.0)),
        btn_p90=float(np.percentile(btn_a, 90)),
        frac_stn_le_1=float(np.mean(stn_a <= 1.0)),
        stn_p90=float(np.percentile(stn_a, 90)),
        mean_v=float(np.mean([r.v_r for r in recs])),
        mean_abs_a=float(np.mean([r.abs_a_r for r in recs])),
        intervention_pct=100.0 * float(np.mean([r.intervened for r in recs])),
        collision_count=int(sum(r.collision_event for r in recs)),
    )


def windowed_points(records: Sequence[MetricsRecord], window_s: float = 10.0) -> list[tuple[float, float]]:
    """(mean speed, 1st-percentile TTC) per non-overlapping window of one episode."""
    if not records:
        return []
    t0 = records[0].t
    buckets: dict[int, list[MetricsRecord]] = {}
    for r in records:
        buckets.setdefault(int((r.t - t0 + 1e-9) // window_s), []).append(r)
    return [(float(np.mean([r.v_r for r in b])), float(np.percentile([r.ttc for r in b], 1)))
            for _, b in sorted(buckets.items())]
