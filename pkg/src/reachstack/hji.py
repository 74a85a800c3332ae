"""Backward reachable tubes for the pairwise robot/agent relative dynamics.

The relative state is ``(px_rel, py_rel, theta_r, v_r, v_o)``::

    px_rel' = v_r cos(theta_r) - v_o cos(theta_o)
    py_rel' = v_r sin(theta_r) - v_o sin(theta_o)
    theta_r' = omega_r,   v_r' = a_r,   v_o' = a_o

with robot control ``(omega_r, a_r)`` maximizing and the other car's input
``(theta_o, a_o)`` minimizing the value. The value function is marched with a
global Lax-Friedrichs scheme and a ``min(0, .)`` freeze so that its zero
sublevel set is a tube.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .grid import GridSpec, ValueTable
from .rss import RSSParams, rss_lateral_distance, rss_longitudinal_distance

log = logging.getLogger(__name__)

DEFAULT_GRID = GridSpec(
    lower=(-60.0, -12.0, -math.pi / 4, 10.0, 10.0),
    upper=(60.0, 12.0, math.pi / 4, 32.0, 32.0),
    node_counts=(61, 41, 15, 12, 12),
    periodic=(False, False, False, False, False),
)


class SolverError(RuntimeError):
    pass


class RelativeState(NamedTuple):
    px_rel: float
    py_rel: float
    theta_r: float
    v_r: float
    v_o: float


@dataclass(frozen=True)
class RelDynamicsBounds:
    omega_r_min: float = -0.3
    omega_r_max: float = 0.3
    a_r_min: float = -5.0
    a_r_max: float = 5.0
    a_o_min: float = -6.0
    a_o_max: float = 6.0
    theta_o_min: float = -0.15
    theta_o_max: float = 0.15

    def __post_init__(self):
        for lo, hi in (("omega_r_min", "omega_r_max"), ("a_r_min", "a_r_max"),
                       ("a_o_min", "a_o_max"), ("theta_o_min", "theta_o_max")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ValueError(f"{lo} must be below {hi}")
        if not (-math.pi / 2 < self.theta_o_min and self.theta_o_max < math.pi / 2):
            raise ValueError("theta_o bounds must lie inside (-pi/2, pi/2)")


@dataclass(frozen=True)
class SolverConfig:
    cfl_number: float = 0.5
    time_horizon_tau: float = 3.0
    dissipation_bounds: tuple[float, ...] | None = None
    store_intermediate: bool = False
    dissipation_margin: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.cfl_number <= 1.0:
            raise ValueError("cfl_number must lie in (0, 1]")
        if not self.time_horizon_tau > 0:
            raise ValueError("time horizon must be positive")


class HamiltonianSystem(Protocol):
    def hamiltonian(self, coords: Sequence[np.ndarray], costate: Sequence[np.ndarray]) -> np.ndarray: ...

    def partial_bounds(self, spec: GridSpec) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# terminal condition
# ---------------------------------------------------------------------------

def terminal_value(x_rel, p: RSSParams):
    """RSS-shaped target: ``max(|px| - d_long, 4 (|py| - d_lat)^3)``.

    Accepts a single relative state or five broadcastable arrays stacked on
    the last axis. Negative values are RSS-unsafe.
    """
    px, py, theta, v_r, v_o = (np.asarray(c, dtype=float) for c in _components(x_rel))
    v_long = v_r * np.cos(theta)
    v_lat = v_r * np.sin(theta)
    robot_ahead = rss_longitudinal_distance(v_o, v_long, p)
    robot_behind = rss_longitudinal_distance(v_long, v_o, p)
    d_long = np.where(px > 0, robot_ahead, np.where(px < 0, robot_behind, np.maximum(robot_ahead, robot_behind)))
    # the other car has no lateral velocity in the relative state
    robot_left = rss_lateral_distance(0.0, v_lat, p)
    robot_right = rss_lateral_distance(v_lat, 0.0, p)
    d_lat = np.where(py > 0, robot_left, np.where(py < 0, robot_right, np.maximum(robot_left, robot_right)))
    value = np.maximum(np.abs(px) - d_long, 4.0 * (np.abs(py) - d_lat) ** 3)
    return float(value) if np.ndim(value) == 0 else value


def _components(x_rel):
    if isinstance(x_rel, (list, tuple)) and len(x_rel) == 5:
        return x_rel
    arr = np.asarray(x_rel, dtype=float)
    return tuple(arr[..., i] for i in range(5))


# ---------------------------------------------------------------------------
# Hamiltonian and optimal inputs
# ---------------------------------------------------------------------------

def _heading_min(p_x, p_y, lo: float, hi: float):
    """min over theta in [lo, hi] of ``-(p_x cos theta + p_y sin theta)``."""
    e_lo = -(p_x * math.cos(lo) + p_y * math.sin(lo))
    e_hi = -(p_x * math.cos(hi) + p_y * math.sin(hi))
    ends = np.minimum(e_lo, e_hi)
    # interior minimizer atan2(p_y, p_x); the interval sits inside (-pi/2, pi/2)
    inside = (p_x > 0) & (p_y >= p_x * math.tan(lo)) & (p_y <= p_x * math.tan(hi))
    return np.where(inside, -np.hypot(p_x, p_y), ends)


def _heading_argmin(p_x: float, p_y: float, lo: float, hi: float) -> float:
    if p_x > 0 and p_x * math.tan(lo) <= p_y <= p_x * math.tan(hi):
        return math.atan2(p_y, p_x)
    e_lo = -(p_x * math.cos(lo) + p_y * math.sin(lo))
    e_hi = -(p_x * math.cos(hi) + p_y * math.sin(hi))
    if e_lo == e_hi:
        return 0.0 if lo <= 0.0 <= hi else lo
    return lo if e_lo < e_hi else hi


def _bang(p, lo: float, hi: float, maximize: bool):
    # ties (p == 0) select zero clipped into the bounds
    zero = min(max(0.0, lo), hi)
    if maximize:
        return np.where(p > 0, hi, np.where(p < 0, lo, zero))
    return np.where(p > 0, lo, np.where(p < 0, hi, zero))


class RelativeCarDynamics:
    """Hamiltonian of the robot/agent relative dynamics for the level-set solver."""

    def __init__(self, bounds: RelDynamicsBounds):
        self.b = bounds

    def disturbance_term(self, coords, costate):
        """Disturbance-minimized part ``min_d (p_vo a_o - p_px v_o cos - p_py v_o sin)``."""
        b = self.b
        v_o = coords[4]
        accel = np.minimum(costate[4] * b.a_o_min, costate[4] * b.a_o_max)
        if np.any(np.asarray(v_o) < 0):
            raise ValueError("other-car speed must be nonnegative")
        return accel + v_o * _heading_min(costate[0], costate[1], b.theta_o_min, b.theta_o_max)

    def drift_term(self, coords, costate):
        theta, v_r = coords[2], coords[3]
        return costate[0] * (v_r * np.cos(theta)) + costate[1] * (v_r * np.sin(theta))

    def control_term(self, costate):
        b = self.b
        return (np.maximum(costate[2] * b.omega_r_min, costate[2] * b.omega_r_max)
                + np.maximum(costate[3] * b.a_r_min, costate[3] * b.a_r_max))

    def hamiltonian(self, coords, costate):
        return self.drift_term(coords, costate) + self.control_term(costate) + self.disturbance_term(coords, costate)

    def partial_bounds(self, spec: GridSpec) -> np.ndarray:
        """max |dH/dp_i| = max |f_i| sampled at grid corners and input extremes."""
        b = self.b
        thetas = sorted({spec.lower[2], spec.upper[2], *([0.0] if spec.lower[2] < 0 < spec.upper[2] else [])})
        v_rs = (spec.lower[3], spec.upper[3])
        v_os = (spec.lower[4], spec.upper[4])
        th_os = sorted({b.theta_o_min, b.theta_o_max, *([0.0] if b.theta_o_min < 0 < b.theta_o_max else [])})
        fx = fy = 0.0
        for th in thetas:
            for vr in v_rs:
                for vo in v_os:
                    for tho in th_os:
                        fx = max(fx, abs(vr * math.cos(th) - vo * math.cos(tho)))
                        fy = max(fy, abs(vr * math.sin(th) - vo * math.sin(tho)))
        return np.array([
            fx, fy,
            max(abs(b.omega_r_min), abs(b.omega_r_max)),
            max(abs(b.a_r_min), abs(b.a_r_max)),
            max(abs(b.a_o_min), abs(b.a_o_max)),
        ])


def hamiltonian(x_rel, costate, b: RelDynamicsBounds) -> float:
    """``max_u min_d costate . f(x_rel, u, d)`` in closed form."""
    x = [float(c) for c in x_rel]
    p = [float(c) for c in costate]
    return float(RelativeCarDynamics(b).hamiltonian(x, p))


def relative_dynamics(x_rel, control, disturbance) -> np.ndarray:
    """Time derivative of the relative state for ``control=(omega_r, a_r)`` and
    ``disturbance=(theta_o, a_o)``."""
    px, py, theta, v_r, v_o = x_rel
    omega, a_r = control
    theta_o, a_o = disturbance
    return np.array([
        v_r * math.cos(theta) - v_o * math.cos(theta_o),
        v_r * math.sin(theta) - v_o * math.sin(theta_o),
        omega,
        a_r,
        a_o,
    ])


def control_from_costate(costate, b: RelDynamicsBounds) -> tuple[float, float]:
    return (float(_bang(costate[2], b.omega_r_min, b.omega_r_max, True)),
            float(_bang(costate[3], b.a_r_min, b.a_r_max, True)))


def disturbance_from_costate(costate, b: RelDynamicsBounds) -> tuple[float, float]:
    theta_o = _heading_argmin(float(costate[0]), float(costate[1]), b.theta_o_min, b.theta_o_max)
    a_o = float(_bang(costate[4], b.a_o_min, b.a_o_max, False))
    return theta_o, a_o


def optimal_control(table: ValueTable, x_rel, b: RelDynamicsBounds) -> tuple[float, float]:
    """Bang-bang ``(omega_r, a_r)`` maximizing the worst-case value rate."""
    return control_from_costate(table.gradient(np.asarray(x_rel, dtype=float)), b)


def optimal_disturbance(table: ValueTable, x_rel, b: RelDynamicsBounds) -> tuple[float, float]:
    """Worst-case other-car input ``(theta_o, a_o)`` at ``x_rel``."""
    return disturbance_from_costate(table.gradient(np.asarray(x_rel, dtype=float)), b)


@dataclass(frozen=True)
class SafetyConstraint:
    """Halfplane ``g_omega * omega_r + g_a * a_r >= -c0`` in robot-control space."""
    g_omega: float
    g_a: float
    c0: float
    pair_id: int = -1

    def margin(self, omega: float, a: float) -> float:
        return self.g_omega * omega + self.g_a * a + self.c0


def halfplane_from_costate(x_rel, costate, b: RelDynamicsBounds, pair_id: int = -1) -> SafetyConstraint:
    dyn = RelativeCarDynamics(b)
    x = [float(c) for c in x_rel]
    p = [float(c) for c in costate]
    c1 = float(dyn.disturbance_term(x, p))
    c2 = float(dyn.drift_term(x, p))
    return SafetyConstraint(g_omega=p[2], g_a=p[3], c0=c1 + c2, pair_id=pair_id)


def safe_halfplane(table: ValueTable, x_rel, b: RelDynamicsBounds, pair_id: int = -1) -> SafetyConstraint:
    """Controls keeping the value from decreasing under the worst disturbance."""
    return halfplane_from_costate(x_rel, table.gradient(np.asarray(x_rel, dtype=float)), b, pair_id)


# ---------------------------------------------------------------------------
# level-set marching
# ---------------------------------------------------------------------------

def _slab(ndim: int, axis: int, sl: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _upwind_terms(values: np.ndarray, axis: int, h: float, periodic: bool):
    """Average of one-sided differences and half their jump along ``axis``.

    Non-periodic boundaries extrapolate linearly, so both one-sided
    differences coincide there.
    """
    nd = values.ndim
    d = np.diff(values, axis=axis)
    d *= 1.0 / h
    avg = np.empty_like(values)
    jump = np.zeros_like(values)
    inner = _slab(nd, axis, slice(1, -1))
    avg[inner] = d[_slab(nd, axis, slice(1, None))]
    avg[inner] += d[_slab(nd, axis, slice(None, -1))]
    avg[inner] *= 0.5
    jump[inner] = d[_slab(nd, axis, slice(1, None))]
    jump[inner] -= d[_slab(nd, axis, slice(None, -1))]
    jump[inner] *= 0.5
    first, last = _slab(nd, axis, slice(0, 1)), _slab(nd, axis, slice(-1, None))
    if periodic:
        # node n-1 duplicates node 0
        d_first, d_last = d[first], d[last]
        avg[first] = 0.5 * (d_first + d_last)
        jump[first] = 0.5 * (d_first - d_last)
        avg[last] = avg[first]
        jump[last] = jump[first]
    else:
        avg[first] = d[first]
        avg[last] = d[last]
    return avg, jump


@dataclass
class MarchResult:
    table: ValueTable
    times: list[float]
    snapshots: list[np.ndarray]
    dt: float
    steps: int
    alpha: np.ndarray


def march(spec: GridSpec, initial: np.ndarray, system: HamiltonianSystem, cfg: SolverConfig) -> MarchResult:
    """Time-march ``dV/dtau = min(0, H(x, grad V))`` from ``initial`` to the horizon."""
    needed = np.asarray(system.partial_bounds(spec), dtype=float)
    if cfg.dissipation_bounds is None:
        alpha = needed * cfg.dissipation_margin
    else:
        alpha = np.asarray(cfg.dissipation_bounds, dtype=float)
        if alpha.shape != needed.shape or np.any(alpha < needed):
            raise ValueError(f"dissipation bounds {alpha} do not dominate |dH/dp| = {needed}")
    h = spec.spacing
    rate_bound = float(np.sum(alpha / h))
    dt_max = cfg.cfl_number / rate_bound if rate_bound > 0 else cfg.time_horizon_tau
    if not dt_max > 0:
        raise SolverError(f"CFL condition gives a nonpositive step {dt_max}")
    steps = max(1, math.ceil(cfg.time_horizon_tau / dt_max - 1e-9))
    dt = cfg.time_horizon_tau / steps
    log.info("marching %d steps of %.5f s on %d nodes", steps, dt, spec.size)

    coords = [spec.mesh(i) for i in range(spec.dim_count)]
    values = np.array(initial, dtype=np.float64).reshape(spec.shape)
    times, snapshots = [0.0], []
    if cfg.store_intermediate:
        snapshots.append(values.copy())
    for k in range(steps):
        costate = []
        rate = np.zeros_like(values)
        for i in range(spec.dim_count):
            avg, jump = _upwind_terms(values, i, h[i], spec.periodic[i])
            jump *= alpha[i]
            rate += jump
            del jump
            costate.append(avg)
        rate += system.hamiltonian(coords, costate)
        del costate
        np.minimum(rate, 0.0, out=rate)
        rate *= dt
        values += rate
        if not np.all(np.isfinite(values)):
            raise SolverError(f"non-finite values after step {k + 1} (tau={(k + 1) * dt:.4f})")
        if cfg.store_intermediate:
            times.append((k + 1) * dt)
            snapshots.append(values.copy())
    table = ValueTable(spec, values, horizon_tau=cfg.time_horizon_tau)
    return MarchResult(table=table, times=times, snapshots=snapshots, dt=dt, steps=steps, alpha=alpha)


def solve_brt(b: RelDynamicsBounds, p: RSSParams, grid: GridSpec = DEFAULT_GRID,
              cfg: SolverConfig = SolverConfig()) -> MarchResult:
    """Backward reachable tube value for the relative car dynamics."""
    if grid.dim_count != 5:
        raise ValueError("relative-car tables are five-dimensional")
    initial = grid.sample(lambda *x: terminal_value(x, p))
    return march(grid, initial, RelativeCarDynamics(b), cfg)
