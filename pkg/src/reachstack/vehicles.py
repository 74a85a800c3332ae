"""Car dynamics, planner kinematics and the lane/speed tracking controller."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .hji import RelativeState


@dataclass(frozen=True)
class VehicleParams:
    length: float = 5.0
    width: float = 2.0
    max_steer: float = 0.4
    a_min: float = -5.0
    a_max: float = 5.0
    v_floor: float = 1.0


@dataclass(frozen=True)
class LaneGeometry:
    n_lanes: int = 4
    width: float = 4.0

    def center(self, lane) -> float:
        return self.width * lane

    def nearest(self, y: float) -> int:
        return int(min(max(round(y / self.width), 0), self.n_lanes - 1))


def wrap_angle(theta: float) -> float:
    """Normalize to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class CarState:
    px: float
    py: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta, self.v])


@dataclass(frozen=True)
class CarControl:
    delta: float
    a: float


@dataclass(frozen=True)
class PlannerState:
    s: float
    lane: int
    v: float


@dataclass(frozen=True)
class TrackingGains:
    K_theta: float = 5.0
    K1: float = 2.0
    K2: float = 1.67

    def __post_init__(self):
        if min(self.K_theta, self.K1, self.K2) <= 0:
            raise ValueError("tracking gains must be positive")


class Action(IntEnum):
    FASTER = 0
    SLOWER = 1
    LANE_LEFT = 2
    LANE_RIGHT = 3
    IDLE = 4


def _car_rhs(state: np.ndarray, delta: float, a: float, length: float) -> np.ndarray:
    _, _, theta, v = state
    return np.array([v * math.cos(theta), v * math.sin(theta), v * math.tan(delta) / length, a])


def step_car(z: CarState, w: CarControl, dt: float, length: float = 5.0) -> CarState:
    """One RK4 step of the dynamically extended simple car."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if abs(w.delta) >= math.pi / 2:
        raise ValueError("steering angle must lie inside (-pi/2, pi/2)")
    x = z.as_array()
    k1 = _car_rhs(x, w.delta, w.a, length)
    k2 = _car_rhs(x + 0.5 * dt * k1, w.delta, w.a, length)
    k3 = _car_rhs(x + 0.5 * dt * k2, w.delta, w.a, length)
    k4 = _car_rhs(x + dt * k3, w.delta, w.a, length)
    px, py, theta, v = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return CarState(float(px), float(py), wrap_angle(float(theta)), max(float(v), 0.0))


def relative_state(z_r: CarState, z_o: CarState) -> RelativeState:
    """Robot-minus-other positions in the inertial frame, plus robot heading and both speeds."""
    return RelativeState(z_r.px - z_o.px, z_r.py - z_o.py, z_r.theta, z_r.v, z_o.v)


def planner_transition(x: PlannerState, action: Action, dt_plan: float = 1.0,
                       v_bounds: tuple[float, float] = (15.0, 30.0),
                       lane_bounds: tuple[int, int] = (0, 3)) -> PlannerState:
    """Apply one planner action; the longitudinal advance uses the pre-action speed."""
    v, lane = x.v, x.lane
    action = Action(action)
    if action is Action.FASTER:
        v += 1.0
    elif action is Action.SLOWER:
        v -= 1.0
    elif action is Action.LANE_LEFT:
        lane += 1
    elif action is Action.LANE_RIGHT:
        lane -= 1
    v = min(max(v, v_bounds[0]), v_bounds[1])
    lane = min(max(lane, lane_bounds[0]), lane_bounds[1])
    return PlannerState(x.s + x.v * dt_plan, lane, v)


def tracking_control(z_r: CarState, target: PlannerState, gains: TrackingGains = TrackingGains(),
                     vehicle: VehicleParams = VehicleParams(),
                     lanes: LaneGeometry = LaneGeometry()) -> CarControl:
    """Lane-keeping steering and speed-tracking acceleration toward a planner state.

    Steering saturates at ``vehicle.max_steer`` and acceleration at the actuator
    bounds; the arcsin argument is clamped to [-1, 1].
    """
    v = max(z_r.v, vehicle.v_floor)
    offset = z_r.py - lanes.center(target.lane)  # left of the centerline is positive
    heading_ref = math.asin(min(max(gains.K1 * offset / v, -1.0), 1.0))
    delta = math.atan(-vehicle.length * gains.K_theta / v * (z_r.theta + heading_ref))
    delta = min(max(delta, -vehicle.max_steer), vehicle.max_steer)
    a = gains.K2 * (target.v - z_r.v)
    a = min(max(a, vehicle.a_min), vehicle.a_max)
    return CarControl(delta, a)


def omega_to_delta(omega: float, v: float, length: float = 5.0, v_floor: float = 1.0) -> float:
    """Steering angle producing turn rate ``omega`` at speed ``v``."""
    return math.atan(omega * length / max(v, v_floor))


def delta_to_omega(delta: float, v: float, length: float = 5.0) -> float:
    return v * math.tan(delta) / length
