"""Responsibility-Sensitive Safety distances.

All distances are center-to-center, i.e. they include the car body
(length for the longitudinal rule, width for the lateral rule).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RSSParams:
    response_time_rho: float = 0.5
    max_accel: float = 5.0
    min_brake: float = 4.0
    max_brake: float = 8.0
    lateral_accel: float = 1.0
    lateral_mu: float = 0.5
    car_length: float = 5.0
    car_width: float = 2.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"RSS parameter {name} must be positive, got {value}")
        if self.min_brake > self.max_brake:
            raise ValueError("min_brake must not exceed max_brake")


def rss_longitudinal_distance(v_rear, v_front, p: RSSParams):
    """Minimum safe center-to-center gap between a rear and a front car.

    The rear car accelerates at ``max_accel`` during the response time and then
    brakes at ``min_brake``; the front car brakes at ``max_brake``. Works on
    scalars and numpy arrays.
    """
    rho = p.response_time_rho
    v_rear = np.maximum(v_rear, 0.0)
    v_front = np.maximum(v_front, 0.0)
    v_resp = v_rear + rho * p.max_accel
    gap = (v_rear * rho + 0.5 * p.max_accel * rho**2
           + v_resp**2 / (2.0 * p.min_brake) - v_front**2 / (2.0 * p.max_brake))
    return p.car_length + np.maximum(gap, 0.0)


def _lateral_travel(u, p: RSSParams):
    # signed distance covered towards the other car: response time at
    # constant speed, then lateral braking at ``lateral_accel``
    return u * p.response_time_rho + u * np.abs(u) / (2.0 * p.lateral_accel)


def rss_lateral_distance(v_lat_right, v_lat_left, p: RSSParams):
    """Minimum safe lateral center distance between two side-by-side cars.

    ``v_lat_right`` is the lateral velocity of the car on the right and
    ``v_lat_left`` that of the car on the left, both signed positive to the
    left. Without closing motion the result is ``car_width + lateral_mu``.
    """
    closing = _lateral_travel(v_lat_right, p) + _lateral_travel(-np.asarray(v_lat_left), p)
    return p.car_width + p.lateral_mu + np.maximum(closing, 0.0)
