"""Small systems with closed-form reachable sets, used as solver oracles."""

import math

import numpy as np


class DriftDisturbance1D:
    """x' = d, |d| <= 1, no control. Target x <= 0 grows to x <= tau."""

    def hamiltonian(self, coords, costate):
        return -np.abs(costate[0])

    def partial_bounds(self, spec):
        return np.array([1.0])


class DoubleIntegrator:
    """x1' = x2, x2' = u, |u| <= 1; the control tries to stay out of |x1| <= 1."""

    def hamiltonian(self, coords, costate):
        return costate[0] * coords[1] + np.abs(costate[1])

    def partial_bounds(self, spec):
        return np.array([max(abs(spec.lower[1]), abs(spec.upper[1])), 1.0])


def double_integrator_boundary(x2: float, tau: float) -> float:
    """Smallest x1 > 1 that full braking keeps outside the band for ``tau`` seconds."""
    if x2 >= 0:
        return 1.0
    if -x2 <= tau:  # the car stops inside the horizon
        return 1.0 + 0.5 * x2 * x2
    return 1.0 - x2 * tau - 0.5 * tau * tau


def zero_crossing(xs: np.ndarray, values: np.ndarray) -> float:
    """Linear-interpolated first sign change from negative to nonnegative along ``xs``."""
    for i in range(len(xs) - 1):
        if values[i] < 0 <= values[i + 1]:
            t = values[i] / (values[i] - values[i + 1])
            return float(xs[i] + t * (xs[i + 1] - xs[i]))
    return math.nan
