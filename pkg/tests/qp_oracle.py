"""Brute-force reference for the slack-relaxed safety program."""

import numpy as np
from scipy.optimize import minimize

from reachstack.hji import RelDynamicsBounds, SafetyConstraint
from reachstack.safety import Mode, SafetyControllerConfig


def objective_grid(O, A, constraints, desired, weights, mode):
    l1, l2, l3 = weights
    worst = np.zeros_like(O) if mode is Mode.MI else np.full_like(O, -np.inf)
    for c in constraints:
        worst = np.maximum(worst, -c.c0 - c.g_omega * O - c.g_a * A)
    if not np.all(np.isfinite(worst)):
        worst = np.zeros_like(O)
    return l1 * (O - desired[0]) ** 2 + l2 * (A - desired[1]) ** 2 + l3 * worst


def qp_oracle(constraints, desired, cfg: SafetyControllerConfig, n: int = 401) -> float:
    """Minimum objective: exact-slack grid search, then a local polish of the grid minimizer.

    A 401-point grid alone is only accurate to roughly ``|g| * h`` on steep
    instances, so its best point seeds SLSQP on the equivalent smooth
    epigraph problem; the smaller of the two values is returned.
    """
    b = cfg.bounds
    l1, l2, l3 = cfg.weights
    if cfg.mode is Mode.SW:
        l2 = 0.0
    weights = (l1, l2, l3)
    om = np.linspace(b.omega_r_min, b.omega_r_max, n)
    ac = np.linspace(b.a_r_min, b.a_r_max, n)
    O, A = np.meshgrid(om, ac, indexing="ij")
    F = objective_grid(O, A, constraints, desired, weights, cfg.mode)
    i = np.unravel_index(np.argmin(F), F.shape)
    best = float(F[i])
    if not constraints:
        return best
    G = np.array([[c.g_omega, c.g_a] for c in constraints])
    c0 = np.array([c.c0 for c in constraints])
    w0 = np.array([O[i], A[i]])
    t0 = max(float(np.max(-c0 - G @ w0)), 0.0 if cfg.mode is Mode.MI else -np.inf)
    res = minimize(
        lambda z: l1 * (z[0] - desired[0]) ** 2 + l2 * (z[1] - desired[1]) ** 2 + l3 * z[2],
        [w0[0], w0[1], t0], method="SLSQP",
        bounds=[(b.omega_r_min, b.omega_r_max), (b.a_r_min, b.a_r_max),
                (0.0 if cfg.mode is Mode.MI else None, None)],
        constraints=[{"type": "ineq", "fun": lambda z: z[2] + c0 + G @ z[:2],
                      "jac": lambda z: np.c_[G, np.ones(len(G))]}],
        options={"ftol": 1e-13, "maxiter": 500},
    )
    z = np.clip(res.x[:2], [b.omega_r_min, b.a_r_min], [b.omega_r_max, b.a_r_max])
    polished = float(objective_grid(np.array(z[0]), np.array(z[1]), constraints, desired, weights, cfg.mode))
    return min(best, polished)


def random_instance(rng, mode: Mode, max_constraints: int = 5):
    w_hi = rng.uniform(0.1, 0.5)
    a_hi = rng.uniform(2.0, 8.0)
    bounds = RelDynamicsBounds(omega_r_min=-rng.uniform(0.1, 0.5), omega_r_max=w_hi,
                               a_r_min=-rng.uniform(2.0, 8.0), a_r_max=a_hi)
    cfg = SafetyControllerConfig(mode=mode, bounds=bounds)
    m = int(rng.integers(1, max_constraints + 1))
    constraints = [SafetyConstraint(float(rng.normal(0, 5)), float(rng.normal(0, 2)), float(rng.normal(0, 3)), j)
                   for j in range(m)]
    desired = (float(rng.uniform(bounds.omega_r_min, bounds.omega_r_max)),
               float(rng.uniform(bounds.a_r_min, bounds.a_r_max)))
    return constraints, desired, cfg
