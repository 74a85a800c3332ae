"""End-to-end acceptance checks, one test per criterion.

The default 5D table is solved once per session (criterion 7 times that
solve) and shared by the criteria that need it.
"""

import math
import time

import numpy as np
import pytest

from acceptance_log import record
from oracle_systems import DoubleIntegrator, DriftDisturbance1D, double_integrator_boundary, zero_crossing
from qp_oracle import qp_oracle, random_instance
from reachstack.cli import main
from reachstack.config import parse_config
from reachstack.grid import GridSpec
from reachstack.harness import run_batch
from reachstack.hji import (DEFAULT_GRID, RelDynamicsBounds, SolverConfig, hamiltonian, march, optimal_disturbance,
                            relative_dynamics, solve_brt)
from reachstack.metrics import Body, aggregate, bodies_overlap
from reachstack.rss import RSSParams
from reachstack.safety import Mode, SafetyController, SafetyControllerConfig, solve_safety_qp
from reachstack.tablefile import save_table
from reachstack.vehicles import CarControl, CarState, delta_to_omega, relative_state, step_car

pytestmark = pytest.mark.slow

B = RelDynamicsBounds()
B_V = (DEFAULT_GRID.lower[4], DEFAULT_GRID.upper[4])  # other-car speeds stay on the table


@pytest.fixture(scope="session")
def default_solve():
    t0 = time.perf_counter()
    result = solve_brt(B, RSSParams(), DEFAULT_GRID, SolverConfig())
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_table(default_solve):
    return default_solve[0].table


# --- 1 ---------------------------------------------------------------------

def test_criterion_1_analytic_oracles():
    # 1D: x' = d, |d| <= 1, target x <= 0; the zero level moves to x = tau
    t0 = time.perf_counter()
    spec1 = GridSpec((-2.0,), (4.0,), (101,))
    tau1 = 1.3
    v1 = march(spec1, spec1.sample(lambda x: x), DriftDisturbance1D(), SolverConfig(time_horizon_tau=tau1)).table
    err1 = abs(zero_crossing(spec1.axis(0), v1.data) - tau1)
    time1 = time.perf_counter() - t0

    # 2D double integrator avoiding |x1| <= 1
    t0 = time.perf_counter()
    spec2 = GridSpec((-5.0, -3.0), (5.0, 3.0), (201, 121))
    tau2 = 1.0
    v2 = march(spec2, spec2.sample(lambda x1, x2: np.abs(x1) - 1.0), DoubleIntegrator(),
               SolverConfig(time_horizon_tau=tau2)).table
    h1 = spec2.spacing[0]
    xs = spec2.axis(0)
    pos = xs >= 0
    errs = []
    for j, speed in enumerate(spec2.axis(1)):
        if not -2.0 <= speed <= 0.5:
            continue
        got = zero_crossing(xs[pos], v2.data[pos, j])
        errs.append(abs(got - double_integrator_boundary(speed, tau2)))
    err2 = max(errs) / h1
    time2 = time.perf_counter() - t0

    ok = err1 <= spec1.spacing[0] and err2 <= 1.0 and time1 < 10 and time2 < 10
    record(1, ok, f"1D boundary error {err1:.2e} (cell {spec1.spacing[0]:.3f}) in {time1:.2f}s; "
                  f"2D max error {err2:.2f} cells over {len(errs)} speeds in {time2:.2f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------

def test_criterion_2_hamiltonian_brute_force():
    """Max over a 101x101 control grid plus min over a 101x101 disturbance grid.

    The Hamiltonian is a sum of a control-only and a disturbance-only term, so
    the max-min over all four inputs separates exactly into these two searches.
    """
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    om, ar = np.meshgrid(np.linspace(B.omega_r_min, B.omega_r_max, 101), np.linspace(B.a_r_min, B.a_r_max, 101))
    th, ao = np.meshgrid(np.linspace(B.theta_o_min, B.theta_o_max, 101), np.linspace(B.a_o_min, B.a_o_max, 101))
    worst = 0.0
    for _ in range(200):
        x = np.array([rng.uniform(-60, 60), rng.uniform(-12, 12), rng.uniform(-math.pi / 4, math.pi / 4),
                      rng.uniform(10, 32), rng.uniform(10, 32)])
        p = rng.normal(size=5) * rng.choice([0.1, 1.0, 10.0])
        ctrl = (p[0] * x[3] * math.cos(x[2]) + p[1] * x[3] * math.sin(x[2]) + p[2] * om + p[3] * ar).max()
        dist = (-p[0] * x[4] * np.cos(th) - p[1] * x[4] * np.sin(th) + p[4] * ao).min()
        worst = max(worst, abs(hamiltonian(x, p, B) - (ctrl + dist)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 30
    record(2, ok, f"max |H - brute force| = {worst:.2e} on 200 states in {elapsed:.2f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------

def test_criterion_3_qp_oracle():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = {Mode.MI: -np.inf, Mode.SW: -np.inf}
    for mode in (Mode.MI, Mode.SW):
        for _ in range(500):
            constraints, desired, cfg = random_instance(rng, mode)
            sol = solve_safety_qp(constraints, desired, cfg)
            worst[mode] = max(worst[mode], abs(sol.objective - qp_oracle(constraints, desired, cfg)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    record(3, ok, f"max objective gap MI {worst[Mode.MI]:.1e}, SW {worst[Mode.SW]:.1e} "
                  f"on 2x500 instances in {elapsed:.1f}s (oracle included)")
    assert ok


# --- 4 ---------------------------------------------------------------------

def _body(z: CarState) -> Body:
    return Body(z.px, z.py, z.theta, z.v * math.cos(z.theta), z.v * math.sin(z.theta))


def approach_start(table, rng, eps):
    """Relative state where a closing pair first reaches V = eps, searched inward from 55 m."""
    def value(px, py, vr, vo):
        return float(table.interpolate(np.array([px, py, 0.0, vr, vo])))
    while True:
        py, vr, vo = rng.uniform(-6, 6), rng.uniform(14, 28), rng.uniform(14, 28)
        side = -1.0 if vr > vo else 1.0  # the faster car starts behind
        xs = side * np.arange(55.0, -0.01, -0.5)
        vals = [value(x, py, vr, vo) for x in xs]
        hit = next((i for i, v in enumerate(vals) if v <= eps), None)
        if vals[0] <= eps or hit is None:
            continue
        inner, outer = xs[hit], xs[hit - 1]
        for _ in range(60):
            mid = 0.5 * (inner + outer)
            if value(mid, py, vr, vo) <= eps:
                inner = mid
            else:
                outer = mid
        return outer, py, vr, vo


def run_encounter(table, start, cfg: SafetyControllerConfig, dt=0.02, ticks=250):
    """Robot filtered by the controller against an other car playing the optimal disturbance.

    The encounter stops early when the relative state leaves the table's box.
    """
    px, py, vr, vo = start
    z_r, z_o = CarState(px, py, 0.0, vr), CarState(0.0, 0.0, 0.0, vo)
    ctl = SafetyController(cfg, table)
    desired = CarControl(0.0, 3.0 if px < 0 else -3.0)  # close the gap
    lo, hi = np.array(table.spec.lower), np.array(table.spec.upper)
    v0 = float(table.interpolate(np.array(relative_state(z_r, z_o))))
    v_min, eta, lip, rate, collided = v0, 0.0, 0.0, 0.0, False
    for _ in range(ticks):
        x = np.array(relative_state(z_r, z_o), dtype=float)
        if np.any(x < lo) or np.any(x > hi):
            break
        theta_o, a_o = optimal_disturbance(table, x, B)
        res = ctl.filter(z_r, [z_o], desired)
        eta = max(eta, res.slack)
        grad = table.gradient(x)
        f = relative_dynamics(x, (delta_to_omega(res.control.delta, z_r.v), res.control.a), (theta_o, a_o))
        lip = max(lip, float(np.linalg.norm(grad)))
        rate = max(rate, float(np.linalg.norm(grad) * np.linalg.norm(f)))
        z_r = step_car(z_r, res.control, dt)
        v_o = min(max(z_o.v + a_o * dt, B_V[0]), B_V[1])
        z_o = CarState(z_o.px + z_o.v * math.cos(theta_o) * dt, z_o.py + z_o.v * math.sin(theta_o) * dt,
                       theta_o, v_o)
        v_min = min(v_min, float(table.interpolate(np.array(relative_state(z_r, z_o)))))
        collided |= bodies_overlap(_body(z_r), _body(z_o))
    slack = 2.0 * float(np.max(table.spec.spacing)) * lip + dt * rate
    return dict(v0=v0, v_min=v_min, eta=eta, slack=slack, collided=collided)



def test_criterion_4_value_preservation(default_table):
    cfg = SafetyControllerConfig()
    rng = np.random.default_rng(4)
    kept, dropped = [], []
    while len(kept) < 50 and len(kept) + len(dropped) < 400:
        enc = run_encounter(default_table, approach_start(default_table, rng, cfg.epsilon), cfg)
        (kept if enc["eta"] == 0.0 else dropped).append(enc)
    violations = sum(e["v_min"] < min(e["v0"], cfg.epsilon) - e["slack"] for e in kept)
    collisions = sum(e["collided"] for e in kept)
    worst_drop = max(min(e["v0"], cfg.epsilon) - e["v_min"] for e in kept)
    ok = len(kept) == 50 and violations == 0 and collisions == 0
    record(4, ok, f"{len(kept)} slack-free encounters of {len(kept) + len(dropped)} drawn: {violations} value "
                  f"violations, {collisions} collisions, worst drop {worst_drop:.2f}; "
                  f"encounters needing slack: {sum(e['collided'] for e in dropped)} collisions in {len(dropped)}")
    assert ok


# --- 5 ---------------------------------------------------------------------

def test_criterion_5_gradient_vs_finite_differences(default_table):
    spec = default_table.spec
    h = spec.spacing
    rng = np.random.default_rng(5)
    lo, hi = np.array(spec.lower) + h, np.array(spec.upper) - h
    x = rng.uniform(lo, hi, size=(1000, 5))
    grad = default_table.gradient(x)
    fd = np.empty_like(grad)
    for i in range(5):
        e = np.zeros(5)
        e[i] = h[i]
        fd[:, i] = (default_table.interpolate(x + e) - default_table.interpolate(x - e)) / (2 * h[i])
    err = float(np.max(np.abs(grad - fd)))
    ok = err <= 1e-6
    record(5, ok, f"max |gradient - central FD| = {err:.2e} over 1000 interior points")
    assert ok


# --- 6 ---------------------------------------------------------------------

ABLATION = [(planner, kind, mode) for planner in ("OP", "HJOP")
            for kind, mode in (("None", "MI"), ("SPC", "MI"), ("SPC", "SW"), ("RSS", "MI"), ("RSS", "SW"))]


def _label(planner, kind, mode):
    return f"{planner}+{kind}" + ("" if kind == "None" else f"+{mode}")


def test_criterion_6_ablation(default_table):
    t0 = time.perf_counter()
    stats = {}
    for planner, kind, mode in ABLATION:
        cfg = parse_config({"planner": {"kind": planner}, "controller": {"kind": kind, "mode": mode},
                            "scenario": {"n_other_cars": 40}})
        episodes = run_batch(cfg.episode_config(0), 10, base_seed=0, table=default_table)
        stats[_label(planner, kind, mode)] = aggregate(r for e in episodes for r in e.records)
    elapsed = time.perf_counter() - t0
    for name, s in stats.items():
        print(f"{name:14s} ttc>=3 {s.frac_ttc_ge_3:.3f}  v {s.mean_v:.2f}  |a| {s.mean_abs_a:.3f}  "
              f"interventions {s.intervention_pct:.1f}%  collisions {s.collision_count}")
    op, hj = stats["OP+None"], stats["HJOP+None"]
    checks = {
        "a": hj.frac_ttc_ge_3 - op.frac_ttc_ge_3 >= 0.1,
        "b": op.mean_v == max(s.mean_v for s in stats.values()),
        "c": stats["HJOP+SPC+SW"].intervention_pct < stats["OP+SPC+SW"].intervention_pct,
        "d": stats["HJOP+SPC+MI"].mean_abs_a < stats["HJOP+RSS+MI"].mean_abs_a,
        "e": all(s.frac_ttc_ge_3 >= 0.95 for n, s in stats.items() if "None" not in n),
    }
    ok = all(checks.values()) and elapsed < 1800
    detail = (f"(a) {op.frac_ttc_ge_3:.3f} vs {hj.frac_ttc_ge_3:.3f}; (b) OP+None v {op.mean_v:.2f}; "
              f"(c) {stats['HJOP+SPC+SW'].intervention_pct:.1f}% vs {stats['OP+SPC+SW'].intervention_pct:.1f}%; "
              f"(d) {stats['HJOP+SPC+MI'].mean_abs_a:.3f} vs {stats['HJOP+RSS+MI'].mean_abs_a:.3f}; "
              f"(e) min {min(s.frac_ttc_ge_3 for n, s in stats.items() if 'None' not in n):.3f}; "
              f"failed {[k for k, v in checks.items() if not v]}; {elapsed:.0f}s")
    record(6, ok, detail)
    assert ok


# --- 7 ---------------------------------------------------------------------

def test_criterion_7_default_solve(default_solve):
    result, elapsed = default_solve
    table = result.table
    px = np.linspace(0.0, 60.0, 1201)

    def unsafe_extent(sign):
        pts = np.stack([sign * px, np.zeros_like(px), np.zeros_like(px), np.full_like(px, 10.0),
                        np.full_like(px, 20.0)], axis=1)
        neg = px[table.interpolate(pts) < 0]
        return float(neg.max()) if len(neg) else 0.0

    front, behind = unsafe_extent(1.0), unsafe_extent(-1.0)
    ok = elapsed < 1200 and front > behind
    record(7, ok, f"solve {elapsed:.0f}s ({result.steps} steps); unsafe extent at v_r=10, v_o=20: "
                  f"{front:.1f} m in front vs {behind:.1f} m behind")
    assert ok


# --- 8 ---------------------------------------------------------------------

def test_criterion_8_deterministic_csv(default_table, tmp_path):
    table_path = save_table(default_table, tmp_path / "default.hjvt")
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        argv = ["--quiet", "sim", "run", "--episodes", "2", "--seed", "11",
                "--set", f"output.dir=\"{out}\"", "--set", f"output.table_path=\"{table_path}\"",
                "--set", "scenario.duration_s=10.0", "--set", "scenario.n_other_cars=40"]
        assert main(argv) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((out / "HJOP-SPC-MI").glob("*.csv"))})
    ok = len(outputs[0]) == 2 and outputs[0] == outputs[1]
    record(8, ok, f"{len(outputs[0])} episode CSVs byte-identical across two runs of HJOP-SPC-MI")
    assert ok
