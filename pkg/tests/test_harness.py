import itertools

import numpy as np
import pytest

from reachstack.harness import EpisodeConfig, SpawnError, run_batch, run_episode, spawn
from reachstack.metrics import bodies_overlap
from reachstack.planner import PlannerConfig, RewardWeights
from reachstack.safety import SafetyControllerConfig

OP = PlannerConfig(weights=RewardWeights(gamma_R=1.0))


def test_full_episode_accounting():
    res = run_episode(EpisodeConfig(seed=3, n_other_cars=8, planner=OP))
    assert len(res.records) == 1500 and res.trajectory.shape == (1500, 5)
    assert res.plans == 30
    assert res.records[0].t == 0.0 and res.records[-1].t == pytest.approx(29.98)
    assert not any(r.intervened for r in res.records)
    assert res.stats.intervention_pct == 0.0


def test_deterministic():
    cfg = EpisodeConfig(seed=5, duration_s=4.0, n_other_cars=20, planner=OP)
    a, b = run_episode(cfg), run_episode(cfg)
    assert a.records == b.records
    np.testing.assert_array_equal(a.trajectory, b.trajectory)
    c = run_episode(EpisodeConfig(seed=6, duration_s=4.0, n_other_cars=20, planner=OP))
    assert c.records != a.records


def test_empty_road_reaches_top_lane_and_speed():
    res = run_episode(EpisodeConfig(n_other_cars=0, planner=OP))
    t, px, py, theta, v = res.trajectory[-1]
    assert py == pytest.approx(12.0, abs=0.1)
    assert v == pytest.approx(30.0, abs=0.1)
    assert all(r.ttc == 20.0 and r.btn == 0.0 for r in res.records)


def test_spawn_layout():
    cfg = EpisodeConfig(n_other_cars=100)
    robot, traffic = spawn(cfg, np.random.default_rng(0))
    assert robot.px < traffic.s.min() and robot.v == 20.0 and robot.py == 0.0
    assert np.all((traffic.v >= 18.0) & (traffic.v <= 27.0))
    bodies = traffic.bodies()
    for i, j in itertools.combinations(range(len(bodies)), 2):
        if abs(bodies[i].x - bodies[j].x) < 10:
            assert not bodies_overlap(bodies[i], bodies[j])
    for ln in range(4):
        s = np.sort(traffic.s[traffic.lane == ln])
        gaps = np.diff(s) - 5.0
        assert np.all((gaps >= 15.0) & (gaps <= 40.0))


def test_spawn_error():
    with pytest.raises(SpawnError):
        spawn(EpisodeConfig(n_other_cars=1000), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(robot_lane=4)
    with pytest.raises(ValueError):
        EpisodeConfig(duration_s=0.0)


def test_table_required():
    with pytest.raises(ValueError):
        run_episode(EpisodeConfig(duration_s=1.0, n_other_cars=2,
                                  planner=PlannerConfig(weights=RewardWeights(gamma_R=0.9))))
    with pytest.raises(ValueError):
        run_episode(EpisodeConfig(duration_s=1.0, n_other_cars=2, planner=OP,
                                  controller=SafetyControllerConfig(kind="SPC")))


def test_collisions_logged_once():
    # nearly stopped traffic packed right in front of the robot
    cfg = EpisodeConfig(seed=1, duration_s=3.0, n_other_cars=8, spawn_gap=(0.5, 1.0), spawn_speed=(0.0, 0.5),
                        planner=OP)
    res = run_episode(cfg)
    ids = [c.agent_id for c in res.collisions]
    assert len(ids) >= 1 and len(ids) == len(set(ids))
    assert sum(r.collision_event for r in res.records) == len(ids) == res.stats.collision_count


def test_batch_seeds_in_order():
    cfg = EpisodeConfig(duration_s=1.0, n_other_cars=4, planner=OP)
    batch = run_batch(cfg, 2, base_seed=7)
    assert batch[1].records == run_episode(EpisodeConfig(seed=8, duration_s=1.0, n_other_cars=4,
                                                         planner=OP)).records
