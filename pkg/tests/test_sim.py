import json
import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softcbf.cbf_chain import membership
from softcbf.fields import ControlAffineSystem, VectorField
from softcbf.sim import (
    DesiredControlGains,
    ObstacleParams,
    ScenarioConfig,
    TrajectoryLog,
    apply_overrides,
    build_scenario,
    desired_control_unicycle,
    load_config,
    obstacle_barrier,
    run_episode,
    step_rk4,
    trace_header,
)
from softcbf.sim.integrate import NonFiniteStateError
from softcbf.sim.scenario import ConfigError
from softcbf.sim.unicycle import WallParams, desired_control_fn

from oracles import desired_control_ref, rk4_ref, unicycle_f

GAINS = DesiredControlGains()


def decay_system(n=1):
    return ControlAffineSystem(VectorField(lambda x: -x, n, n), VectorField(lambda x: jnp.zeros((n, 1)), n, (n, 1)))


@pytest.fixture(scope="module")
def short_log(ex1_cfg, ex1):
    cfg = apply_overrides(ex1_cfg, ["duration=0.05"])
    return run_episode(cfg, build_scenario(cfg))


def test_desired_control_example():
    np.testing.assert_allclose(desired_control_unicycle(GAINS, (1.0, 0.0), np.zeros(4)), [1.4, 0.0], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    q=st.tuples(st.floats(-10, 10), st.floats(-10, 10)),
    v=st.floats(-1, 9),
    theta=st.floats(-math.pi, math.pi),
    goal=st.sampled_from([(3.0, 4.5), (-7.0, 0.0), (7.0, 1.5), (-1.0, 7.0)]),
)
def test_desired_control_matches_reference(q, v, theta, goal):
    xhat = np.array([q[0], q[1], v, theta])
    if math.hypot(q[0] - goal[0], q[1] - goal[1]) < 1e-3:
        return
    ref = desired_control_ref(xhat, goal)
    got = desired_control_unicycle(GAINS, goal, xhat)
    assert np.abs(got - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


def test_desired_control_at_goal_damps_speed():
    np.testing.assert_allclose(desired_control_unicycle(GAINS, (2.0, 1.0), [2.0, 1.0, 1.5, 0.3]), [-3.3, 0.0])
    fn = desired_control_fn(GAINS, (2.0, 1.0))
    assert np.all(np.isfinite(np.asarray(fn(jnp.array([2.0, 1.0, 1.5, 0.3])))))


def test_goal_radius_deadband():
    near = [2.005, 1.0, 1.0, 0.0]
    np.testing.assert_allclose(desired_control_unicycle(GAINS, (2.0, 1.0), near, goal_radius=0.01), [-2.2, 0.0])
    assert desired_control_unicycle(GAINS, (2.0, 1.0), near)[1] != 0.0


def test_obstacle_barrier_values():
    o = ObstacleParams(1.0, -2.0, c=1.5)
    assert obstacle_barrier(o, [2.0, -2.0, 0.0, 0.0]) == pytest.approx(-0.5, abs=1e-15)
    assert obstacle_barrier(ObstacleParams(0.0, 0.0, c=1.0, p=2.0), [2.0, 0.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert obstacle_barrier(WallParams(), [0.0, 5.0, 0.0, 0.0]) == pytest.approx(0.5, abs=1e-15)


def test_obstacle_center_is_singular():
    with pytest.raises(ValueError):
        ObstacleParams(0.0, 0.0, c=-1.0)


def test_rk4_zero_field_is_identity():
    sys = ControlAffineSystem(VectorField(lambda x: 0.0 * x, 2, 2), VectorField(lambda x: jnp.zeros((2, 1)), 2, (2, 1)))
    x = np.array([1.0, -2.0])
    assert np.array_equal(step_rk4(sys, x, [0.0], 0.01), x)


def test_rk4_exponential_decay():
    sys = decay_system()
    x = np.array([1.0])
    for _ in range(1000):
        x = step_rk4(sys, x, [0.0], 1e-3)
    assert abs(x[0] - math.exp(-1.0)) <= 1e-12


def test_rk4_matches_reference_step(ex1):
    x = np.array([0.5, -1.0, 2.0, 0.3])
    u = np.array([0.4, -0.2])
    ref = rk4_ref(lambda y: unicycle_f(y) + np.array([0, 0, u[0], u[1]]), x, 1e-3)
    np.testing.assert_allclose(step_rk4(ex1.sys, x, u, 1e-3), ref, rtol=1e-15, atol=1e-15)


def test_rk4_non_finite_raises():
    sys = ControlAffineSystem(VectorField(lambda x: x**3, 1, 1), VectorField(lambda x: jnp.zeros((1, 1)), 1, (1, 1)))
    with pytest.raises(NonFiniteStateError):
        step_rk4(sys, np.array([1e120]), [0.0], 1.0)
    with pytest.raises(ValueError):
        step_rk4(sys, np.array([1.0]), [0.0], 0.0)


def test_zero_duration_gives_one_row(ex1_cfg, ex1):
    log = run_episode(apply_overrides(ex1_cfg, ["duration=0"]), ex1)
    assert len(log) == 1 and log.failure is None
    assert log.column("t")[0] == 0.0


def test_row_count_and_time_axis(short_log):
    assert len(short_log) == 51
    t = short_log.column("t")
    assert np.all(np.diff(t) > 0)
    assert t[-1] == pytest.approx(0.05)
    assert short_log.header == trace_header(False)


def test_logged_states_are_safe_and_finite(short_log):
    assert np.all(np.isfinite(short_log.data))
    assert short_log.column("h").min() >= 0
    assert short_log.column("min_hj").min() >= 0


def test_deterministic_runs(ex1_cfg, short_log):
    cfg = apply_overrides(ex1_cfg, ["duration=0.05"])
    again = run_episode(cfg, build_scenario(cfg))
    assert np.array_equal(again.data, short_log.data) and again.status == short_log.status


def test_csv_roundtrip_is_exact(short_log, tmp_path):
    path = tmp_path / "trace.csv"
    short_log.to_csv(path)
    back = TrajectoryLog.from_csv(path)
    assert back.header == short_log.header
    assert np.array_equal(back.data, short_log.data) and back.status == short_log.status


def test_augmented_header(ex3_cfg, ex3):
    log = run_episode(apply_overrides(ex3_cfg, ["duration=0.01"]), ex3)
    assert log.header == trace_header(True)
    assert len(log) == 11 and log.failure is None
    np.testing.assert_allclose(log.column("e1"), log.column("uhat1") - log.column("ud1hat"))


def test_config_roundtrip(ex1_cfg, ex3_cfg, tmp_path):
    for cfg in (ex1_cfg, ex3_cfg):
        path = tmp_path / f"{cfg.name}.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert load_config(path) == cfg


def test_overrides(ex1_cfg):
    cfg = apply_overrides(ex1_cfg, ["goal=[1, 2]", "filter.rho=20", "map.obstacles.0.c=2.0", "filter.rho=30"])
    assert cfg.goal == (1.0, 2.0) and cfg.rho == 30.0 and cfg.obstacles[0].c == 2.0
    assert ex1_cfg.rho == 10.0
    with pytest.raises(ConfigError):
        apply_overrides(ex1_cfg, ["duration"])


def test_bad_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "name": "x",\n  oops\n}')
    with pytest.raises(ConfigError, match=r"bad\.json:3:3"):
        load_config(path)


@pytest.mark.parametrize(
    "override",
    ["duration=-1", "control_rate=0", "dt_integrator=0.0007", "x0=[0, 0, 0]", "goal_radius=-0.1", "filter.gamma=0"],
)
def test_invalid_values_rejected(ex1_cfg, override):
    with pytest.raises(ConfigError):
        apply_overrides(ex1_cfg, [override])


def test_controller_needs_input_bounds(ex3_cfg):
    d = ex3_cfg.to_dict()
    d["input_bounds"] = None
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(d)


def test_missing_goal_rejected(ex1_cfg):
    d = ex1_cfg.to_dict()
    del d["goal"]
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(d)


def test_x0_inside_obstacle_is_flagged(ex1_cfg):
    o = ex1_cfg.obstacles[0]
    cfg = apply_overrides(ex1_cfg, [f"x0=[{o.b_x + 0.5}, {o.b_y}, 0, 0]", "duration=0"])
    log = run_episode(cfg)
    assert not log.x0_admissible


def test_logged_states_in_S_and_C_are_in_Ss(ex1, short_log):
    for row in short_log.data[::10]:
        m = membership(ex1.cbf, ex1.sys, row[1:5])
        if m.in_S and m.in_C:
            assert m.in_Ss
