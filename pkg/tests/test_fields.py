import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softcbf.fields import (
    MAX_ORDER,
    ControlAffineSystem,
    DimensionError,
    DomainError,
    LieOrderError,
    ScalarField,
    VectorField,
    gradient,
    lie_derivative,
    lie_field,
)
from softcbf.sim.unicycle import ObstacleParams, obstacle_field, unicycle_system

from oracles import central_grad, pnorm_obstacle, rel_err, unicycle_f

SYS = unicycle_system()
SPEED = ScalarField(lambda x: 9.0 - x[2], 4, "speed_max")
QX = ScalarField(lambda x: x[0], 4, "qx")


def test_gradient_of_linear_field():
    x = np.array([0.3, -2.0, 1.5, 0.7])
    assert np.array_equal(gradient(SPEED, x), [0.0, 0.0, -1.0, 0.0])


def test_gradient_of_constant_field_is_zero():
    const = ScalarField(lambda x: 3.0 + 0.0 * x[0], 4)
    assert np.array_equal(gradient(const, np.ones(4)), np.zeros(4))


def test_obstacle_gradient_matches_finite_differences():
    params = ObstacleParams(0.0, 0.0, c=1.5)
    x = np.array([0.0, -8.0, 0.0, 0.0])
    ref = central_grad(lambda y: pnorm_obstacle(y, 0.0, 0.0, c=1.5), x)
    assert rel_err(gradient(obstacle_field(params), x), ref) < 1e-6


def test_drift_lie_derivative_of_speed_is_zero():
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(5, 4)):
        assert lie_derivative(SPEED, SYS, x) == 0.0


def test_input_lie_derivative_of_speed():
    row = lie_derivative(SPEED, SYS, np.array([1.0, 2.0, 3.0, 0.4]), along="input")
    assert np.array_equal(row, [-1.0, 0.0])
    assert lie_derivative(SPEED, SYS, np.zeros(4), along=0) == -1.0
    assert lie_derivative(SPEED, SYS, np.zeros(4), along=1) == 0.0


def test_drift_lie_derivative_of_position():
    assert lie_derivative(QX, SYS, np.array([0.0, 0.0, 2.0, 0.0])) == pytest.approx(2.0, abs=1e-15)


def test_order_zero_is_the_field():
    x = np.array([1.0, 2.0, 3.0, 0.4])
    assert lie_derivative(SPEED, SYS, x, order=0) == SPEED(x)


def test_fourth_order_nesting():
    # Constant drift e_0 and field x_0^4: L_f^4 = 24.
    f = VectorField(lambda x: jnp.array([1.0, 0.0]), 2, 2)
    g = VectorField(lambda x: jnp.zeros((2, 1)), 2, (2, 1))
    sys = ControlAffineSystem(f, g)
    quartic = ScalarField(lambda x: x[0] ** 4, 2)
    assert lie_derivative(quartic, sys, np.array([0.7, 0.0]), order=4) == pytest.approx(24.0, rel=1e-14)
    assert lie_derivative(quartic, sys, np.array([0.7, 0.0]), order=3) == pytest.approx(24 * 0.7, rel=1e-14)


def test_order_beyond_budget_raises():
    with pytest.raises(LieOrderError):
        lie_derivative(SPEED, SYS, np.zeros(4), order=MAX_ORDER + 1)
    with pytest.raises(LieOrderError):
        lie_derivative(SPEED, SYS, np.zeros(4), order=0, along="input")


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionError):
        gradient(SPEED, np.zeros(3))
    with pytest.raises(DimensionError):
        lie_derivative(ScalarField(lambda x: x[0], 3), SYS, np.zeros(3))
    with pytest.raises(DimensionError):
        ControlAffineSystem(VectorField(lambda x: x, 4, 4), VectorField(lambda x: jnp.zeros((3, 2)), 4, (3, 2)))


def test_non_finite_state_raises():
    with pytest.raises(DimensionError):
        SPEED(np.array([0.0, np.nan, 0.0, 0.0]))


def test_singular_point_raises_domain_error():
    h = obstacle_field(ObstacleParams(1.0, 2.0))
    with pytest.raises(DomainError):
        gradient(h, np.array([1.0, 2.0, 0.0, 0.0]))


def test_system_dimensions_and_rhs():
    assert (SYS.n, SYS.m) == (4, 2)
    x = np.array([0.0, 0.0, 2.0, np.pi / 2])
    np.testing.assert_allclose(SYS(x, [1.0, -1.0]), [0.0, 2.0, 1.0, -1.0], atol=1e-15)


def _poly_field(coef):
    c = jnp.asarray(coef)

    def fn(x):
        return c[0] * x[0] ** 2 * x[1] + c[1] * x[2] ** 3 + c[2] * x[0] * x[3] + c[3] * jnp.sin(x[3])

    return ScalarField(fn, 4)


@settings(max_examples=40, deadline=None)
@given(
    coef=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    x=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
)
def test_first_order_lie_equals_gradient_dot_drift(coef, x):
    field = _poly_field(coef)
    x = np.asarray(x)
    lhs = lie_derivative(field, SYS, x)
    rhs = gradient(field, x) @ unicycle_f(x)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(rhs), 1.0)


def test_scenario_gradients_match_finite_differences(ex1, ex1_safe_states):
    for spec in ex1.cbf.specs:
        for x in ex1_safe_states:
            ref = central_grad(spec.h, x)
            got = gradient(spec.h, x)
            assert np.linalg.norm(got - ref) <= 1e-5 * max(np.linalg.norm(ref), 1e-3), spec.label


@pytest.mark.parametrize("i", [1, 2])
def test_nesting_consistency(ex1, ex1_safe_states, i):
    for spec in ex1.cbf.specs[:7]:
        inner = lie_field(spec.h, SYS, i)
        for x in ex1_safe_states[:10]:
            direct = lie_derivative(spec.h, SYS, x, order=i + 1)
            nested = lie_derivative(inner, SYS, x, order=1)
            assert direct == pytest.approx(nested, rel=1e-12, abs=1e-12)
