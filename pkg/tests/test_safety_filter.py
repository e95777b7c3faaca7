import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softcbf.cbf_chain import AlphaFunction
from softcbf.safety_filter import (
    ACTIVE,
    SLACK_ONLY,
    UNCONSTRAINED,
    FilterProblem,
    InfeasibleFilterError,
    feasibility_certificate,
    solve_filter,
    solve_filter_oracle,
)

from oracles import kkt_single

ZERO = AlphaFunction.linear(0.0)


def problem(Q, c, gamma, h, lf, lg, alpha=ZERO):
    return FilterProblem(np.atleast_2d(Q), np.atleast_1d(c), gamma, alpha, h, lf, np.atleast_1d(lg))


def random_problem(rng, m):
    A = rng.normal(size=(m, m))
    Q = A @ A.T + 0.5 * np.eye(m)
    return problem(Q, rng.normal(size=m), rng.uniform(0.1, 10), rng.uniform(0, 2), rng.normal(scale=3), rng.normal(size=m))


def test_satisfied_constraint_returns_unconstrained_minimizer():
    sol = solve_filter(problem(1.0, 0.0, 1.0, 1.0, 1.0, 1.0))
    assert sol.status == UNCONSTRAINED
    assert sol.u.tolist() == [0.0] and sol.mu == 0.0 and sol.lam == 0.0


def test_active_one_dimensional_instance():
    p = problem(1.0, 0.0, 5.0, 0.0, -1.0, 1.0)
    sol = solve_filter(p)
    assert sol.status == ACTIVE
    assert sol.lam == pytest.approx(1.0, abs=1e-15)
    assert sol.u == pytest.approx([1.0], abs=1e-15)
    assert sol.mu == 0.0
    grid = solve_filter_oracle(p, bounds=(-3, 3), resolution=61)
    assert grid.u == pytest.approx([1.0], abs=0.1)


def test_trivial_instance_oracle():
    grid = solve_filter_oracle(problem(1.0, 0.0, 1.0, 1.0, 1.0, 1.0), bounds=(-2, 2), resolution=41)
    assert np.abs(grid.u).max() <= 0.1 and abs(grid.mu) <= 0.1


def test_matches_hand_kkt():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = random_problem(rng, 2)
        sol = solve_filter(p)
        u, mu, lam = kkt_single(p.Q, p.c, p.a, p.Lg_h, p.h, p.gamma)
        np.testing.assert_allclose(sol.u, u, rtol=1e-10, atol=1e-12)
        assert sol.mu == pytest.approx(mu, rel=1e-10, abs=1e-14)
        assert sol.lam == pytest.approx(lam, rel=1e-10, abs=1e-14)


def test_closed_form_never_loses_to_grid():
    rng = np.random.default_rng(2)
    for _ in range(60):
        m = int(rng.integers(1, 3))
        p = random_problem(rng, m)
        sol = solve_filter(p)
        grid = solve_filter_oracle(p, bounds=(-20, 20), resolution=41, refinements=30)
        assert p.objective(sol.u, sol.mu) <= p.objective(grid.u, grid.mu) + 1e-6
        assert p.objective(grid.u, grid.mu) - p.objective(sol.u, sol.mu) <= 1e-4
        assert sol.residual >= -1e-9


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4))
def test_kkt_conditions(seed, m):
    p = random_problem(np.random.default_rng(seed), m)
    sol = solve_filter(p)
    assert sol.residual >= -1e-9
    assert sol.lam >= 0
    assert abs(sol.lam * sol.residual) <= 1e-8
    if sol.status == ACTIVE:
        assert np.linalg.norm(p.Q @ sol.u + p.c - sol.lam * p.Lg_h) <= 1e-8
        assert abs(2 * p.gamma * sol.mu - sol.lam * p.h) <= 1e-8


def test_idempotent_on_safe_desires():
    rng = np.random.default_rng(4)
    for _ in range(50):
        ud = rng.normal(size=2)
        p = problem(np.eye(2), -ud, 1.0, 1.0, 100.0, rng.normal(size=2))
        sol = solve_filter(p)
        assert sol.status == UNCONSTRAINED and np.array_equal(sol.u, ud)


def test_huge_gamma_treats_slack_as_zero():
    p = problem(np.eye(2), [1.0, 0.0], 1e24, 1e-160, -5.0, [1.0, 1.0])
    sol = solve_filter(p)
    assert sol.status == ACTIVE and sol.residual == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.u, [2.0, 3.0], rtol=1e-14)


def test_slack_only_when_input_has_no_effect():
    sol = solve_filter(problem(np.eye(2), [0.0, 0.0], 1.0, 2.0, -4.0, [0.0, 0.0]))
    assert sol.status == SLACK_ONLY
    assert sol.mu == pytest.approx(2.0) and sol.residual == pytest.approx(0.0, abs=1e-12)


def test_infeasible_point_raises():
    with pytest.raises(InfeasibleFilterError):
        solve_filter(problem(np.eye(2), [0.0, 0.0], 1.0, 0.0, -1.0, [0.0, 0.0]))


def test_negative_h_gives_negative_slack_unclipped():
    sol = solve_filter(problem(1.0, 0.0, 1.0, -0.5, -1.0, 1.0))
    assert sol.mu < 0


def test_outer_alpha_enters_constraint():
    p = problem(1.0, 0.0, 1e24, 2.0, -1.0, 1.0, AlphaFunction.linear(0.5))
    assert p.a == 0.0
    assert solve_filter(p).status == UNCONSTRAINED


@pytest.mark.parametrize("Q", [[[1.0, 0.5], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]]])
def test_invalid_cost_matrix_raises(Q):
    with pytest.raises(ValueError):
        problem(np.array(Q), [0.0, 0.0], 1.0, 1.0, 0.0, [1.0, 0.0])


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        problem(np.eye(2), [0.0, 0.0], 1.0, 1.0, 0.0, [1.0])
    with pytest.raises(ValueError):
        problem(np.eye(1), [0.0], 0.0, 1.0, 0.0, [1.0])


def test_oracle_limits():
    with pytest.raises(ValueError):
        solve_filter_oracle(problem(np.eye(3), np.zeros(3), 1.0, 1.0, 0.0, np.ones(3)))
    with pytest.raises(InfeasibleFilterError):
        solve_filter_oracle(problem(1.0, 0.0, 1.0, 0.0, -100.0, 1.0), bounds=(-1, 1))


def test_certificate_with_positive_h():
    p = problem(np.eye(2), [1.0, -2.0], 1.0, 1.0, -7.0, [0.3, 0.1])
    cert = feasibility_certificate(p)
    assert cert.feasible and cert.mu >= 0
    assert p.residual(cert.u, cert.mu) >= -1e-12


def test_certificate_on_boundary_uses_input_direction():
    cert = feasibility_certificate(problem(np.eye(2), [0.0, 0.0], 1.0, 0.0, -3.0, [0.0, 1.0]))
    assert cert.feasible
    np.testing.assert_allclose(cert.u, [0.0, 3.0])
    assert cert.mu == 0.0


def test_certificate_infeasible_cases():
    assert not feasibility_certificate(problem(np.eye(2), [0.0, 0.0], 1.0, 0.0, -1.0, [0.0, 0.0])).feasible
    assert not feasibility_certificate(problem(1.0, 0.0, 1.0, -1.0, 0.0, 1.0)).feasible
    assert feasibility_certificate(problem(np.eye(2), [0.0, 0.0], 1.0, 0.0, 2.0, [0.0, 0.0])).feasible
