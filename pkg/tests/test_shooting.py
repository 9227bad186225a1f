from dataclasses import replace

import numpy as np
import pytest

from src.core.shooting import (
    cost_and_gradient,
    finite_difference_gradient,
    gradient,
    rollout,
    running_cost,
)
from src.errors import ConfigurationError, DivergenceError, DomainError, ShapeError
from src.models.ocp import DiscreteSystem, InputBox, OcpProblem, StageCost
from src.pkpd.pk import STATE_DIM


class TestRollout:
    def test_starts_at_state_and_follows_dynamics(self, lq_bench):
        problem = lq_bench.problem()
        rng = np.random.default_rng(0)
        x = rng.normal(size=lq_bench.n_x)
        mu = rng.normal(size=(lq_bench.horizon, lq_bench.n_u))
        trajectory = rollout(problem, x, mu)
        assert trajectory.shape == (lq_bench.horizon + 1, lq_bench.n_x)
        np.testing.assert_array_equal(trajectory[0], x)
        for k in range(lq_bench.horizon):
            np.testing.assert_allclose(trajectory[k + 1], lq_bench.a @ trajectory[k] + lq_bench.b @ mu[k])

    def test_deterministic(self, anesthesia_problem):
        x = np.linspace(0.0, 3.0, STATE_DIM)
        mu = np.full((anesthesia_problem.horizon, 2), [10.0, 1.0])
        np.testing.assert_array_equal(rollout(anesthesia_problem, x, mu), rollout(anesthesia_problem, x, mu))

    def test_wrong_sequence_shape(self, lq_bench):
        with pytest.raises(ShapeError):
            rollout(lq_bench.problem(), np.zeros(lq_bench.n_x), np.zeros((lq_bench.horizon + 1, lq_bench.n_u)))

    def test_wrong_state_dimension(self, lq_bench):
        with pytest.raises(ShapeError):
            rollout(lq_bench.problem(), np.zeros(lq_bench.n_x + 1), np.zeros((lq_bench.horizon, lq_bench.n_u)))

    def test_non_finite_state_raises(self):
        system = DiscreteSystem(
            state_dim=1, input_dim=1,
            step=lambda x, u: x * np.inf,
            jacobian_x=lambda x, u: np.eye(1),
            jacobian_u=lambda x, u: np.zeros((1, 1)),
        )
        cost = StageCost(
            evaluate=lambda x, u: 0.0, grad_x=lambda x, u: np.zeros(1), grad_u=lambda x, u: np.zeros(1),
            terminal_evaluate=lambda x: 0.0, terminal_grad=lambda x: np.zeros(1),
        )
        problem = OcpProblem(system, cost, 2, [InputBox.uniform(1, -1, 1)] * 2)
        with pytest.raises(DivergenceError) as info:
            rollout(problem, [1.0], [[0.0], [0.0]])
        assert info.value.step_index == 1


class TestRunningCost:
    def test_matches_condensed_quadratic(self, lq_bench):
        problem = lq_bench.problem()
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.normal(size=lq_bench.n_x)
            mu = rng.normal(size=(lq_bench.horizon, lq_bench.n_u))
            assert running_cost(problem, x, mu) == pytest.approx(lq_bench.running_cost(x, mu), rel=1e-10)

    def test_cost_and_gradient_agree_with_separate_calls(self, anesthesia_problem):
        x = np.full(STATE_DIM, 1.0)
        mu = np.full((anesthesia_problem.horizon, 2), [20.0, 2.0])
        cost, grad = cost_and_gradient(anesthesia_problem, x, mu)
        assert cost == running_cost(anesthesia_problem, x, mu)
        np.testing.assert_array_equal(grad, gradient(anesthesia_problem, x, mu))


class TestGradient:
    def test_exact_on_quadratic(self, lq_bench):
        problem = lq_bench.problem()
        hessian, f, _ = lq_bench.condensed()
        rng = np.random.default_rng(2)
        x = rng.normal(size=lq_bench.n_x)
        mu = rng.normal(size=(lq_bench.horizon, lq_bench.n_u))
        expected = hessian @ mu.ravel() + f @ x
        np.testing.assert_allclose(gradient(problem, x, mu).ravel(), expected, rtol=1e-9, atol=1e-12)

    def test_matches_finite_differences_on_anesthesia_model(self, anesthesia_problem):
        rng = np.random.default_rng(3)
        lower, upper = anesthesia_problem.lower_bounds, anesthesia_problem.upper_bounds
        for _ in range(10):
            x = rng.uniform(0.05, 1.0, size=STATE_DIM) * np.array([200, 200, 200, 6, 200, 200, 200, 30])
            mu = rng.uniform(lower, upper)
            exact = gradient(anesthesia_problem, x, mu)
            approx = finite_difference_gradient(anesthesia_problem, x, mu)
            assert np.linalg.norm(exact - approx) <= 1e-6 * np.linalg.norm(approx)

    def test_jacobians_match_step_differences(self, anesthesia_problem):
        system = anesthesia_problem.system
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 10, size=STATE_DIM)
        u = rng.uniform(0, 5, size=2)
        h = 1e-3
        jac_x = np.column_stack([
            (system.step(x + h * e, u) - system.step(x - h * e, u)) / (2 * h) for e in np.eye(STATE_DIM)
        ])
        jac_u = np.column_stack([
            (system.step(x, u + h * e) - system.step(x, u - h * e)) / (2 * h) for e in np.eye(2)
        ])
        np.testing.assert_allclose(system.jacobian_x(x, u), jac_x, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(system.jacobian_u(x, u), jac_u, rtol=1e-6, atol=1e-9)

    def test_non_positive_step_size_rejected(self, lq_bench):
        with pytest.raises(DomainError):
            finite_difference_gradient(lq_bench.problem(), np.zeros(lq_bench.n_x),
                                       np.zeros((lq_bench.horizon, lq_bench.n_u)), step_size=0.0)


def stepwise_copy(problem: OcpProblem) -> OcpProblem:
    """Same problem without the stacked linear maps or the trajectory cost."""
    system = replace(problem.system, a_matrix=None, b_matrix=None)
    return replace(problem, system=system, cost=replace(problem.cost, trajectory_terms=None))


class TestLiftedLinearPath:
    def test_rollout_matches_stepwise(self, anesthesia_problem):
        rng = np.random.default_rng(5)
        x = rng.uniform(0.0, 3.0, size=STATE_DIM)
        mu = rng.uniform([0, 0], [200, 20], size=(anesthesia_problem.horizon, 2))
        np.testing.assert_allclose(
            rollout(anesthesia_problem, x, mu),
            rollout(stepwise_copy(anesthesia_problem), x, mu),
            rtol=1e-10, atol=1e-12,
        )

    def test_cost_and_gradient_match_costate_sweep(self, anesthesia_problem):
        rng = np.random.default_rng(6)
        stepwise = stepwise_copy(anesthesia_problem)
        for _ in range(5):
            x = rng.uniform(0.0, 3.0, size=STATE_DIM)
            mu = rng.uniform([0, 0], [200, 20], size=(anesthesia_problem.horizon, 2))
            cost, grad = cost_and_gradient(anesthesia_problem, x, mu)
            ref_cost, ref_grad = cost_and_gradient(stepwise, x, mu)
            assert cost == pytest.approx(ref_cost, rel=1e-10)
            np.testing.assert_allclose(grad, ref_grad, rtol=1e-8, atol=1e-10)

    def test_lifted_maps_are_cached_per_horizon(self, anesthesia_problem):
        system = anesthesia_problem.system
        phi, gamma = system.lifted(3)
        assert phi.shape == (4 * STATE_DIM, STATE_DIM)
        assert gamma.shape == (4 * STATE_DIM, 3 * 2)
        assert system.lifted(3)[1] is gamma
        np.testing.assert_array_equal(gamma[:STATE_DIM], 0.0)
        np.testing.assert_allclose(gamma[STATE_DIM:2 * STATE_DIM, :2], system.b_matrix)

    def test_problem_rebuilt_with_new_boxes_keeps_maps(self, anesthesia_problem):
        phi, _ = anesthesia_problem.system.lifted(anesthesia_problem.horizon)
        moved = anesthesia_problem.with_constraints(
            [InputBox.uniform(2, 0.0, 1.0)] * anesthesia_problem.horizon
        )
        assert moved.system.lifted(moved.horizon)[0] is phi
        np.testing.assert_array_equal(moved.upper_bounds, np.ones((moved.horizon, 2)))

    def test_lifted_requires_linear_maps(self, lq_bench):
        with pytest.raises(ConfigurationError):
            lq_bench.problem().system.lifted(2)

    def test_linear_maps_must_match_dimensions(self):
        with pytest.raises(ConfigurationError):
            DiscreteSystem(
                state_dim=2, input_dim=1,
                step=lambda x, u: x, jacobian_x=lambda x, u: np.eye(2), jacobian_u=lambda x, u: np.zeros((2, 1)),
                a_matrix=np.eye(3), b_matrix=np.zeros((3, 1)),
            )
