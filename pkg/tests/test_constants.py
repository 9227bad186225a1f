import numpy as np
import pytest

from src.core.shooting import running_cost
from src.errors import ConfigurationError, DomainError, NonConvexRegionError
from src.models.ocp import DiscreteSystem, InputBox, OcpProblem, StageCost
from src.models.scenario import Scenario
from src.pipeline.simulator import run_scenario
from src.solver.benchmarks import random_lq_bench
from src.solver.constants import SampleRegion, epsilon_from_constants, estimate_constants


def diagonal_problem(weights, limit=1.0):
    """One-step problem with h = 0.5 sum w_i u_i^2 and a state that is ignored."""
    w = np.asarray(weights, dtype=float)
    system = DiscreteSystem(
        state_dim=1,
        input_dim=len(w),
        step=lambda x, u: x.copy(),
        jacobian_x=lambda x, u: np.eye(1),
        jacobian_u=lambda x, u: np.zeros((1, len(w))),
    )
    cost = StageCost(
        evaluate=lambda x, u: 0.5 * float(u @ (w * u)),
        grad_x=lambda x, u: np.zeros(1),
        grad_u=lambda x, u: w * u,
        terminal_evaluate=lambda x: 0.0,
        terminal_grad=lambda x: np.zeros(1),
    )
    return OcpProblem(system, cost, 1, [InputBox.uniform(len(w), -limit, limit)])


class TestEpsilon:
    def test_known_values(self):
        assert epsilon_from_constants(0.5, 1.0, 2.0) == pytest.approx(np.sqrt(0.75))
        assert epsilon_from_constants(1.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_below_one_on_admissible_range(self):
        m, l2 = 0.3, 5.0
        for gamma in np.linspace(0.01, 0.39, 20):
            assert 0.0 <= epsilon_from_constants(gamma, m, l2) < 1.0

    @pytest.mark.parametrize("gamma,m,l2", [
        (0.0, 1.0, 2.0),
        (1.0, 1.0, 2.0),      # gamma = 2 / L2
        (0.1, 0.0, 2.0),
        (0.1, 3.0, 2.0),
    ])
    def test_domain(self, gamma, m, l2):
        with pytest.raises(DomainError):
            epsilon_from_constants(gamma, m, l2)


class TestEstimateConstants:
    def test_diagonal_quadratic(self):
        region = SampleRegion([-1.0], [1.0])
        estimates = estimate_constants(diagonal_problem([1.0, 4.0]), region, 500,
                                       seed=0, estimate_sigma=False)
        assert 1.0 - 1e-9 <= estimates.m <= 1.2
        assert 3.5 <= estimates.l2 <= 4.0 + 1e-9
        assert estimates.samples == 500

    def test_matches_bench_hessian(self, lq_bench):
        m, l2 = lq_bench.hessian_bounds()
        region = SampleRegion(-np.ones(3), np.ones(3), -np.ones(2), np.ones(2))
        estimates = estimate_constants(lq_bench.problem(), region, 300, seed=1, estimate_sigma=False)
        assert m - 1e-8 <= estimates.m
        assert estimates.l2 <= l2 + 1e-8

    def test_non_convex_region(self):
        region = SampleRegion([-1.0], [1.0])
        with pytest.raises(NonConvexRegionError) as info:
            estimate_constants(diagonal_problem([-1.0]), region, 10, estimate_sigma=False)
        assert info.value.estimates.m < 0
        assert "fixed iterations" in str(info.value)

    def test_sigma_within_analytic_bound(self):
        bench = random_lq_bench(seed=4, n_x=3, n_u=2, horizon=4)
        hessian, f, _ = bench.condensed()
        state_radius = np.sqrt(3) * 0.05
        feedback = np.linalg.norm(np.linalg.solve(hessian, f), 2)
        input_radius = max(np.sqrt(2) * 0.1, feedback * state_radius)
        region = SampleRegion(np.full(3, -0.05), np.full(3, 0.05), np.full(2, -0.1), np.full(2, 0.1))
        estimates = estimate_constants(bench.problem(), region, 20, seed=2)
        assert 0.0 < estimates.sigma <= bench.lipschitz_sigma(state_radius, input_radius) + 1e-6

    def test_unbounded_inputs_need_sampling_bounds(self, scalar_problem):
        with pytest.raises(ConfigurationError):
            estimate_constants(scalar_problem(m=1.0), SampleRegion([-1.0], [1.0]), 10)

    def test_sample_count(self):
        with pytest.raises(DomainError):
            estimate_constants(diagonal_problem([1.0]), SampleRegion([-1.0], [1.0]), 1)

    def test_region_validation(self):
        with pytest.raises(ConfigurationError):
            SampleRegion([1.0], [-1.0])


class TestLinearQuadraticBench:
    def test_value_is_cost_of_optimal_sequence(self, lq_bench):
        x = np.array([0.4, -1.0, 2.0])
        mu_star = lq_bench.optimal_sequence(x)
        assert running_cost(lq_bench.problem(), x, mu_star) == pytest.approx(lq_bench.value(x))

    def test_optimum_has_zero_gradient_residual(self, lq_bench):
        hessian, f, _ = lq_bench.condensed()
        x = np.array([1.0, 2.0, -0.5])
        flat = lq_bench.optimal_sequence(x).values.ravel()
        np.testing.assert_allclose(hessian @ flat + f @ x, 0.0, atol=1e-9)

    def test_lqr_gain_stabilizes(self, lq_bench):
        closed = lq_bench.a - lq_bench.b @ lq_bench.lqr_gain()
        assert np.max(np.abs(np.linalg.eigvals(closed))) < 1.0

    def test_constrained_optimum_inside_box(self):
        bench = random_lq_bench(seed=9, n_x=3, n_u=1, horizon=4, input_limit=0.2)
        x = np.array([5.0, -5.0, 5.0])
        mu = bench.constrained_optimum(x, -0.2, 0.2).values
        assert np.all(np.abs(mu) <= 0.2 + 1e-15)
        assert bench.running_cost(x, mu) <= bench.running_cost(x, np.zeros_like(mu)) + 1e-12

    def test_constrained_optimum_equals_unconstrained_for_wide_box(self, lq_bench):
        x = np.array([0.1, 0.2, -0.1])
        np.testing.assert_allclose(
            lq_bench.constrained_optimum(x, -1e3, 1e3).values,
            lq_bench.optimal_sequence(x).values,
            atol=1e-8,
        )

    def test_sublevel_radius_contains_start(self, lq_bench):
        x0 = np.array([1.0, 1.0, 1.0])
        assert lq_bench.sublevel_radius(x0) >= np.linalg.norm(x0) - 1e-12

    def test_hessian_bounds_ordered(self, lq_bench):
        m, l2 = lq_bench.hessian_bounds()
        assert 0 < m <= l2


@pytest.mark.acceptance
def test_anesthesia_region_visited_after_rise_is_convex(nominal_profile, anesthesia_problem):
    trace = run_scenario(nominal_profile, Scenario(name="induction", duration_min=15.0))
    in_band = np.abs(trace.true_bis - 50.0) <= 10.0
    assert in_band.any()
    entered = int(np.argmax(in_band))
    states = trace.estimated_states[entered:]
    inputs = trace.inputs[entered:]
    region = SampleRegion(
        states.min(axis=0), states.max(axis=0),
        input_lower=inputs.min(axis=0), input_upper=inputs.max(axis=0),
    )
    try:
        estimates = estimate_constants(anesthesia_problem, region, sample_count=40, seed=0, estimate_sigma=False)
    except NonConvexRegionError as e:
        pytest.fail(f"visited region is not strongly convex: {e}")
    assert estimates.m > 0
    assert estimates.l2 >= estimates.m
