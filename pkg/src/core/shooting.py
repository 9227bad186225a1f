"""
Shooting - Rollout, running cost and exact gradients of an OcpProblem

The gradient uses one forward rollout and one backward costate sweep:

    lambda_N = grad V_f(xi_N)
    g_k      = grad_u l(xi_k, mu_k) + B_k^T lambda_{k+1}
    lambda_k = grad_x l(xi_k, mu_k) + A_k^T lambda_{k+1}

For linear systems (DiscreteSystem.a_matrix set) the rollout is one product
with the stacked maps of DiscreteSystem.lifted, and when the cost provides
trajectory_terms the costate sweep collapses to gamma^T q.

finite_difference_gradient is the central-difference oracle used by tests
and diagnostics.
"""

import logging
from typing import Tuple

import numpy as np

from src.errors import DivergenceError, DomainError, ShapeError
from src.models.ocp import OcpProblem, SequenceLike, as_values

logger = logging.getLogger(__name__)

# stacked maps grow as N^2; longer horizons step through the dynamics instead
LIFTED_MAX_HORIZON = 200


def _check_inputs(problem: OcpProblem, x, mu: SequenceLike) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(-1)
    values = as_values(mu)
    n_x = problem.system.state_dim
    n_u = problem.system.input_dim
    if x.shape[0] != n_x:
        raise ShapeError(f"State has dimension {x.shape[0]}, expected {n_x}")
    if values.shape != (problem.horizon, n_u):
        raise ShapeError(
            f"Input sequence has shape {values.shape}, expected ({problem.horizon}, {n_u})"
        )
    if not np.all(np.isfinite(x)):
        raise DivergenceError("Initial state is not finite", step_index=0)
    return x, values


def rollout(problem: OcpProblem, x, mu: SequenceLike) -> np.ndarray:
    """
    Simulate the prediction model over the horizon.

    Returns:
        (N+1) x n_x array [xi_0, ..., xi_N] with xi_0 = x.
    """
    x, values = _check_inputs(problem, x, mu)
    if _uses_lifted(problem):
        phi, gamma = problem.system.lifted(problem.horizon)
        trajectory = (phi @ x + gamma @ values.reshape(-1)).reshape(problem.horizon + 1, -1)
        finite = np.all(np.isfinite(trajectory), axis=1)
        if not finite.all():
            k = int(np.argmin(finite))
            raise DivergenceError(f"Non-finite state at step {k}", step_index=k)
        return trajectory

    step = problem.system.step
    trajectory = np.empty((problem.horizon + 1, problem.system.state_dim))
    trajectory[0] = x
    for k in range(problem.horizon):
        nxt = np.asarray(step(trajectory[k], values[k]), dtype=float)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"Non-finite state at step {k + 1}", step_index=k + 1)
        trajectory[k + 1] = nxt
    return trajectory


def _uses_lifted(problem: OcpProblem) -> bool:
    return problem.system.is_linear and problem.horizon <= LIFTED_MAX_HORIZON


def _cost_on_trajectory(problem: OcpProblem, trajectory: np.ndarray, values: np.ndarray) -> float:
    cost = problem.cost
    if cost.trajectory_terms is not None:
        total = float(cost.trajectory_terms(trajectory, values)[0])
    else:
        total = 0.0
        for k in range(problem.horizon):
            total += float(cost.evaluate(trajectory[k], values[k]))
        total += float(cost.terminal_evaluate(trajectory[-1]))
    if not np.isfinite(total):
        raise DivergenceError("Non-finite running cost")
    return total


def running_cost(problem: OcpProblem, x, mu: SequenceLike) -> float:
    """h(x, mu) = sum_k l(xi_k, mu_k) + V_f(xi_N)."""
    _, values = _check_inputs(problem, x, mu)
    trajectory = rollout(problem, x, values)
    return _cost_on_trajectory(problem, trajectory, values)


def cost_and_gradient(problem: OcpProblem, x, mu: SequenceLike) -> Tuple[float, np.ndarray]:
    """Running cost and its exact gradient from a single rollout."""
    _, values = _check_inputs(problem, x, mu)
    trajectory = rollout(problem, x, values)
    system = problem.system
    cost = problem.cost

    if _uses_lifted(problem) and cost.trajectory_terms is not None:
        total, state_grads, input_grads = cost.trajectory_terms(trajectory, values)
        total = float(total)
        if not np.isfinite(total):
            raise DivergenceError("Non-finite running cost")
        _, gamma = system.lifted(problem.horizon)
        grad = input_grads + (gamma.T @ state_grads.reshape(-1)).reshape(values.shape)
    else:
        total = _cost_on_trajectory(problem, trajectory, values)
        grad = np.empty_like(values)
        costate = np.asarray(cost.terminal_grad(trajectory[-1]), dtype=float)
        for k in range(problem.horizon - 1, -1, -1):
            xk, uk = trajectory[k], values[k]
            a_k = system.jacobian_x(xk, uk)
            b_k = system.jacobian_u(xk, uk)
            grad[k] = cost.grad_u(xk, uk) + b_k.T @ costate
            costate = cost.grad_x(xk, uk) + a_k.T @ costate

    if not np.all(np.isfinite(grad)):
        bad = int(np.argmax(~np.all(np.isfinite(grad), axis=1)))
        raise DivergenceError(f"Non-finite gradient at step {bad}", step_index=bad)
    return total, grad


def gradient(problem: OcpProblem, x, mu: SequenceLike) -> np.ndarray:
    """Exact N x n_u gradient of running_cost with respect to every mu_k."""
    return cost_and_gradient(problem, x, mu)[1]


def finite_difference_gradient(problem: OcpProblem, x, mu: SequenceLike,
                               step_size: float = 1e-5) -> np.ndarray:
    """Central-difference approximation of the gradient (verification only)."""
    if step_size <= 0:
        raise DomainError(f"step_size must be positive, got {step_size}")
    x, values = _check_inputs(problem, x, mu)

    grad = np.zeros_like(values)
    for k in range(values.shape[0]):
        for j in range(values.shape[1]):
            plus = values.copy()
            minus = values.copy()
            plus[k, j] += step_size
            minus[k, j] -= step_size
            try:
                h_plus = running_cost(problem, x, plus)
                h_minus = running_cost(problem, x, minus)
            except DivergenceError as e:
                raise DivergenceError(
                    f"Non-finite cost while perturbing mu[{k}, {j}]: {e}", step_index=k
                ) from e
            grad[k, j] = (h_plus - h_minus) / (2.0 * step_size)
    return grad
