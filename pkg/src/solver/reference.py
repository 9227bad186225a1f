"""
Reference - High-accuracy solve of the finite-horizon problem

Used wherever the optimal sequence mu*(x), the optimal input u*(x) or the
value function V(x) is needed: constant estimation, suboptimality checks,
Lyapunov decrease checks.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from src.core.shooting import cost_and_gradient
from src.models.ocp import InputSequence, OcpProblem, SequenceLike, as_values

logger = logging.getLogger(__name__)


@dataclass
class ReferenceSolution:
    sequence: InputSequence
    cost: float          # V(x)
    converged: bool
    iterations: int

    @property
    def optimal_input(self) -> np.ndarray:
        """u*(x) = mu*_0."""
        return self.sequence.first


def reference_solve(problem: OcpProblem, x, initial: Optional[SequenceLike] = None,
                    tol: float = 1e-12, max_iterations: int = 20_000) -> ReferenceSolution:
    """
    Minimize h(x, mu) over the input boxes with L-BFGS-B and exact gradients.

    Args:
        problem: OCP to solve
        x: initial state
        initial: starting sequence (default: midpoint of the boxes, clipped to finite values)
        tol: gradient tolerance
        max_iterations: L-BFGS-B iteration cap
    """
    shape = (problem.horizon, problem.system.input_dim)
    lower = problem.lower_bounds
    upper = problem.upper_bounds
    if initial is None:
        start = np.clip(np.zeros(shape), lower, upper)
    else:
        start = np.clip(as_values(initial), lower, upper)

    def objective(flat):
        cost, grad = cost_and_gradient(problem, x, flat.reshape(shape))
        return cost, grad.ravel()

    bounds = list(zip(lower.ravel(), upper.ravel()))
    result = minimize(
        objective,
        start.ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iterations, "ftol": 1e-16, "gtol": tol, "maxcor": 50},
    )
    if not result.success:
        logger.debug("Reference solve stopped early: %s", result.message)

    values = np.clip(result.x.reshape(shape), lower, upper)
    return ReferenceSolution(
        sequence=InputSequence(values),
        cost=float(result.fun),
        converged=bool(result.success),
        iterations=int(result.nit),
    )


def value_function(problem: OcpProblem, x, initial: Optional[SequenceLike] = None) -> float:
    """V(x) = min_mu h(x, mu)."""
    return reference_solve(problem, x, initial).cost
