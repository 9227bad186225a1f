"""
Constants - Contraction factor and sampled problem constants

- epsilon_from_constants: per-iteration contraction factor of projected
  gradient on an m-strongly convex, L2-smooth running cost
- estimate_constants: sampling-based L2, m and sigma estimates over a region
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.shooting import gradient
from src.errors import ConfigurationError, DomainError, NonConvexRegionError
from src.models.ocp import OcpProblem
from src.solver.reference import reference_solve, value_function

logger = logging.getLogger(__name__)


def epsilon_from_constants(gamma: float, m: float, l2: float) -> float:
    """
    eps = sqrt(1 - (2 m^2 / L2) gamma + m^2 gamma^2), valid for gamma in (0, 2/L2).
    """
    if not (0 < m <= l2):
        raise DomainError(f"Need 0 < m <= L2, got m={m}, L2={l2}")
    if not (0 < gamma < 2.0 / l2):
        raise DomainError(f"gamma={gamma} outside (0, 2/L2) = (0, {2.0 / l2:g})")
    eps_sq = 1.0 - (2.0 * m * m / l2) * gamma + m * m * gamma * gamma
    return float(np.sqrt(max(eps_sq, 0.0)))


@dataclass(frozen=True)
class SampleRegion:
    """Box of states (and optionally inputs) to draw samples from."""
    state_lower: np.ndarray
    state_upper: np.ndarray
    input_lower: Optional[np.ndarray] = None   # defaults to the problem boxes
    input_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.asarray(self.state_lower, dtype=float)
        hi = np.asarray(self.state_upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ConfigurationError("Sample region state bounds must match in shape with lower <= upper")
        object.__setattr__(self, "state_lower", lo)
        object.__setattr__(self, "state_upper", hi)


@dataclass
class ConstantEstimates:
    """
    Sampled constants. l2 and sigma are lower bounds on the true Lipschitz
    constants; m is an upper bound on the true strong-convexity modulus.
    """
    l2: float
    m: float
    sigma: float
    samples: int

    @property
    def is_convex(self) -> bool:
        return self.m > 0


def _input_bounds(problem: OcpProblem, region: SampleRegion):
    lower = problem.lower_bounds
    upper = problem.upper_bounds
    if region.input_lower is not None:
        lower = np.maximum(lower, np.broadcast_to(region.input_lower, lower.shape))
    if region.input_upper is not None:
        upper = np.minimum(upper, np.broadcast_to(region.input_upper, upper.shape))
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ConfigurationError("Input sampling bounds must be finite; set input_lower/input_upper")
    return lower, upper


def estimate_constants(problem: OcpProblem, sample_region: SampleRegion, sample_count: int,
                       seed: int = 0, estimate_sigma: bool = True) -> ConstantEstimates:
    """
    Estimate L2, m and sigma from random samples.

    L2    = max ||grad h(x, mu1) - grad h(x, mu2)|| / ||mu1 - mu2||
    m     = min <grad h(x, mu1) - grad h(x, mu2), mu1 - mu2> / ||mu1 - mu2||^2
    sigma = max |V(f(x, u)) - V(f(x, u*))| / ||u - u*||, V from reference solves

    Raises:
        NonConvexRegionError: m <= 0 over the sampled region (the stopping
            criterion is unusable there); the estimates ride on the exception.
    """
    if sample_count < 2:
        raise DomainError(f"sample_count must be >= 2, got {sample_count}")
    rng = np.random.default_rng(seed)
    lower, upper = _input_bounds(problem, sample_region)
    step = problem.system.step

    l2_hat = 0.0
    m_hat = np.inf
    sigma_hat = 0.0
    for _ in range(sample_count):
        x = rng.uniform(sample_region.state_lower, sample_region.state_upper)
        mu1 = rng.uniform(lower, upper)
        mu2 = rng.uniform(lower, upper)
        delta = (mu1 - mu2).ravel()
        norm_sq = float(delta @ delta)
        if norm_sq == 0.0:
            continue
        grad_delta = (gradient(problem, x, mu1) - gradient(problem, x, mu2)).ravel()
        l2_hat = max(l2_hat, float(np.linalg.norm(grad_delta)) / np.sqrt(norm_sq))
        m_hat = min(m_hat, float(grad_delta @ delta) / norm_sq)

        if estimate_sigma:
            u_star = reference_solve(problem, x).optimal_input
            u = rng.uniform(lower[0], upper[0])
            distance = float(np.linalg.norm(u - u_star))
            if distance > 0:
                v_u = value_function(problem, step(x, u))
                v_star = value_function(problem, step(x, u_star))
                sigma_hat = max(sigma_hat, abs(v_u - v_star) / distance)

    estimates = ConstantEstimates(l2=l2_hat, m=float(m_hat), sigma=sigma_hat, samples=sample_count)
    logger.info("Sampled constants: L2=%.4g m=%.4g sigma=%.4g (%d samples)",
                estimates.l2, estimates.m, estimates.sigma, sample_count)
    if not estimates.is_convex:
        logger.warning("Sampled region is not strongly convex (m_hat=%.4g)", estimates.m)
        raise NonConvexRegionError(
            f"m_hat={estimates.m:.4g} <= 0: running cost is not strongly convex over the "
            "sampled region; use a smaller region or fixed iterations",
            estimates,
        )
    return estimates
