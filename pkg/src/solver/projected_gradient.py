"""
Projected Gradient - Real-time NMPC iteration

One call to solve_step per sampling instant:
1. Warm start: shift the previous sequence, append the terminal policy input
2. Iterate mu <- Proj(mu - gamma * grad h(x, mu))
   - FixedIterations: exactly `count` updates
   - StoppingCriterion: until ||mu - Proj(mu - gamma grad h)|| < sqrt(1-eps^2)/sigma * l(x, mu_0)
3. Return mu; the caller applies mu_0
"""

import logging
import numbers
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.shooting import cost_and_gradient, rollout
from src.errors import ConfigurationError, DomainError, ShapeError, StepSizeError
from src.models.ocp import InputBox, InputSequence, OcpProblem, SequenceLike, StageCost, as_values

logger = logging.getLogger(__name__)

# Divergence guard: this many consecutive cost increases, growing by more than GROWTH overall
DIVERGENCE_WINDOW = 10
DIVERGENCE_GROWTH = 10.0


# ============================================================================
# Terminal policies (the local controller kappa used by the warm start)
# ============================================================================

TerminalPolicy = Callable[[np.ndarray, np.ndarray], np.ndarray]


def hold_last_input(terminal_state: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """kappa(xi_N) = mu_{N-1} of the previous sequence."""
    return previous[-1].copy()


def zero_input(terminal_state: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """kappa(xi_N) = 0."""
    return np.zeros(previous.shape[1])


TERMINAL_POLICIES: Dict[str, TerminalPolicy] = {
    "hold_last": hold_last_input,
    "zero": zero_input,
}


def policy_name(policy: TerminalPolicy) -> str:
    for name, candidate in TERMINAL_POLICIES.items():
        if candidate is policy:
            return name
    raise ConfigurationError(f"Terminal policy {policy!r} has no registered name")


def resolve_policy(name: str) -> TerminalPolicy:
    try:
        return TERMINAL_POLICIES[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown terminal policy '{name}' (choose from {', '.join(TERMINAL_POLICIES)})"
        ) from None


# ============================================================================
# Configuration and result
# ============================================================================

@dataclass(frozen=True)
class FixedIterations:
    """Apply exactly `count` projected gradient updates per sampling instant."""
    count: int = 50

    def __post_init__(self):
        if self.count < 1:
            raise ConfigurationError(f"Iteration count must be >= 1, got {self.count}")

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "fixed_iterations", "count": self.count}


@dataclass(frozen=True)
class StoppingCriterion:
    """Iterate until the stability stopping criterion holds (capped)."""
    epsilon: float
    sigma: float
    max_iterations: int = 1000

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if self.max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be >= 1, got {self.max_iterations}")

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "stopping_criterion", "epsilon": self.epsilon,
                "sigma": self.sigma, "max_iterations": self.max_iterations}


SolverMode = Union[FixedIterations, StoppingCriterion]


def _iteration_count(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not float(value).is_integer():
        raise ConfigurationError(f"controller.mode.{name} must be an integer, got {value!r}")
    return int(value)


def mode_from_dict(data: Dict[str, Any]) -> SolverMode:
    data = dict(data)
    kind = data.pop("type", "fixed_iterations")
    try:
        if kind == "fixed_iterations":
            return FixedIterations(count=_iteration_count(data.pop("count", 50), "count"), **data)
        if kind == "stopping_criterion":
            return StoppingCriterion(
                epsilon=float(data.pop("epsilon")),
                sigma=float(data.pop("sigma")),
                max_iterations=_iteration_count(data.pop("max_iterations", 1000), "max_iterations"),
                **data,
            )
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"Invalid controller.mode for '{kind}': {e}") from e
    raise ConfigurationError(f"Unknown controller.mode.type '{kind}'")


@dataclass(frozen=True)
class SolverConfig:
    """Step size, iteration mode and terminal policy."""
    gamma: float = 1e-3
    mode: SolverMode = FixedIterations(50)
    terminal_policy: TerminalPolicy = hold_last_input

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be > 0, got {self.gamma}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "mode": self.mode.to_dict(),
            "terminal_policy": policy_name(self.terminal_policy),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SolverConfig":
        unknown = sorted(set(data) - {"gamma", "mode", "terminal_policy"})
        if unknown:
            raise ConfigurationError(f"Unknown key(s) in controller: {', '.join(unknown)}")
        default = cls()
        return cls(
            gamma=float(data.get("gamma", default.gamma)),
            mode=mode_from_dict(data["mode"]) if "mode" in data else default.mode,
            terminal_policy=resolve_policy(data.get("terminal_policy", "hold_last")),
        )


@dataclass
class SolveResult:
    """Outcome of one real-time solve."""
    applied_input: np.ndarray          # u_t = mu_0
    sequence: InputSequence
    iterations_used: int
    final_residual: float              # ||mu - Proj(mu - gamma grad h)||
    final_cost: float                  # h(x, mu)
    stop_threshold: Optional[float] = None   # StoppingCriterion mode only
    criterion_met: Optional[bool] = None     # StoppingCriterion mode only
    cost_history: List[float] = field(default_factory=list)


# ============================================================================
# Operations
# ============================================================================

def _bounds(boxes: Sequence[InputBox]) -> Tuple[np.ndarray, np.ndarray]:
    if not boxes:
        raise ConfigurationError("At least one input box is required")
    lower = np.vstack([box.lower for box in boxes])
    upper = np.vstack([box.upper for box in boxes])
    if np.any(lower > upper):
        raise ConfigurationError("Input box with lower > upper")
    return lower, upper


def project(mu: SequenceLike, boxes: Sequence[InputBox]) -> InputSequence:
    """Euclidean projection onto the product of boxes (component-wise clamp)."""
    values = as_values(mu)
    lower, upper = _bounds(boxes)
    if lower.shape != values.shape:
        raise ShapeError(f"Sequence shape {values.shape} does not match boxes {lower.shape}")
    return InputSequence(np.minimum(np.maximum(values, lower), upper))


def warm_start(previous: SequenceLike, terminal_state, terminal_policy: TerminalPolicy,
               boxes: Optional[Sequence[InputBox]] = None) -> InputSequence:
    """
    Shift the previous sequence one step and append kappa(xi_N).

    The result is projected into `boxes` when given (the bounds may have
    changed since the previous sampling instant).
    """
    values = as_values(previous)
    terminal_state = np.asarray(terminal_state, dtype=float)
    tail = np.asarray(terminal_policy(terminal_state, values), dtype=float).reshape(-1)
    if tail.shape[0] != values.shape[1]:
        raise ShapeError(f"Terminal policy returned {tail.shape[0]} inputs, expected {values.shape[1]}")
    shifted = np.vstack([values[1:], tail[np.newaxis, :]])
    if boxes is None:
        return InputSequence(shifted)
    return project(shifted, boxes)


def _project_onto(problem: OcpProblem, values: np.ndarray) -> np.ndarray:
    """project() with the bound matrices the problem already holds."""
    return np.minimum(np.maximum(values, problem.lower_bounds), problem.upper_bounds)


def _residual(values: np.ndarray, candidate: np.ndarray) -> float:
    return float(np.linalg.norm(values - candidate))


def iterate_once(problem: OcpProblem, x, mu: SequenceLike, gamma: float) -> Tuple[InputSequence, float]:
    """
    One projected gradient update.

    Returns:
        (updated sequence, residual ||mu - Proj(mu - gamma grad h)|| at the input mu)
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    values = as_values(mu)
    _, grad = cost_and_gradient(problem, x, values)
    candidate = _project_onto(problem, values - gamma * grad)
    return InputSequence(candidate), _residual(values, candidate)


def stop_threshold(x, mu: SequenceLike, epsilon: float, sigma: float, cost: StageCost) -> float:
    """sqrt(1 - eps^2) / sigma * l(x, mu_0)."""
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    values = as_values(mu)
    stage = float(cost.evaluate(np.asarray(x, dtype=float), values[0]))
    return np.sqrt(1.0 - epsilon ** 2) / sigma * stage


def _check_divergence(costs: List[float], gamma: float):
    if len(costs) <= DIVERGENCE_WINDOW:
        return
    window = costs[-(DIVERGENCE_WINDOW + 1):]
    rising = all(b > a for a, b in zip(window, window[1:]))
    if rising and window[-1] > DIVERGENCE_GROWTH * max(window[0], np.finfo(float).tiny):
        raise StepSizeError(
            f"Cost increased over {DIVERGENCE_WINDOW} consecutive iterations "
            f"from {window[0]:.6g} to {window[-1]:.6g}",
            gamma=gamma,
        )


def solve_step(problem: OcpProblem, x, previous: SequenceLike, config: SolverConfig,
               previous_state=None) -> SolveResult:
    """
    Real-time projected gradient NMPC for one sampling instant.

    Args:
        problem: OCP with the boxes valid at this instant
        x: measured (or estimated) state
        previous: sequence returned at the previous instant
        config: step size, mode, terminal policy
        previous_state: state the previous sequence was computed from; its
            rollout end point feeds the terminal policy. Defaults to x.

    Returns:
        SolveResult; in StoppingCriterion mode `criterion_met` is False when
        max_iterations ran out (the stability certificate is lost for this step).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    previous_values = as_values(previous)
    origin = x if previous_state is None else np.asarray(previous_state, dtype=float)
    terminal_state = rollout(problem, origin, previous_values)[-1]
    mu = warm_start(previous_values, terminal_state, config.terminal_policy, problem.constraints).values

    mode = config.mode
    stopping = isinstance(mode, StoppingCriterion)
    limit = mode.max_iterations if stopping else mode.count
    gamma = config.gamma

    costs: List[float] = []
    iterations = 0
    criterion_met = None
    threshold = None
    warned = False

    while True:
        cost, grad = cost_and_gradient(problem, x, mu)
        candidate = _project_onto(problem, mu - gamma * grad)
        residual = _residual(mu, candidate)

        if costs and cost > costs[-1] and not warned:
            logger.warning(
                "Cost increased at iteration %d (%.6g -> %.6g); gamma=%g may be too large",
                iterations, costs[-1], cost, gamma,
            )
            warned = True
        costs.append(cost)
        _check_divergence(costs, gamma)
        logger.debug("iteration %d: cost=%.6g residual=%.3e", iterations, cost, residual)

        if stopping:
            threshold = stop_threshold(x, mu, mode.epsilon, mode.sigma, problem.cost)
            if residual < threshold:
                criterion_met = True
                break
        if iterations >= limit:
            if stopping:
                criterion_met = False
                logger.warning(
                    "Stopping criterion not met after %d iterations (residual %.3e >= %.3e)",
                    iterations, residual, threshold,
                )
            break

        mu = candidate
        iterations += 1

    return SolveResult(
        applied_input=mu[0].copy(),
        sequence=InputSequence(mu),
        iterations_used=iterations,
        final_residual=residual,
        final_cost=cost,
        stop_threshold=threshold,
        criterion_met=criterion_met,
        cost_history=costs,
    )


class RealTimeController:
    """
    Stateful wrapper around solve_step for closed-loop use.

    Keeps the previous sequence and the state it was computed from.
    """

    def __init__(self, config: SolverConfig, initial_sequence: SequenceLike):
        self.config = config
        self.sequence = InputSequence(as_values(initial_sequence).copy())
        self.previous_state: Optional[np.ndarray] = None

    def step(self, problem: OcpProblem, x) -> SolveResult:
        result = solve_step(problem, x, self.sequence, self.config, self.previous_state)
        self.sequence = result.sequence
        self.previous_state = np.asarray(x, dtype=float).copy()
        return result
