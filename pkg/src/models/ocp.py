"""
Optimal Control Problem Model

Represents the finite-horizon problem solved at every sampling instant:

    minimize  sum_{k<N} l(xi_k, mu_k) + V_f(xi_N)
    s.t.      xi_{k+1} = f(xi_k, mu_k),  xi_0 = x,  mu_k in box k
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigurationError, ShapeError


Vector = np.ndarray
Matrix = np.ndarray


@dataclass(frozen=True)
class DiscreteSystem:
    """
    Discrete-time dynamics x+ = f(x, u) with its Jacobians.

    Linear systems may also pass `a_matrix` / `b_matrix`; the shooting code
    then rolls out the whole horizon with the stacked maps from `lifted`.
    """
    state_dim: int
    input_dim: int
    step: Callable[[Vector, Vector], Vector]
    jacobian_x: Callable[[Vector, Vector], Matrix]   # df/dx, n_x x n_x
    jacobian_u: Callable[[Vector, Vector], Matrix]   # df/du, n_x x n_u
    a_matrix: Optional[Matrix] = field(default=None, compare=False)
    b_matrix: Optional[Matrix] = field(default=None, compare=False)
    _lifted: Dict[int, Tuple[Matrix, Matrix]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ConfigurationError(
                f"Dimensions must be positive, got n_x={self.state_dim}, n_u={self.input_dim}"
            )
        if (self.a_matrix is None) != (self.b_matrix is None):
            raise ConfigurationError("a_matrix and b_matrix must be given together")
        if self.a_matrix is not None:
            a = np.asarray(self.a_matrix, dtype=float)
            b = np.asarray(self.b_matrix, dtype=float)
            if a.shape != (self.state_dim, self.state_dim) or b.shape != (self.state_dim, self.input_dim):
                raise ConfigurationError(
                    f"Linear maps have shapes {a.shape} and {b.shape}, expected "
                    f"({self.state_dim}, {self.state_dim}) and ({self.state_dim}, {self.input_dim})"
                )
            object.__setattr__(self, "a_matrix", a)
            object.__setattr__(self, "b_matrix", b)

    @property
    def is_linear(self) -> bool:
        return self.a_matrix is not None

    def lifted(self, horizon: int) -> Tuple[Matrix, Matrix]:
        """
        Stacked maps of a linear system over `horizon` steps.

        Returns:
            (phi, gamma) with [xi_0; ...; xi_N] = phi @ x + gamma @ vec(mu),
            phi of shape ((N+1) n_x, n_x) and gamma of shape ((N+1) n_x, N n_u).
        """
        if not self.is_linear:
            raise ConfigurationError("lifted() needs a_matrix and b_matrix")
        cached = self._lifted.get(horizon)
        if cached is not None:
            return cached

        n_x, n_u = self.state_dim, self.input_dim
        powers = [np.eye(n_x)]
        for _ in range(horizon):
            powers.append(self.a_matrix @ powers[-1])
        blocks = [power @ self.b_matrix for power in powers[:horizon]]

        gamma = np.zeros(((horizon + 1) * n_x, horizon * n_u))
        for k in range(1, horizon + 1):
            for j in range(k):
                gamma[k * n_x:(k + 1) * n_x, j * n_u:(j + 1) * n_u] = blocks[k - 1 - j]
        cached = (np.vstack(powers), gamma)
        self._lifted[horizon] = cached
        return cached


@dataclass(frozen=True)
class StageCost:
    """
    Stage cost l(x, u) and terminal cost V_f(x) with their gradients.

    `trajectory_terms`, when given, evaluates a whole rollout at once:
    (trajectory (N+1) x n_x, inputs N x n_u) -> (h, dh/dxi rows 0..N, dl/du rows).
    Row N of dh/dxi is the terminal gradient.
    """
    evaluate: Callable[[Vector, Vector], float]
    grad_x: Callable[[Vector, Vector], Vector]
    grad_u: Callable[[Vector, Vector], Vector]
    terminal_evaluate: Callable[[Vector], float]
    terminal_grad: Callable[[Vector], Vector]
    trajectory_terms: Optional[Callable[[Matrix, Matrix], Tuple[float, Matrix, Matrix]]] = None


@dataclass(frozen=True)
class InputBox:
    """Component-wise bounds lower <= u <= upper for one horizon step."""
    lower: Vector
    upper: Vector

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ConfigurationError(
                f"Box bounds must be 1-d and of equal length, got {lower.shape} and {upper.shape}"
            )
        if np.any(lower > upper):
            bad = int(np.argmax(lower > upper))
            raise ConfigurationError(
                f"Empty box: lower[{bad}]={lower[bad]:g} > upper[{bad}]={upper[bad]:g}"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, u: Vector) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower) and np.all(u <= self.upper))

    @classmethod
    def uniform(cls, dim: int, lower: float, upper: float) -> "InputBox":
        return cls(np.full(dim, lower, dtype=float), np.full(dim, upper, dtype=float))


@dataclass(frozen=True)
class OcpProblem:
    """Finite-horizon problem: dynamics, costs, horizon and one box per step."""
    system: DiscreteSystem
    cost: StageCost
    horizon: int
    constraints: List[InputBox] = field(default_factory=list)

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError(f"Horizon must be >= 1, got {self.horizon}")
        if len(self.constraints) != self.horizon:
            raise ConfigurationError(
                f"Expected {self.horizon} input boxes, got {len(self.constraints)}"
            )
        for k, box in enumerate(self.constraints):
            if box.dim != self.system.input_dim:
                raise ConfigurationError(
                    f"Box {k} has dimension {box.dim}, system has {self.system.input_dim} inputs"
                )
        object.__setattr__(self, "constraints", list(self.constraints))
        object.__setattr__(self, "_lower", np.vstack([box.lower for box in self.constraints]))
        object.__setattr__(self, "_upper", np.vstack([box.upper for box in self.constraints]))

    @property
    def lower_bounds(self) -> Matrix:
        """N x n_u matrix of lower bounds."""
        return self._lower

    @property
    def upper_bounds(self) -> Matrix:
        """N x n_u matrix of upper bounds."""
        return self._upper

    def with_constraints(self, constraints: Sequence[InputBox]) -> "OcpProblem":
        """Same problem with a new set of boxes (e.g. the next sampling instant)."""
        return replace(self, constraints=list(constraints))

    def with_cost(self, cost: StageCost) -> "OcpProblem":
        return replace(self, cost=cost)


@dataclass(frozen=True)
class InputSequence:
    """Decision variable mu = [mu_0, ..., mu_{N-1}], one row per horizon step."""
    values: Matrix

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ShapeError(f"Input sequence must be N x n_u, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def first(self) -> Vector:
        """mu_0, the input applied to the plant."""
        return self.values[0].copy()

    def copy(self) -> "InputSequence":
        return InputSequence(self.values.copy())

    def is_feasible(self, constraints: Sequence[InputBox]) -> bool:
        return all(box.contains(u) for box, u in zip(constraints, self.values))

    @classmethod
    def constant(cls, horizon: int, u: Sequence[float]) -> "InputSequence":
        return cls(np.tile(np.asarray(u, dtype=float), (horizon, 1)))


SequenceLike = Union[InputSequence, np.ndarray, Sequence[Sequence[float]]]


def as_values(mu: SequenceLike) -> Matrix:
    """Return the N x n_u array behind an InputSequence or array-like."""
    if isinstance(mu, InputSequence):
        return mu.values
    return InputSequence(mu).values
