"""
Benchmarks - Linear-quadratic test bench with closed-form references

For x+ = A x + B u, l(x, u) = 0.5 x'Qx + 0.5 u'Ru, V_f(x) = 0.5 x'Px the
running cost is an exact quadratic in the stacked sequence mu:

    h(x, mu) = 0.5 mu'H mu + (F x)'mu + 0.5 x'G x

so the curvature constants (m, L2), the optimizer and the value function are
all available in closed form. P defaults to the discrete algebraic Riccati
solution, which makes V_f a control Lyapunov function.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_discrete_are

from src.errors import ConfigurationError
from src.models.ocp import DiscreteSystem, InputBox, InputSequence, OcpProblem, StageCost, as_values


@dataclass(frozen=True, eq=False)
class LinearQuadraticBench:
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    horizon: int
    input_limit: float = 1e3                      # symmetric box |u_i| <= input_limit
    p: Optional[np.ndarray] = None                # terminal weight, DARE if omitted
    _condensed: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ConfigurationError(f"Incompatible A {a.shape} and B {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "q", np.atleast_2d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "r", np.atleast_2d(np.asarray(self.r, dtype=float)))
        if self.p is None:
            p = solve_discrete_are(a, b, self.q, self.r)
        else:
            p = np.atleast_2d(np.asarray(self.p, dtype=float))
        object.__setattr__(self, "p", 0.5 * (p + p.T))

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    # ------------------------------------------------------------------
    # OcpProblem view
    # ------------------------------------------------------------------

    def system(self) -> DiscreteSystem:
        a, b = self.a, self.b
        return DiscreteSystem(
            state_dim=self.n_x,
            input_dim=self.n_u,
            step=lambda x, u: a @ x + b @ u,
            jacobian_x=lambda x, u: a,
            jacobian_u=lambda x, u: b,
        )

    def cost(self) -> StageCost:
        q, r, p = self.q, self.r, self.p
        return StageCost(
            evaluate=lambda x, u: 0.5 * float(x @ q @ x) + 0.5 * float(u @ r @ u),
            grad_x=lambda x, u: q @ x,
            grad_u=lambda x, u: r @ u,
            terminal_evaluate=lambda x: 0.5 * float(x @ p @ x),
            terminal_grad=lambda x: p @ x,
        )

    def boxes(self):
        return [InputBox.uniform(self.n_u, -self.input_limit, self.input_limit)
                for _ in range(self.horizon)]

    def problem(self) -> OcpProblem:
        return OcpProblem(system=self.system(), cost=self.cost(),
                          horizon=self.horizon, constraints=self.boxes())

    # ------------------------------------------------------------------
    # Closed-form quantities
    # ------------------------------------------------------------------

    def condensed(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(H, F, G) of h(x, mu) = 0.5 mu'H mu + (F x)'mu + 0.5 x'G x, mu stacked row-major."""
        if not self._condensed:
            n, m, horizon = self.n_x, self.n_u, self.horizon
            powers = [np.eye(n)]
            for _ in range(horizon):
                powers.append(self.a @ powers[-1])
            phi = np.vstack(powers)

            gamma = np.zeros(((horizon + 1) * n, horizon * m))
            for i in range(1, horizon + 1):
                for j in range(i):
                    gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - 1 - j] @ self.b

            q_bar = np.zeros(((horizon + 1) * n, (horizon + 1) * n))
            for k in range(horizon):
                q_bar[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.q
            q_bar[horizon * n:, horizon * n:] = self.p
            r_bar = np.kron(np.eye(horizon), self.r)

            hessian = gamma.T @ q_bar @ gamma + r_bar
            self._condensed["H"] = 0.5 * (hessian + hessian.T)
            self._condensed["F"] = gamma.T @ q_bar @ phi
            self._condensed["G"] = phi.T @ q_bar @ phi
        return self._condensed["H"], self._condensed["F"], self._condensed["G"]

    def hessian_bounds(self) -> Tuple[float, float]:
        """(m, L2) = extreme eigenvalues of H."""
        eigenvalues = np.linalg.eigvalsh(self.condensed()[0])
        return float(eigenvalues[0]), float(eigenvalues[-1])

    def value_matrix(self) -> np.ndarray:
        """W with V(x) = 0.5 x'Wx when the boxes are inactive."""
        hessian, f, g = self.condensed()
        w = g - f.T @ np.linalg.solve(hessian, f)
        return 0.5 * (w + w.T)

    def optimal_sequence(self, x) -> InputSequence:
        """Unconstrained optimizer -H^{-1} F x."""
        hessian, f, _ = self.condensed()
        flat = -np.linalg.solve(hessian, f @ np.asarray(x, dtype=float))
        return InputSequence(flat.reshape(self.horizon, self.n_u))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.value_matrix() @ x)

    def constrained_optimum(self, x, lower: float, upper: float,
                            tol: float = 1e-14, max_iterations: int = 200_000) -> InputSequence:
        """Box-constrained optimizer by projected gradient run to machine precision."""
        hessian, f, _ = self.condensed()
        linear = f @ np.asarray(x, dtype=float)
        step = 1.0 / np.linalg.eigvalsh(hessian)[-1]
        mu = np.clip(np.zeros(hessian.shape[0]), lower, upper)
        for _ in range(max_iterations):
            nxt = np.clip(mu - step * (hessian @ mu + linear), lower, upper)
            if np.linalg.norm(nxt - mu) <= tol * max(1.0, np.linalg.norm(mu)):
                mu = nxt
                break
            mu = nxt
        return InputSequence(mu.reshape(self.horizon, self.n_u))

    def running_cost(self, x, mu) -> float:
        """Closed-form h(x, mu), independent of the shooting code."""
        hessian, f, g = self.condensed()
        x = np.asarray(x, dtype=float)
        flat = as_values(mu).ravel()
        return 0.5 * float(flat @ hessian @ flat) + float((f @ x) @ flat) + 0.5 * float(x @ g @ x)

    def lqr_gain(self) -> np.ndarray:
        """K with u = -K x, from the terminal weight."""
        return np.linalg.solve(self.r + self.b.T @ self.p @ self.b, self.b.T @ self.p @ self.a)

    def sublevel_radius(self, x0) -> float:
        """Radius of a ball containing {x : V(x) <= V(x0)}."""
        w = self.value_matrix()
        return float(np.sqrt(2.0 * self.value(x0) / np.linalg.eigvalsh(w)[0]))

    def lipschitz_sigma(self, state_radius: float, input_radius: float) -> float:
        """
        sigma = L_u + L_1 on {||x|| <= state_radius} x {||u|| <= input_radius}.

        L_u bounds |V(f(x,u)) - V(f(x,u'))| / ||u - u'|| with V = 0.5 x'Wx,
        L_1 bounds |l(x,u) - l(x,u')| / ||u - u'||.
        """
        w = self.value_matrix()
        a_norm = np.linalg.norm(self.a, 2)
        b_norm = np.linalg.norm(self.b, 2)
        l_u = np.linalg.norm(self.b.T @ w, 2) * (a_norm * state_radius + b_norm * input_radius)
        l_1 = np.linalg.norm(self.r, 2) * input_radius
        return float(l_u + l_1)


def random_lq_bench(seed: int, n_x: int = 3, n_u: int = 1, horizon: int = 5,
                    spectral_radius: float = 0.95, input_weight: float = 1.0,
                    input_limit: float = 1e3) -> LinearQuadraticBench:
    """Random stable LQ bench with Q = I, R = input_weight * I."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_x, n_x))
    a *= spectral_radius / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-12)
    b = rng.normal(size=(n_x, n_u))
    return LinearQuadraticBench(
        a=a,
        b=b,
        q=np.eye(n_x),
        r=input_weight * np.eye(n_u),
        horizon=horizon,
        input_limit=input_limit,
    )
