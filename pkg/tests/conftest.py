"""Shared fixtures: the shipped patient, small problems and LQ benches."""

import os

import numpy as np
import pytest

from src.models.ocp import DiscreteSystem, InputBox, OcpProblem, StageCost
from src.models.patient import load_patient
from src.models.scenario import Scenario
from src.pkpd.plant import build_anesthesia_problem, build_patient_model
from src.solver.benchmarks import random_lq_bench

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PATIENT_FILE = os.path.join(ROOT, "data", "patients", "nominal_patient.json")
SCENARIO_DIR = os.path.join(ROOT, "data", "scenarios")


@pytest.fixture
def patient_file():
    return PATIENT_FILE


@pytest.fixture
def scenario_file():
    def _path(name: str) -> str:
        return os.path.join(SCENARIO_DIR, f"{name}.json")
    return _path


@pytest.fixture
def nominal_profile():
    return load_patient(PATIENT_FILE)


@pytest.fixture
def nominal_model(nominal_profile):
    return build_patient_model(nominal_profile, 0.1)


@pytest.fixture
def anesthesia_problem(nominal_model):
    scenario = Scenario()
    return build_anesthesia_problem(
        nominal_model, scenario.bounds, scenario.horizon,
        scenario.cost_weights.r, scenario.cost_weights.rho,
    )


@pytest.fixture
def lq_bench():
    return random_lq_bench(seed=3, n_x=3, n_u=2, horizon=5)


def scalar_quadratic_problem(m: float, horizon: int = 1, lower: float = -np.inf,
                             upper: float = np.inf) -> OcpProblem:
    """h(x, mu) = 0.5 m sum mu_k^2 on a system that ignores its input."""
    system = DiscreteSystem(
        state_dim=1,
        input_dim=1,
        step=lambda x, u: x.copy(),
        jacobian_x=lambda x, u: np.eye(1),
        jacobian_u=lambda x, u: np.zeros((1, 1)),
    )
    cost = StageCost(
        evaluate=lambda x, u: 0.5 * m * float(u @ u),
        grad_x=lambda x, u: np.zeros(1),
        grad_u=lambda x, u: m * u,
        terminal_evaluate=lambda x: 0.0,
        terminal_grad=lambda x: np.zeros(1),
    )
    boxes = [InputBox.uniform(1, lower, upper) for _ in range(horizon)]
    return OcpProblem(system=system, cost=cost, horizon=horizon, constraints=boxes)


@pytest.fixture
def scalar_problem():
    return scalar_quadratic_problem
