"""
Suite - Acceptance battery

Closed-loop criteria on the anesthesia model:
- A1 rise time and runtime, A2 overshoot (30 min nominal induction)
- A3 time in band (60 min maintenance)
- A4 disturbance rejection (+10 / -10 BIS output disturbances)
- A5 terminal error non-increasing in the iteration count
- A6 reach and hold [40, 60] under C50 mismatch

Property checks:
- A7 contraction and residual bound of projected gradient on QP benches
- A8 value decrease of the closed loop in stopping-criterion mode (LQ bench)
- A9 adjoint gradient vs central differences on the anesthesia problem
- A10 ZOH step vs fine-grid integration
- A11 BIS surface sanity

Closed-loop runs that abort are recorded as failures, never raised.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.shooting import finite_difference_gradient, gradient
from src.errors import SimulationAborted
from src.models.ocp import InputSequence
from src.models.patient import PatientProfile
from src.models.scenario import DisturbanceEvent, PlantPerturbation, Scenario
from src.models.trace import SimTrace
from src.pipeline.metrics import compute_metrics, reaches_and_holds
from src.pipeline.simulator import run_scenario
from src.pipeline.sweep import perturbed_scenario, sweep_traces, trend_exceptions
from src.pkpd.pd import bis
from src.pkpd.pk import EFFECT_P, EFFECT_R, STATE_DIM, continuous_reference_step
from src.pkpd.plant import build_anesthesia_problem, build_patient_model
from src.solver.benchmarks import random_lq_bench
from src.solver.constants import epsilon_from_constants
from src.solver.reference import value_function
from src.solver.projected_gradient import (
    FixedIterations,
    RealTimeController,
    SolverConfig,
    StoppingCriterion,
    iterate_once,
)

logger = logging.getLogger(__name__)

DEFAULT_DISTURBANCES = [
    DisturbanceEvent(start_min=20.0, duration_min=1.0, bis_offset=10.0),
    DisturbanceEvent(start_min=40.0, duration_min=1.0, bis_offset=-10.0),
]
ITERATION_COUNTS = (10, 50, 1000)
SCALE_FACTORS = (0.7, 0.9, 1.1, 1.3)

RISE_TIME_MAX_MIN = 4.0
RUNTIME_MAX_S = 5.0
OVERSHOOT_MAX_PCT = 15.0
TIME_IN_BAND_MIN_PCT = 85.0
SETTLING_MAX_MIN = 2.0
PROPERTY_TOL = 1e-9
RELATIVE_TOL = 1e-6


@dataclass
class CriterionResult:
    id: str
    description: str
    passed: bool
    measured: Any
    threshold: Any

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SuiteReport:
    results: List[CriterionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    @property
    def failed(self) -> List[CriterionResult]:
        return [result for result in self.results if not result.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "criteria": [result.to_dict() for result in self.results]}


def derive_scenario(base: Scenario, name: str, duration_min: float,
                    disturbances: Sequence[DisturbanceEvent] = (),
                    mode: Optional[FixedIterations] = None) -> Scenario:
    """Copy of the base scenario with the nominal plant and the given timing."""
    document = base.to_dict()
    document.update({
        "name": name,
        "duration_min": duration_min,
        "disturbances": [asdict(event) for event in disturbances],
        "plant_perturbation": asdict(PlantPerturbation()),
    })
    if mode is not None:
        document["controller"] = {**document["controller"], "mode": mode.to_dict()}
    return Scenario.from_dict(document)


# ============================================================================
# Property checks (A7 - A11)
# ============================================================================

def check_contraction(seed: int = 0, starts: int = 100, iterations: int = 5) -> Dict[str, float]:
    """
    Worst contraction ratio ||mu+ - mu*|| / ||mu - mu*|| on a box-constrained
    QP, and worst violation of (1 - eps^2)||mu - mu*||^2 <= ||mu - mu+||^2 on
    an unconstrained one. Both use gamma = 1/L2.

    On the boxed QP the residual bound is checked in the form implied by the
    contraction, (1 - eps)||mu - mu*|| <= ||mu - mu+||; the squared form holds
    with equality at gamma = 1/L2 only for the unconstrained step.
    """
    rng = np.random.default_rng(seed)
    limit = 0.5
    boxed = random_lq_bench(seed, n_x=3, n_u=2, horizon=5, input_limit=limit)
    free = random_lq_bench(seed + 1, n_x=3, n_u=2, horizon=5)

    m, l2 = boxed.hessian_bounds()
    gamma = 1.0 / l2
    epsilon = epsilon_from_constants(gamma, m, l2)
    problem = boxed.problem()
    shape = (boxed.horizon, boxed.n_u)
    worst_ratio = 0.0
    worst_boxed_gap = -np.inf
    for _ in range(starts):
        x = rng.normal(size=boxed.n_x) * 3.0
        mu_star = boxed.constrained_optimum(x, -limit, limit).values
        mu = rng.uniform(-limit, limit, size=shape)
        for _ in range(iterations):
            updated, residual = iterate_once(problem, x, mu, gamma)
            nxt = updated.values
            before = np.linalg.norm(mu - mu_star)
            if before > 1e-3:
                worst_ratio = max(worst_ratio, float(np.linalg.norm(nxt - mu_star) / before))
                worst_boxed_gap = max(worst_boxed_gap, float(((1.0 - epsilon) * before - residual) / before))
            mu = nxt

    m_free, l2_free = free.hessian_bounds()
    gamma_free = 1.0 / l2_free
    epsilon_free = epsilon_from_constants(gamma_free, m_free, l2_free)
    problem_free = free.problem()
    worst_residual_gap = -np.inf
    for _ in range(starts):
        x = rng.normal(size=free.n_x) * 3.0
        mu_star = free.optimal_sequence(x).values
        mu = rng.normal(size=shape) * 3.0
        for _ in range(iterations):
            nxt = iterate_once(problem_free, x, mu, gamma_free)[0].values
            distance_sq = float(np.sum((mu - mu_star) ** 2))
            step_sq = float(np.sum((mu - nxt) ** 2))
            if distance_sq > 1e-12:
                gap = ((1.0 - epsilon_free ** 2) * distance_sq - step_sq) / distance_sq
                worst_residual_gap = max(worst_residual_gap, gap)
            mu = nxt

    return {
        "epsilon": epsilon,
        "worst_ratio": worst_ratio,
        "worst_boxed_residual_gap": float(worst_boxed_gap),
        "epsilon_unconstrained": epsilon_free,
        "worst_residual_gap": float(worst_residual_gap),
    }


def check_lyapunov_decrease(seed: int = 0, steps: int = 25, max_iterations: int = 20_000) -> Dict[str, Any]:
    """
    Closed loop on an LQ bench in stopping-criterion mode with the analytic
    sigma; records every step where V(x+) >= V(x) away from the origin.
    """
    rng = np.random.default_rng(seed)
    bench = random_lq_bench(seed + 2, n_x=3, n_u=1, horizon=5)
    m, l2 = bench.hessian_bounds()
    gamma = 1.0 / l2
    epsilon = epsilon_from_constants(gamma, m, l2)

    x = rng.normal(size=bench.n_x)
    x *= 5.0 / np.linalg.norm(x)
    gain = bench.lqr_gain()
    state_radius = bench.sublevel_radius(x)
    input_radius = (np.linalg.norm(gain, 2) + 1.0) * state_radius
    sigma = bench.lipschitz_sigma(state_radius, input_radius)

    def lqr_policy(terminal_state, previous):
        return -gain @ terminal_state

    config = SolverConfig(gamma=gamma, mode=StoppingCriterion(epsilon, sigma, max_iterations),
                          terminal_policy=lqr_policy)
    problem = bench.problem()
    controller = RealTimeController(config, InputSequence(np.zeros((bench.horizon, bench.n_u))))
    violations = []
    unmet = 0
    worst_ratio = 0.0
    worst_gap = 0.0
    for t in range(steps):
        if np.linalg.norm(x) <= 1e-6:
            break
        result = controller.step(problem, x)
        if not result.criterion_met:
            unmet += 1
        x_next = bench.a @ x + bench.b @ result.applied_input
        v = value_function(problem, x)
        v_next = value_function(problem, x_next)
        worst_gap = max(worst_gap, abs(v - bench.value(x)))
        worst_ratio = max(worst_ratio, v_next / v)
        if not v_next < v:
            violations.append(t)
        x = x_next
    return {
        "sigma": sigma,
        "epsilon": epsilon,
        "worst_value_ratio": worst_ratio,
        "violations": violations,
        "criterion_unmet_steps": unmet,
        "closed_form_gap": worst_gap,
    }


def check_gradient(profile: PatientProfile, scenario: Scenario, seed: int = 0,
                   points: int = 100) -> float:
    """Worst relative error of the adjoint gradient against central differences."""
    rng = np.random.default_rng(seed)
    model = build_patient_model(profile, scenario.ts_min)
    problem = build_anesthesia_problem(model, scenario.bounds, scenario.horizon,
                                       scenario.cost_weights.r, scenario.cost_weights.rho,
                                       bis_ref=scenario.bis_ref)
    state_scale = np.full(STATE_DIM, 200.0)
    state_scale[EFFECT_P] = 6.0
    state_scale[EFFECT_R] = 30.0
    worst = 0.0
    for _ in range(points):
        x = rng.uniform(0.05, 1.0, size=STATE_DIM) * state_scale
        mu = rng.uniform(problem.lower_bounds, problem.upper_bounds)
        exact = gradient(problem, x, mu)
        approx = finite_difference_gradient(problem, x, mu)
        worst = max(worst, float(np.linalg.norm(exact - approx) / max(np.linalg.norm(approx), 1e-12)))
    return worst


def check_discretization(profile: PatientProfile, ts: float, seed: int = 0, points: int = 5) -> float:
    """Worst relative error of one ZOH step against 10^4-substep RK4."""
    rng = np.random.default_rng(seed)
    model = build_patient_model(profile, ts)
    worst = 0.0
    for _ in range(points):
        x = rng.uniform(0.0, 100.0, size=STATE_DIM)
        u = rng.uniform(0.0, [280.0, 25.0])
        zoh = model.ad @ x + model.bd @ u
        fine = continuous_reference_step(model.ac, model.bc, x, u, ts, substeps=10_000)
        worst = max(worst, float(np.linalg.norm(zoh - fine) / np.linalg.norm(fine)))
    return worst


def check_bis_surface(profile: PatientProfile) -> Dict[str, Any]:
    pd = profile.pd
    grid_p, grid_r = np.meshgrid(np.linspace(0.0, 10.0, 50), np.linspace(0.0, 40.0, 50), indexing="ij")
    surface = bis(grid_p, grid_r, pd)
    return {
        "bis_awake": float(bis(0.0, 0.0, pd)),
        "c50p_error": float(abs(bis(pd.c50p, 0.0, pd) - 50.0)),
        "c50r_error": float(abs(bis(0.0, pd.c50r, pd) - 50.0)),
        "min": float(np.min(surface)),
        "max": float(np.max(surface)),
        "max_increase_p": float(np.max(np.diff(surface, axis=0))),
        "max_increase_r": float(np.max(np.diff(surface, axis=1))),
    }


# ============================================================================
# Battery
# ============================================================================

class AcceptanceSuite:
    """Runs A1-A11 for one patient and a base scenario."""

    def __init__(self, profile: PatientProfile, base: Scenario, seed: int = 0, workers: int = 1,
                 counts: Sequence[int] = ITERATION_COUNTS, factors: Sequence[float] = SCALE_FACTORS):
        self.profile = profile
        self.base = base
        self.seed = seed
        self.workers = workers
        self.counts = tuple(counts)
        self.factors = tuple(factors)
        self.report = SuiteReport()

    def _record(self, criterion_id: str, description: str, passed: bool, measured: Any, threshold: Any):
        result = CriterionResult(criterion_id, description, bool(passed), measured, threshold)
        logger.info("%s %s: %s", criterion_id, "PASS" if passed else "FAIL", measured)
        self.report.results.append(result)

    def _run(self, scenario: Scenario) -> Tuple[Optional[SimTrace], Optional[str], float]:
        started = time.perf_counter()
        try:
            trace = run_scenario(self.profile, scenario, self.seed)
        except SimulationAborted as e:
            return None, str(e), time.perf_counter() - started
        return trace, None, time.perf_counter() - started

    def _guarded(self, criterion_id: str, description: str, threshold: Any, check: Callable[[], Tuple[bool, Any]]):
        """Run a check; a SimulationAborted turns into a failed record."""
        try:
            passed, measured = check()
        except SimulationAborted as e:
            passed, measured = False, {"error": str(e)}
        self._record(criterion_id, description, passed, measured, threshold)

    def induction(self):
        scenario = derive_scenario(self.base, "induction", 30.0)
        trace, error, runtime = self._run(scenario)
        if trace is None:
            self._record("A1", "Rise time to the +-10 band and runtime", False, {"error": error},
                         {"rise_time_min": RISE_TIME_MAX_MIN, "runtime_s": RUNTIME_MAX_S})
            self._record("A2", "Induction overshoot", False, {"error": error}, OVERSHOOT_MAX_PCT)
            return
        metrics = compute_metrics(trace, scenario, self.profile.pd.e0)
        rise = metrics.rise_time_min
        self._record("A1", "Rise time to the +-10 band and runtime",
                     rise is not None and rise <= RISE_TIME_MAX_MIN and runtime < RUNTIME_MAX_S,
                     {"rise_time_min": rise, "runtime_s": round(runtime, 3)},
                     {"rise_time_min": RISE_TIME_MAX_MIN, "runtime_s": RUNTIME_MAX_S})
        self._record("A2", "Induction overshoot",
                     metrics.overshoot_pct <= OVERSHOOT_MAX_PCT,
                     {"overshoot_pct": metrics.overshoot_pct, "bis_nadir": metrics.bis_nadir},
                     OVERSHOOT_MAX_PCT)

    def maintenance(self):
        def check():
            scenario = derive_scenario(self.base, "maintenance", 60.0)
            metrics = compute_metrics(run_scenario(self.profile, scenario, self.seed), scenario,
                                      self.profile.pd.e0)
            value = metrics.time_in_band_pct
            return value is not None and value >= TIME_IN_BAND_MIN_PCT, {"time_in_band_pct": value}

        self._guarded("A3", "Maintenance time in band", TIME_IN_BAND_MIN_PCT, check)

    def disturbance(self):
        def check():
            events = self.base.disturbances or DEFAULT_DISTURBANCES
            scenario = derive_scenario(self.base, "disturbance", 60.0, events)
            metrics = compute_metrics(run_scenario(self.profile, scenario, self.seed), scenario,
                                      self.profile.pd.e0)
            settled = all(s is not None and s <= SETTLING_MAX_MIN for s in metrics.disturbance_settling_min)
            measured = {"settling_min": metrics.to_dict()["disturbance_settling_min"],
                        "oscillation_flag": metrics.oscillation_flag}
            return settled and not metrics.oscillation_flag, measured

        self._guarded("A4", "Disturbance rejection", SETTLING_MAX_MIN, check)

    def iteration_monotonicity(self):
        def check():
            errors = []
            for count in self.counts:
                scenario = derive_scenario(self.base, f"iterations_{count}", 30.0,
                                           mode=FixedIterations(count))
                trace = run_scenario(self.profile, scenario, self.seed)
                errors.append(compute_metrics(trace, scenario, self.profile.pd.e0).terminal_error)
            monotone = all(b <= a + RELATIVE_TOL for a, b in zip(errors, errors[1:]))
            return monotone, {"counts": list(self.counts), "terminal_error": errors}

        self._guarded("A5", "Terminal error non-increasing in iterations", "non-increasing", check)

    def uncertainty(self):
        def check():
            scenario = derive_scenario(self.base, "uncertainty", 30.0)
            runs = sweep_traces(self.profile, scenario, self.factors, self.workers, self.seed)
            held = {str(factor): reaches_and_holds(trace) for factor, trace in runs}
            reports = [(factor, compute_metrics(trace, perturbed_scenario(scenario, factor), self.profile.pd.e0))
                       for factor, trace in runs]
            return all(held.values()), {
                "held": held,
                "terminal_error": {str(factor): report.terminal_error for factor, report in reports},
                "trend_exceptions": [list(pair) for pair in trend_exceptions(reports)],
            }

        self._guarded("A6", "Reach and hold [40, 60] under C50 mismatch", [40.0, 60.0], check)

    def properties(self):
        contraction = check_contraction(self.seed)
        self._record("A7", "Projected gradient contraction and residual bound",
                     contraction["worst_ratio"] <= contraction["epsilon"] + PROPERTY_TOL
                     and contraction["worst_residual_gap"] <= PROPERTY_TOL
                     and contraction["worst_boxed_residual_gap"] <= PROPERTY_TOL,
                     contraction, PROPERTY_TOL)

        lyapunov = check_lyapunov_decrease(self.seed)
        self._record("A8", "Value decrease in stopping-criterion mode",
                     not lyapunov["violations"], lyapunov, "V(x+) < V(x)")

        gradient_error = check_gradient(self.profile, self.base, self.seed)
        self._record("A9", "Adjoint gradient vs central differences",
                     gradient_error <= RELATIVE_TOL, gradient_error, RELATIVE_TOL)

        zoh_error = check_discretization(self.profile, self.base.ts_min, self.seed)
        self._record("A10", "ZOH step vs fine-grid integration",
                     zoh_error <= RELATIVE_TOL, zoh_error, RELATIVE_TOL)

        surface = check_bis_surface(self.profile)
        pd = self.profile.pd
        sane = (
            surface["bis_awake"] == pd.e0
            and surface["c50p_error"] <= 1e-12
            and surface["c50r_error"] <= 1e-12
            and surface["min"] >= pd.e0 - pd.emax
            and surface["max"] <= pd.e0
            and surface["max_increase_p"] <= 1e-12
            and surface["max_increase_r"] <= 1e-12
        )
        self._record("A11", "BIS surface sanity", sane, surface, 1e-12)

    def run(self) -> SuiteReport:
        self.report = SuiteReport()
        self.induction()
        self.maintenance()
        self.disturbance()
        self.iteration_monotonicity()
        self.uncertainty()
        self.properties()
        return self.report


def run_suite(profile: PatientProfile, base: Scenario, seed: int = 0, workers: int = 1) -> SuiteReport:
    """Full acceptance battery A1-A11."""
    return AcceptanceSuite(profile, base, seed, workers).run()
