"""
Sweep - Closed loop under plant/model mismatch

The plant's C50 values are scaled by each factor while the controller keeps
the nominal patient. Runs are independent; with workers > 1 they share a
thread pool and the results come back in factor order, identical to a
serial sweep.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

from src.errors import DomainError
from src.models.scenario import PlantPerturbation, Scenario
from src.models.trace import MetricsReport, SimTrace
from src.pipeline.metrics import compute_metrics
from src.pipeline.simulator import PatientLike, run_scenario

logger = logging.getLogger(__name__)

FACTOR_RANGE = (0.5, 1.5)


def perturbed_scenario(scenario: Scenario, factor: float) -> Scenario:
    """Scenario whose plant has both C50 values scaled by `factor` (PK scaling kept)."""
    pk_rates = scenario.plant_perturbation.pk_rates
    return scenario.with_perturbation(PlantPerturbation(c50p=factor, c50r=factor, pk_rates=pk_rates))


def sweep_traces(patient: PatientLike, scenario: Scenario, scale_factors: Sequence[float],
                 workers: int = 1, seed: int = 0) -> List[Tuple[float, SimTrace]]:
    """Run the scenario once per factor; returns (factor, trace) in input order."""
    if not scale_factors:
        raise DomainError("At least one scale factor is required")
    lo, hi = FACTOR_RANGE
    for factor in scale_factors:
        if not lo <= factor <= hi:
            raise DomainError(f"Scale factor {factor} outside [{lo}, {hi}]")
    if workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers}")

    scenarios = [perturbed_scenario(scenario, factor) for factor in scale_factors]
    logger.info("Uncertainty sweep over %d factors with %d worker(s)", len(scenarios), workers)
    if workers == 1:
        traces = [run_scenario(patient, sc, seed) for sc in scenarios]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(lambda sc: run_scenario(patient, sc, seed), scenarios))
    return list(zip(scale_factors, traces))


def uncertainty_sweep(patient: PatientLike, scenario: Scenario, scale_factors: Sequence[float],
                      workers: int = 1, seed: int = 0) -> List[Tuple[float, MetricsReport]]:
    """Metrics of the closed loop for each C50 scale factor."""
    e0 = patient.pd.e0
    return [
        (factor, compute_metrics(trace, perturbed_scenario(scenario, factor), e0))
        for factor, trace in sweep_traces(patient, scenario, scale_factors, workers, seed)
    ]


def trend_exceptions(reports: Sequence[Tuple[float, MetricsReport]],
                     tol: float = 1e-6) -> List[Tuple[float, float]]:
    """
    Factor pairs that break "steady-state error non-decreasing in |factor - 1|".

    Steady-state error is the terminal |BIS - ref|. A pair (near, far) is an
    exception when far is strictly further from 1 than near but ends with a
    smaller error (by more than `tol`). Each exception is logged.
    """
    ordered = sorted(reports, key=lambda item: abs(item[0] - 1.0))
    exceptions: List[Tuple[float, float]] = []
    for i, (near, near_report) in enumerate(ordered):
        for far, far_report in ordered[i + 1:]:
            if abs(far - 1.0) <= abs(near - 1.0) + 1e-12:
                continue
            if far_report.terminal_error < near_report.terminal_error - tol:
                logger.warning(
                    "Mismatch trend exception: factor %g ends at |e|=%.4g, factor %g at |e|=%.4g",
                    near, near_report.terminal_error, far, far_report.terminal_error,
                )
                exceptions.append((near, far))
    return exceptions
