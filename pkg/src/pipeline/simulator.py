"""
Simulator - Closed-loop run of the real-time controller on a patient

Per sampling instant t_k = k * ts, k = 0 .. round(duration / ts):
1. Measure BIS on the plant (true BIS + active disturbance + optional noise)
2. Update the state estimate
3. Move the OCP to t_k (new boxes, new output offset) and call solve_step
   (warm-started); the dynamics and their stacked maps are built once per run
4. Record the row, then apply u_t to the plant for one ZOH step

The controller predicts with the nominal patient; the plant carries the
scenario's parameter mismatch.
"""

import logging
import time
from typing import Optional, Union

import numpy as np

from src.errors import DivergenceError, SimulationAborted, StepSizeError
from src.models.ocp import InputSequence
from src.models.patient import PatientModel, PatientProfile
from src.models.scenario import Scenario
from src.models.trace import SimTrace, TraceRow
from src.pipeline.estimator import StateEstimator
from src.pkpd.pk import STATE_DIM
from src.pkpd.plant import (
    anesthesia_cost,
    bis_output,
    build_anesthesia_problem,
    build_patient_model,
    horizon_boxes,
)
from src.solver.projected_gradient import RealTimeController, project

logger = logging.getLogger(__name__)

PatientLike = Union[PatientProfile, PatientModel]


class ClosedLoopSimulator:
    """Runs one scenario against one patient."""

    def __init__(self, patient: PatientLike, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.seed = seed
        profile = patient.profile if isinstance(patient, PatientModel) else patient
        if isinstance(patient, PatientModel) and patient.ts == scenario.ts_min:
            self.model = patient
        else:
            self.model = build_patient_model(profile, scenario.ts_min)

        perturbation = scenario.plant_perturbation
        if perturbation.is_nominal:
            self.plant = self.model
        else:
            plant_profile = profile.perturbed(perturbation.c50p, perturbation.c50r, perturbation.pk_rates)
            self.plant = build_patient_model(plant_profile, scenario.ts_min)

    def _initial_sequence(self) -> InputSequence:
        sc = self.scenario
        initial = InputSequence.constant(sc.horizon, [sc.initial_inputs.u_p0, sc.initial_inputs.u_r0])
        boxes = horizon_boxes(sc.bounds, 0.0, self.model.weight, sc.ts_min, sc.horizon)
        return project(initial, boxes)

    def run(self) -> SimTrace:
        """
        Run the scenario.

        Raises:
            SimulationAborted: the solver diverged; the partial trace is attached.
        """
        sc = self.scenario
        trace = SimTrace(scenario_name=sc.name)
        if sc.step_count == 0:
            logger.info("Scenario '%s' has zero duration; empty trace", sc.name)
            return trace

        rng = np.random.default_rng(self.seed)
        controller = RealTimeController(sc.controller, self._initial_sequence())
        x_plant = np.zeros(STATE_DIM)
        estimator = StateEstimator(self.model, sc.estimator, x_plant)
        applied: Optional[np.ndarray] = None
        weights = sc.cost_weights
        problem = build_anesthesia_problem(
            self.model, sc.bounds, sc.horizon, weights.r, weights.rho, bis_ref=sc.bis_ref,
        )

        logger.info("Running scenario '%s': %d steps of %.3g min", sc.name, sc.step_count, sc.ts_min)
        started = time.perf_counter()

        for k in range(sc.step_count + 1):
            t = round(k * sc.ts_min, 9)
            true_bis = bis_output(self.plant, x_plant)
            offset = sc.disturbance_offset(t)
            noise = rng.normal(0.0, sc.measurement_noise_std) if sc.measurement_noise_std > 0 else 0.0
            measured = true_bis + offset + noise

            x_hat = estimator.update(applied, measured, plant_state=x_plant)
            problem = problem.with_constraints(
                horizon_boxes(sc.bounds, t, self.model.weight, sc.ts_min, sc.horizon)
            )
            if sc.offset_correction:
                correction = measured - bis_output(self.model, x_hat)
                problem = problem.with_cost(
                    anesthesia_cost(self.model, weights.r, weights.rho, sc.bis_ref, correction)
                )
            try:
                result = controller.step(problem, x_hat)
            except (DivergenceError, StepSizeError) as e:
                logger.error("Solver failed at t=%.3f min: %s", t, e)
                raise SimulationAborted(e, trace) from e

            box = problem.constraints[0]
            u = np.clip(result.applied_input, box.lower, box.upper)
            trace.append(TraceRow(
                time_min=t,
                plant_state=x_plant.copy(),
                estimated_state=x_hat.copy(),
                applied_input=u.copy(),
                measured_bis=float(measured),
                true_bis=float(true_bis),
                disturbance_offset=offset,
                solver_iterations=result.iterations_used,
                solver_residual=result.final_residual,
                stage_cost=float(problem.cost.evaluate(x_hat, u)),
                criterion_met=result.criterion_met,
            ))
            logger.debug("t=%.2f BIS=%.2f u=(%.3f, %.4f) it=%d",
                         t, measured, u[0], u[1], result.iterations_used)

            if k < sc.step_count:
                x_plant = self.plant.ad @ x_plant + self.plant.bd @ u
                if not np.all(np.isfinite(x_plant)):
                    error = DivergenceError(f"Non-finite plant state after t={t:.3f} min", step_index=k)
                    raise SimulationAborted(error, trace)
                applied = u

        logger.info("Scenario '%s' finished: %d rows in %.2f s",
                    sc.name, len(trace), time.perf_counter() - started)
        return trace


def run_scenario(patient: PatientLike, scenario: Scenario, seed: int = 0) -> SimTrace:
    """Closed-loop run of `scenario` on `patient` (profile or assembled model)."""
    return ClosedLoopSimulator(patient, scenario, seed).run()
