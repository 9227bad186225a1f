"""
Plant - Assembles the anesthesia patient into the generic OCP interfaces

- build_patient_model: rates + PD + weight -> PatientModel for a sampling time
- patient_system: PatientModel -> DiscreteSystem (x+ = Ad x + Bd u)
- anesthesia_cost: l(x, u) = 0.5 u'Ru + rho/2 (y_ref - y)^2 with y = BIS(x) + offset
- bounds_at / horizon_boxes: time-varying, weight-scaled infusion bounds
"""

from typing import List

import numpy as np

from src.errors import ConfigurationError, DomainError
from src.models.ocp import DiscreteSystem, InputBox, OcpProblem, StageCost
from src.models.patient import InputBoundsSchedule, PatientModel, PatientProfile
from src.pkpd.pd import bis, bis_gradient
from src.pkpd.pk import EFFECT_P, EFFECT_R, INPUT_DIM, STATE_DIM, build_pk_matrices, discretize


def build_patient_model(profile: PatientProfile, ts: float) -> PatientModel:
    """Assemble and discretize the PK model of a patient for sampling time ts (min)."""
    ac, bc = build_pk_matrices(profile.pk)
    eigenvalues = np.linalg.eigvals(ac)
    if np.max(eigenvalues.real) > 1e-12:
        raise ConfigurationError(
            f"PK matrix has an unstable eigenvalue (max real part {np.max(eigenvalues.real):g})"
        )
    ad, bd = discretize(ac, bc, ts)
    return PatientModel(
        weight=profile.weight_kg,
        pk=profile.pk,
        pd=profile.pd,
        ts=ts,
        ac=ac,
        bc=bc,
        ad=ad,
        bd=bd,
    )


def effect_sites(x: np.ndarray):
    """(ce_p, ce_r) from a full 8-state vector."""
    return x[EFFECT_P], x[EFFECT_R]


def bis_output(model: PatientModel, x) -> float:
    """Output map y = BIS(ce_p, ce_r) of a plant state."""
    x = np.asarray(x, dtype=float)
    ce_p, ce_r = effect_sites(x)
    # round-off in Ad can leave effect sites at -1e-18 instead of 0
    return float(bis(max(ce_p, 0.0), max(ce_r, 0.0), model.pd))


def patient_system(model: PatientModel) -> DiscreteSystem:
    """8-state, 2-input linear system with constant Jacobians Ad, Bd."""
    ad = model.ad
    bd = model.bd

    def step(x, u):
        return ad @ x + bd @ u

    def jacobian_x(x, u):
        return ad

    def jacobian_u(x, u):
        return bd

    return DiscreteSystem(
        state_dim=STATE_DIM,
        input_dim=INPUT_DIM,
        step=step,
        jacobian_x=jacobian_x,
        jacobian_u=jacobian_u,
        a_matrix=ad,
        b_matrix=bd,
    )


def anesthesia_cost(model: PatientModel, r_weight, rho: float, bis_ref: float = 50.0,
                    bis_offset: float = 0.0) -> StageCost:
    """
    Tracking cost on the predicted BIS.

    Effect-site concentrations are clamped at zero before entering the Hill
    surface; the gradient through a clamped coordinate is zero. The BIS value
    and its gradient are computed once per stage; `trajectory_terms` does the
    whole horizon in one vectorized pass.
    """
    r_weight = np.asarray(r_weight, dtype=float)
    if r_weight.shape != (INPUT_DIM, INPUT_DIM):
        raise ConfigurationError(f"R must be {INPUT_DIM}x{INPUT_DIM}, got {r_weight.shape}")
    if not np.allclose(r_weight, r_weight.T) or np.min(np.linalg.eigvalsh(r_weight)) <= 0:
        raise ConfigurationError("R must be symmetric positive-definite")
    if not rho > 0:
        raise ConfigurationError(f"rho must be > 0, got {rho}")
    pd = model.pd

    def output_error(x):
        ce_p, ce_r = effect_sites(x)
        return bis(max(ce_p, 0.0), max(ce_r, 0.0), pd) + bis_offset - bis_ref

    def weighted_output_grad(x):
        """rho * e * dy/dx from a single BIS evaluation."""
        ce_p, ce_r = effect_sites(x)
        clamped_p, clamped_r = max(ce_p, 0.0), max(ce_r, 0.0)
        e = bis(clamped_p, clamped_r, pd) + bis_offset - bis_ref
        d_p, d_r = bis_gradient(clamped_p, clamped_r, pd)
        grad = np.zeros(STATE_DIM)
        grad[EFFECT_P] = rho * e * d_p if ce_p >= 0 else 0.0
        grad[EFFECT_R] = rho * e * d_r if ce_r >= 0 else 0.0
        return grad

    def evaluate(x, u):
        e = output_error(x)
        return 0.5 * float(u @ r_weight @ u) + 0.5 * rho * e * e

    def grad_x(x, u):
        return weighted_output_grad(x)

    def grad_u(x, u):
        return r_weight @ u

    def terminal_evaluate(x):
        e = output_error(x)
        return 0.5 * rho * e * e

    def trajectory_terms(trajectory, values):
        ce_p = trajectory[:, EFFECT_P]
        ce_r = trajectory[:, EFFECT_R]
        clamped_p = np.maximum(ce_p, 0.0)
        clamped_r = np.maximum(ce_r, 0.0)
        e = bis(clamped_p, clamped_r, pd) + bis_offset - bis_ref
        d_p, d_r = bis_gradient(clamped_p, clamped_r, pd)

        state_grads = np.zeros_like(trajectory)
        state_grads[:, EFFECT_P] = np.where(ce_p >= 0, rho * e * d_p, 0.0)
        state_grads[:, EFFECT_R] = np.where(ce_r >= 0, rho * e * d_r, 0.0)
        input_grads = values @ r_weight.T
        total = 0.5 * float(np.sum((values @ r_weight) * values)) + 0.5 * rho * float(e @ e)
        return total, state_grads, input_grads

    return StageCost(
        evaluate=evaluate,
        grad_x=grad_x,
        grad_u=grad_u,
        terminal_evaluate=terminal_evaluate,
        terminal_grad=weighted_output_grad,
        trajectory_terms=trajectory_terms,
    )


def bounds_at(schedule: InputBoundsSchedule, t: float, weight: float) -> InputBox:
    """
    Absolute infusion box at time t (min): mg/min for propofol, ug/min for remifentanil.

    Induction limits apply on [0, induction_minutes), maintenance afterwards.
    """
    if t < 0:
        raise DomainError(f"Time must be >= 0, got {t}")
    limits = schedule.induction if t < schedule.induction_minutes else schedule.maintenance
    upper = np.array([limits.u_p_max, limits.u_r_max]) * weight
    return InputBox(np.zeros(INPUT_DIM), upper)


def horizon_boxes(schedule: InputBoundsSchedule, t: float, weight: float,
                  ts: float, horizon: int) -> List[InputBox]:
    """Box k of the problem solved at time t covers t + k*ts."""
    # round so that k*ts lands exactly on the phase switch instead of just below it
    return [bounds_at(schedule, round(t + k * ts, 9), weight) for k in range(horizon)]


def build_anesthesia_problem(model: PatientModel, schedule: InputBoundsSchedule, horizon: int,
                             r_weight, rho: float, bis_ref: float = 50.0,
                             t: float = 0.0, bis_offset: float = 0.0) -> OcpProblem:
    """OCP for the controller at time t."""
    return OcpProblem(
        system=patient_system(model),
        cost=anesthesia_cost(model, r_weight, rho, bis_ref, bis_offset),
        horizon=horizon,
        constraints=horizon_boxes(schedule, t, model.weight, model.ts, horizon),
    )
