"""
PK - Compartment state space and its zero-order-hold discretization

State per drug: [A1, A2, A3, Ce] (central, fast peripheral and slow peripheral
amounts, effect-site concentration). Propofol occupies states 0-3,
remifentanil 4-7. See PATIENT_MODELS.md for units.
"""

from typing import Tuple

import numpy as np
from scipy.linalg import expm

from src.errors import DivergenceError, DomainError
from src.models.patient import DrugRates, PkRates

STATES_PER_DRUG = 4
STATE_DIM = 2 * STATES_PER_DRUG
INPUT_DIM = 2

EFFECT_P = 3   # propofol effect-site index
EFFECT_R = 7   # remifentanil effect-site index


def drug_block(rates: DrugRates) -> Tuple[np.ndarray, np.ndarray]:
    """4x4 Ac block and 4x1 Bc column for one drug."""
    k = rates
    ac = np.array([
        [-(k.k12 + k.k13 + k.k10), k.k21, k.k31, 0.0],
        [k.k12, -k.k21, 0.0, 0.0],
        [k.k13, 0.0, -k.k31, 0.0],
        [k.k1e, 0.0, 0.0, -k.ke0],
    ])
    bc = np.array([[1.0], [0.0], [0.0], [0.0]])
    return ac, bc


def build_pk_matrices(rates: PkRates) -> Tuple[np.ndarray, np.ndarray]:
    """
    Assemble the block-diagonal continuous model.

    Negative rates are rejected when DrugRates is constructed.

    Returns:
        Ac (8x8) and Bc (8x2); no coupling between the drugs.
    """
    ac = np.zeros((STATE_DIM, STATE_DIM))
    bc = np.zeros((STATE_DIM, INPUT_DIM))
    for i, drug in enumerate((rates.propofol, rates.remifentanil)):
        block_a, block_b = drug_block(drug)
        sl = slice(i * STATES_PER_DRUG, (i + 1) * STATES_PER_DRUG)
        ac[sl, sl] = block_a
        bc[sl, i:i + 1] = block_b
    return ac, bc


def discretize(ac: np.ndarray, bc: np.ndarray, ts: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact zero-order-hold discretization.

    expm([[Ac, Bc], [0, 0]] * Ts) = [[Ad, Bd], [0, I]]
    """
    if not ts > 0:
        raise DomainError(f"Sampling time must be > 0, got {ts}")
    n = ac.shape[0]
    m = bc.shape[1]

    augmented = np.zeros((n + m, n + m))
    augmented[:n, :n] = ac
    augmented[:n, n:] = bc
    phi = expm(augmented * ts)

    ad = phi[:n, :n]
    bd = phi[:n, n:]
    if not (np.all(np.isfinite(ad)) and np.all(np.isfinite(bd))):
        raise DivergenceError(f"Non-finite discretization for Ts={ts}")
    return ad, bd


def continuous_reference_step(ac: np.ndarray, bc: np.ndarray, x, u, ts: float,
                              substeps: int = 10_000) -> np.ndarray:
    """
    Integrate x' = Ac x + Bc u over one sampling period with fixed-step RK4.

    Used as the fine-grid oracle for the ZOH step.
    """
    x = np.asarray(x, dtype=float).copy()
    drive = bc @ np.asarray(u, dtype=float)
    dt = ts / substeps

    def rhs(z):
        return ac @ z + drive

    for _ in range(substeps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
