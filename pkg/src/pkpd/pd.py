"""
PD - Propofol/remifentanil interaction surface for BIS

    U   = ce_p/c50p + ce_r/c50r + beta * (ce_p/c50p) * (ce_r/c50r)
    BIS = e0 - emax * U^eta / (U^eta + 1)

Both functions accept scalars or equally shaped arrays.
"""

from typing import Tuple, Union

import numpy as np

from src.errors import DomainError
from src.models.patient import PdParams

ArrayLike = Union[float, np.ndarray]


def _check_concentrations(ce_p, ce_r) -> Tuple[np.ndarray, np.ndarray]:
    ce_p = np.asarray(ce_p, dtype=float)
    ce_r = np.asarray(ce_r, dtype=float)
    if np.any(ce_p < 0) or np.any(ce_r < 0):
        raise DomainError(
            f"Effect-site concentrations must be >= 0, got ce_p={ce_p.min():g}, ce_r={ce_r.min():g}"
        )
    return ce_p, ce_r


def interaction(ce_p: ArrayLike, ce_r: ArrayLike, pd: PdParams) -> np.ndarray:
    """Normalized combined potency U."""
    up = np.asarray(ce_p, dtype=float) / pd.c50p
    ur = np.asarray(ce_r, dtype=float) / pd.c50r
    return up + ur + pd.beta * up * ur


def bis(ce_p: ArrayLike, ce_r: ArrayLike, pd: PdParams) -> ArrayLike:
    """BIS for the given effect-site concentrations."""
    ce_p, ce_r = _check_concentrations(ce_p, ce_r)
    u_eta = interaction(ce_p, ce_r, pd) ** pd.eta
    value = pd.e0 - pd.emax * u_eta / (u_eta + 1.0)
    return float(value) if value.ndim == 0 else value


def bis_gradient(ce_p: ArrayLike, ce_r: ArrayLike, pd: PdParams) -> Tuple[ArrayLike, ArrayLike]:
    """Partial derivatives (dBIS/dce_p, dBIS/dce_r); both are <= 0."""
    ce_p, ce_r = _check_concentrations(ce_p, ce_r)
    u = interaction(ce_p, ce_r, pd)
    u_eta = u ** pd.eta
    # d/dU [U^eta / (U^eta + 1)] = eta U^(eta-1) / (U^eta + 1)^2, zero at U = 0 for eta > 1
    with np.errstate(divide="ignore", invalid="ignore"):
        d_hill = np.where(u > 0, pd.eta * u_eta / np.where(u > 0, u, 1.0), 0.0) / (u_eta + 1.0) ** 2
    if pd.eta < 1:
        d_hill = np.where(u > 0, d_hill, np.inf)
    elif pd.eta == 1:
        d_hill = np.where(u > 0, d_hill, 1.0)

    du_dp = 1.0 / pd.c50p + pd.beta * ce_r / (pd.c50p * pd.c50r)
    du_dr = 1.0 / pd.c50r + pd.beta * ce_p / (pd.c50p * pd.c50r)
    grad_p = -pd.emax * d_hill * du_dp
    grad_r = -pd.emax * d_hill * du_dr
    if grad_p.ndim == 0:
        return float(grad_p), float(grad_r)
    return grad_p, grad_r
