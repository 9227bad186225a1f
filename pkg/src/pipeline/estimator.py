"""
Estimator - State seen by the controller

- FULL_STATE: the plant state itself
- FILTERED: extended Kalman filter. Linear predict with (Ad, Bd), measurement
  update with the BIS map linearized at the predicted effect sites.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.errors import ConfigurationError
from src.models.patient import PatientModel
from src.models.scenario import EstimatorConfig, EstimatorType
from src.pkpd.pd import bis_gradient
from src.pkpd.pk import EFFECT_P, EFFECT_R, STATE_DIM
from src.pkpd.plant import bis_output, effect_sites

logger = logging.getLogger(__name__)


@dataclass
class EstimatorState:
    x: np.ndarray
    covariance: Optional[np.ndarray] = None   # FILTERED only


def initial_estimate(x0, config: EstimatorConfig) -> EstimatorState:
    x0 = np.asarray(x0, dtype=float).copy()
    if config.type == EstimatorType.FULL_STATE:
        return EstimatorState(x=x0)
    return EstimatorState(x=x0, covariance=config.initial_std ** 2 * np.eye(STATE_DIM))


def _output_row(model: PatientModel, x: np.ndarray) -> np.ndarray:
    ce_p, ce_r = effect_sites(x)
    d_p, d_r = bis_gradient(max(ce_p, 0.0), max(ce_r, 0.0), model.pd)
    row = np.zeros(STATE_DIM)
    row[EFFECT_P] = d_p
    row[EFFECT_R] = d_r
    return row


def state_estimator_update(prior: EstimatorState, applied_input, measured_bis: Optional[float],
                           model: PatientModel, config: EstimatorConfig,
                           plant_state=None) -> EstimatorState:
    """
    Advance the estimate by one sampling instant.

    Args:
        prior: estimate at the previous instant
        applied_input: input applied since the previous instant (None at t=0: no prediction)
        measured_bis: BIS reading (None: prediction only)
        model: controller-side patient model
        config: estimator settings
        plant_state: true state, used only in FULL_STATE mode
    """
    if config.type == EstimatorType.FULL_STATE:
        if plant_state is None:
            raise ConfigurationError("FULL_STATE estimation needs the plant state")
        return EstimatorState(x=np.asarray(plant_state, dtype=float).copy())

    x = prior.x.copy()
    p = prior.covariance.copy()
    if applied_input is not None:
        x = model.ad @ x + model.bd @ np.asarray(applied_input, dtype=float)
        p = model.ad @ p @ model.ad.T + config.process_std ** 2 * np.eye(STATE_DIM)
    if not np.all(np.isfinite(p)):
        logger.warning("Estimator covariance became non-finite during prediction; resetting")
        p = config.initial_std ** 2 * np.eye(STATE_DIM)
    predicted = EstimatorState(x=np.maximum(x, 0.0), covariance=p)
    if measured_bis is None:
        return predicted

    h = _output_row(model, predicted.x)
    innovation = float(measured_bis) - bis_output(model, predicted.x)
    s = float(h @ p @ h) + config.noise_std ** 2
    gain = p @ h / s
    x_new = predicted.x + gain * innovation
    # Joseph form
    i_kh = np.eye(STATE_DIM) - np.outer(gain, h)
    p_new = i_kh @ p @ i_kh.T + config.noise_std ** 2 * np.outer(gain, gain)

    if not (np.all(np.isfinite(p_new)) and np.all(np.isfinite(x_new))):
        logger.warning("Estimator covariance became non-finite; falling back to prediction")
        return predicted
    return EstimatorState(x=np.maximum(x_new, 0.0), covariance=0.5 * (p_new + p_new.T))


class StateEstimator:
    """Holds the running estimate for one closed-loop run."""

    def __init__(self, model: PatientModel, config: EstimatorConfig, x0):
        self.model = model
        self.config = config
        self.state = initial_estimate(x0, config)

    @property
    def x(self) -> np.ndarray:
        return self.state.x

    def update(self, applied_input, measured_bis: Optional[float], plant_state=None) -> np.ndarray:
        self.state = state_estimator_update(
            self.state, applied_input, measured_bis, self.model, self.config, plant_state
        )
        return self.state.x
