"""
Scenario Model

Everything a closed-loop run needs besides the patient:
- Timing (duration, sampling time, horizon) and the BIS target
- Controller configuration (SolverConfig) and tracking weights
- Infusion bounds schedule and initial inputs
- Output disturbances, plant-side parameter mismatch, estimator choice

Scenario files are JSON documents mirroring the dataclasses below. Missing
keys take their defaults, unknown keys are rejected. Overrides are dotted
`key=value` strings applied to the resolved document before parsing.
"""

import copy
import json
import numbers
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from src.errors import ConfigurationError
from src.models.patient import InputBoundsSchedule, check_keys
from src.solver.projected_gradient import SolverConfig


def as_int(value: Any, path: str) -> int:
    """Integral number from a document; 2.5, "25" and true are rejected."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not float(value).is_integer():
        raise ConfigurationError(f"{path} must be an integer, got {value!r}")
    return int(value)


def as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, (bool, np.bool_)):
        raise ConfigurationError(f"{path} must be true or false, got {value!r}")
    return bool(value)


class EstimatorType(str, Enum):
    """How the controller learns the state."""
    FULL_STATE = "full_state"   # oracle: the plant state itself
    FILTERED = "filtered"       # extended Kalman filter on measured BIS


@dataclass(frozen=True)
class DisturbanceEvent:
    """Additive offset on the measured BIS over [start_min, start_min + duration_min)."""
    start_min: float
    duration_min: float
    bis_offset: float

    def __post_init__(self):
        if self.start_min < 0 or self.duration_min < 0:
            raise ConfigurationError(f"Disturbance start and duration must be >= 0, got {self}")

    @property
    def end_min(self) -> float:
        return self.start_min + self.duration_min

    def active(self, t: float) -> bool:
        return self.start_min <= t < self.end_min

    @classmethod
    def from_dict(cls, data: Mapping, path: str) -> "DisturbanceEvent":
        return cls(**{k: float(v) for k, v in check_keys(data, cls, path).items()})


@dataclass(frozen=True)
class PlantPerturbation:
    """Multiplicative mismatch applied to the simulated plant only."""
    c50p: float = 1.0
    c50r: float = 1.0
    pk_rates: float = 1.0

    def __post_init__(self):
        for name in ("c50p", "c50r", "pk_rates"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"plant_perturbation.{name} must be > 0")

    @property
    def is_nominal(self) -> bool:
        return self.c50p == 1.0 and self.c50r == 1.0 and self.pk_rates == 1.0

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "plant_perturbation") -> "PlantPerturbation":
        return cls(**{k: float(v) for k, v in check_keys(data, cls, path, require_all=False).items()})


@dataclass(frozen=True)
class EstimatorConfig:
    type: EstimatorType = EstimatorType.FULL_STATE
    noise_std: float = 2.0       # assumed BIS measurement noise (filtered only)
    process_std: float = 1e-3    # per-step process noise on every state
    initial_std: float = 1e-3    # prior spread around the initial state

    def __post_init__(self):
        if self.noise_std <= 0 or self.process_std < 0 or self.initial_std < 0:
            raise ConfigurationError("Estimator noise_std must be > 0, process/initial std >= 0")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["type"] = self.type.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "estimator") -> "EstimatorConfig":
        data = check_keys(data, cls, path, require_all=False)
        try:
            kind = EstimatorType(data.pop("type", EstimatorType.FULL_STATE.value))
        except ValueError:
            raise ConfigurationError(
                f"Unknown {path}.type (choose from {', '.join(t.value for t in EstimatorType)})"
            ) from None
        return cls(type=kind, **{k: float(v) for k, v in data.items()})


@dataclass(frozen=True, eq=False)
class CostWeights:
    """l(x, u) = 0.5 u'Ru + rho/2 (bis_ref - y)^2."""
    r: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1000.0]))
    rho: float = 10.0

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.shape != (2, 2):
            raise ConfigurationError(f"cost_weights.R must be 2x2, got shape {r.shape}")
        if not np.allclose(r, r.T) or np.min(np.linalg.eigvalsh(r)) <= 0:
            raise ConfigurationError("cost_weights.R must be symmetric positive-definite")
        if not self.rho > 0:
            raise ConfigurationError(f"cost_weights.rho must be > 0, got {self.rho}")
        object.__setattr__(self, "r", r)

    def to_dict(self) -> Dict[str, Any]:
        return {"R": self.r.tolist(), "rho": self.rho}

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "cost_weights") -> "CostWeights":
        if not isinstance(data, Mapping):
            raise ConfigurationError(f"{path} must be an object")
        unknown = sorted(set(data) - {"R", "rho"})
        if unknown:
            raise ConfigurationError(f"Unknown key(s) in {path}: {', '.join(unknown)}")
        default = cls()
        return cls(r=data.get("R", default.r), rho=float(data.get("rho", default.rho)))


@dataclass(frozen=True)
class InitialInputs:
    """First input sequence, held constant over the horizon: mg/min and ug/min."""
    u_p0: float = 1.0
    u_r0: float = 1.0

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "initial_inputs") -> "InitialInputs":
        return cls(**{k: float(v) for k, v in check_keys(data, cls, path, require_all=False).items()})


@dataclass(frozen=True, eq=False)
class Scenario:
    """One closed-loop experiment."""
    name: str = "scenario"
    duration_min: float = 30.0
    ts_min: float = 0.1
    horizon: int = 25
    bis_ref: float = 50.0
    controller: SolverConfig = field(default_factory=SolverConfig)
    cost_weights: CostWeights = field(default_factory=CostWeights)
    initial_inputs: InitialInputs = field(default_factory=InitialInputs)
    bounds: InputBoundsSchedule = field(default_factory=InputBoundsSchedule)
    disturbances: List[DisturbanceEvent] = field(default_factory=list)
    plant_perturbation: PlantPerturbation = field(default_factory=PlantPerturbation)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    measurement_noise_std: float = 0.0
    offset_correction: bool = True

    def __post_init__(self):
        if not self.ts_min > 0:
            raise ConfigurationError(f"ts_min must be > 0, got {self.ts_min}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if self.duration_min < 0:
            raise ConfigurationError(f"duration_min must be >= 0, got {self.duration_min}")
        if self.measurement_noise_std < 0:
            raise ConfigurationError("measurement_noise_std must be >= 0")

    @property
    def step_count(self) -> int:
        """Number of controller steps; the trace has step_count + 1 rows."""
        return int(round(self.duration_min / self.ts_min))

    def disturbance_offset(self, t: float) -> float:
        """Sum of the offsets active at time t."""
        return float(sum(event.bis_offset for event in self.disturbances if event.active(t)))

    def in_disturbance(self, t: float) -> bool:
        return any(event.active(t) for event in self.disturbances)

    def with_controller(self, controller: SolverConfig) -> "Scenario":
        return Scenario.from_dict({**self.to_dict(), "controller": controller.to_dict()})

    def with_perturbation(self, perturbation: PlantPerturbation) -> "Scenario":
        return Scenario.from_dict({**self.to_dict(), "plant_perturbation": asdict(perturbation)})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "duration_min": self.duration_min,
            "ts_min": self.ts_min,
            "horizon": self.horizon,
            "bis_ref": self.bis_ref,
            "controller": self.controller.to_dict(),
            "cost_weights": self.cost_weights.to_dict(),
            "initial_inputs": asdict(self.initial_inputs),
            "bounds": self.bounds.to_dict(),
            "disturbances": [asdict(event) for event in self.disturbances],
            "plant_perturbation": asdict(self.plant_perturbation),
            "estimator": self.estimator.to_dict(),
            "measurement_noise_std": self.measurement_noise_std,
            "offset_correction": self.offset_correction,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Scenario":
        data = check_keys(data, cls, "scenario", require_all=False)
        default = cls()
        disturbances = data.get("disturbances", [])
        if not isinstance(disturbances, list):
            raise ConfigurationError("disturbances must be a list")
        try:
            return cls(
                name=str(data.get("name", default.name)),
                duration_min=float(data.get("duration_min", default.duration_min)),
                ts_min=float(data.get("ts_min", default.ts_min)),
                horizon=as_int(data.get("horizon", default.horizon), "horizon"),
                bis_ref=float(data.get("bis_ref", default.bis_ref)),
                controller=SolverConfig.from_dict(data.get("controller", {})),
                cost_weights=CostWeights.from_dict(data.get("cost_weights", {})),
                initial_inputs=InitialInputs.from_dict(data.get("initial_inputs", {})),
                bounds=InputBoundsSchedule.from_dict(data.get("bounds", {})),
                disturbances=[DisturbanceEvent.from_dict(event, f"disturbances[{i}]")
                              for i, event in enumerate(disturbances)],
                plant_perturbation=PlantPerturbation.from_dict(data.get("plant_perturbation", {})),
                estimator=EstimatorConfig.from_dict(data.get("estimator", {})),
                measurement_noise_std=float(data.get("measurement_noise_std", default.measurement_noise_std)),
                offset_correction=as_bool(data.get("offset_correction", default.offset_correction),
                                          "offset_correction"),
            )
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid scenario value: {e}") from e


# ============================================================================
# Overrides
# ============================================================================

def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(document: Mapping, overrides: List[str]) -> Dict[str, Any]:
    """
    Apply `dotted.path=value` overrides to a scenario document.

    The document is first resolved (defaults filled in), so any key that the
    scenario knows about can be overridden; list elements are addressed by
    index (`disturbances.0.bis_offset=15`). Values are parsed as JSON and fall
    back to plain strings.
    """
    resolved = Scenario.from_dict(document).to_dict()
    result = copy.deepcopy(resolved)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"Override '{item}' is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node: Any = result
        for depth, key in enumerate(keys):
            last = depth == len(keys) - 1
            if isinstance(node, list):
                try:
                    index = int(key)
                    node[index]
                except (ValueError, IndexError):
                    raise ConfigurationError(f"Override path '{path}' does not exist") from None
                if last:
                    node[index] = _parse_value(raw)
                else:
                    node = node[index]
            elif isinstance(node, dict) and key in node:
                if last:
                    node[key] = _parse_value(raw)
                else:
                    node = node[key]
            else:
                raise ConfigurationError(f"Override path '{path}' does not exist")
    return result


# ============================================================================
# File I/O
# ============================================================================

def load_scenario_document(filepath: str) -> Dict[str, Any]:
    if not os.path.isfile(filepath):
        raise ConfigurationError(f"Scenario file not found: {filepath}")
    with open(filepath, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Scenario file {filepath} is not valid JSON: {e}") from e


def load_scenario(filepath: str, overrides: Optional[List[str]] = None) -> Scenario:
    """Load a scenario file, apply overrides and validate."""
    document = load_scenario_document(filepath)
    if overrides:
        document = apply_overrides(document, overrides)
    return Scenario.from_dict(document)


def save_scenario(scenario: Scenario, filepath: str):
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(scenario.to_dict(), f, indent=2)


@dataclass
class RunManifest:
    """Inputs of one CLI invocation."""
    patient_path: str
    scenario_path: str
    output_dir: str
    overrides: List[str] = field(default_factory=list)
    seed: Optional[int] = None     # None: 0, or the seed stored in a config echo
