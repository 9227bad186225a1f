"""
Patient Model

Represents one patient for two-drug (propofol p, remifentanil r) anesthesia:
- PK transfer/elimination rates per drug (1/min)
- PD interaction Hill surface parameters
- Weight, used to scale per-kg infusion bounds

Patient files are strict JSON documents:

    {"weight_kg": 70,
     "pk": {"p": {"k12": .., "k13": .., "k10": .., "k21": .., "k31": .., "k1e": .., "ke0": ..},
            "r": {...}},
     "pd": {"c50p": 1.8, "c50r": 12.5, "e0": 100, "emax": 100, "eta": 3.76, "beta": 5.1}}
"""

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Mapping

import numpy as np

from src.errors import ConfigurationError


def check_keys(data: Any, cls, path: str, require_all: bool = True) -> Dict[str, Any]:
    """Reject unknown (and, unless defaults apply, missing) keys of a dataclass document."""
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{path or 'document'} must be an object, got {type(data).__name__}")
    expected = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - expected)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in {path or 'document'}: {', '.join(unknown)}")
    missing = sorted(expected - set(data))
    if missing and require_all:
        raise ConfigurationError(f"Missing key(s) in {path or 'document'}: {', '.join(missing)}")
    return dict(data)


@dataclass(frozen=True)
class DrugRates:
    """Compartment rate constants for one drug, all in 1/min."""
    k12: float
    k13: float
    k10: float
    k21: float
    k31: float
    k1e: float
    ke0: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ConfigurationError(f"Rate {f.name} must be finite and >= 0, got {value}")
        if self.ke0 <= 0:
            raise ConfigurationError(f"ke0 must be > 0 for the effect site to equilibrate, got {self.ke0}")

    def scaled(self, factor: float) -> "DrugRates":
        return DrugRates(**{f.name: getattr(self, f.name) * factor for f in fields(self)})

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "") -> "DrugRates":
        return cls(**{k: float(v) for k, v in check_keys(data, cls, path).items()})


@dataclass(frozen=True)
class PkRates:
    """Transfer rates for both drugs."""
    propofol: DrugRates
    remifentanil: DrugRates

    def scaled(self, factor: float) -> "PkRates":
        return PkRates(self.propofol.scaled(factor), self.remifentanil.scaled(factor))

    def to_dict(self) -> Dict[str, Any]:
        return {"p": asdict(self.propofol), "r": asdict(self.remifentanil)}

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "pk") -> "PkRates":
        if not isinstance(data, Mapping):
            raise ConfigurationError(f"{path} must be an object")
        unknown = sorted(set(data) - {"p", "r"})
        if unknown:
            raise ConfigurationError(f"Unknown key(s) in {path}: {', '.join(unknown)}")
        for drug in ("p", "r"):
            if drug not in data:
                raise ConfigurationError(f"Missing key in {path}: {drug}")
        return cls(
            propofol=DrugRates.from_dict(data["p"], f"{path}.p"),
            remifentanil=DrugRates.from_dict(data["r"], f"{path}.r"),
        )


@dataclass(frozen=True)
class PdParams:
    """Interaction Hill surface: BIS = e0 - emax * U^eta / (U^eta + 1)."""
    c50p: float = 1.8    # ug/ml
    c50r: float = 12.5   # ng/ml
    e0: float = 100.0
    emax: float = 100.0
    eta: float = 3.76
    beta: float = 5.1

    def __post_init__(self):
        if not (self.c50p > 0 and self.c50r > 0):
            raise ConfigurationError(f"C50 values must be > 0, got c50p={self.c50p}, c50r={self.c50r}")
        if not (self.eta > 0 and self.emax > 0):
            raise ConfigurationError(f"eta and emax must be > 0, got eta={self.eta}, emax={self.emax}")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if not 0 <= self.e0 <= 100:
            raise ConfigurationError(f"e0 must lie in [0, 100], got {self.e0}")

    def scaled(self, c50p: float = 1.0, c50r: float = 1.0) -> "PdParams":
        return replace(self, c50p=self.c50p * c50p, c50r=self.c50r * c50r)

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "pd") -> "PdParams":
        return cls(**{k: float(v) for k, v in check_keys(data, cls, path).items()})


@dataclass(frozen=True)
class PatientProfile:
    """Content of a patient file."""
    weight_kg: float
    pk: PkRates
    pd: PdParams

    def __post_init__(self):
        if not self.weight_kg > 0:
            raise ConfigurationError(f"weight_kg must be > 0, got {self.weight_kg}")

    def perturbed(self, c50p: float = 1.0, c50r: float = 1.0, pk_rates: float = 1.0) -> "PatientProfile":
        """Plant-side copy with multiplicative parameter mismatch."""
        return PatientProfile(
            weight_kg=self.weight_kg,
            pk=self.pk.scaled(pk_rates) if pk_rates != 1.0 else self.pk,
            pd=self.pd.scaled(c50p, c50r),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"weight_kg": self.weight_kg, "pk": self.pk.to_dict(), "pd": asdict(self.pd)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PatientProfile":
        if not isinstance(data, Mapping):
            raise ConfigurationError("Patient document must be an object")
        unknown = sorted(set(data) - {"weight_kg", "pk", "pd"})
        if unknown:
            raise ConfigurationError(f"Unknown key(s) in patient: {', '.join(unknown)}")
        for key in ("weight_kg", "pk", "pd"):
            if key not in data:
                raise ConfigurationError(f"Missing key in patient: {key}")
        return cls(
            weight_kg=float(data["weight_kg"]),
            pk=PkRates.from_dict(data["pk"]),
            pd=PdParams.from_dict(data["pd"]),
        )


@dataclass(frozen=True, eq=False)
class PatientModel:
    """Patient with assembled continuous and ZOH-discretized PK matrices."""
    weight: float       # kg
    pk: PkRates
    pd: PdParams
    ts: float           # sampling time, min
    ac: np.ndarray      # 8 x 8, block-diagonal [Ac^p, Ac^r]
    bc: np.ndarray      # 8 x 2
    ad: np.ndarray
    bd: np.ndarray

    @property
    def profile(self) -> PatientProfile:
        return PatientProfile(self.weight, self.pk, self.pd)


@dataclass(frozen=True)
class InfusionLimits:
    """Per-kg upper infusion rates for one phase."""
    u_p_max: float   # mg/(kg min)
    u_r_max: float   # ug/(kg min)

    def __post_init__(self):
        if self.u_p_max < 0 or self.u_r_max < 0:
            raise ConfigurationError(f"Infusion limits must be >= 0, got {self}")

    @classmethod
    def from_dict(cls, data: Mapping, path: str) -> "InfusionLimits":
        return cls(**{k: float(v) for k, v in check_keys(data, cls, path).items()})


@dataclass(frozen=True)
class InputBoundsSchedule:
    """Time-varying infusion bounds: induction first, maintenance afterwards."""
    induction_minutes: float = 10.0
    induction: InfusionLimits = InfusionLimits(4.0, 0.36)
    maintenance: InfusionLimits = InfusionLimits(0.8, 0.07)

    def __post_init__(self):
        if self.induction_minutes < 0:
            raise ConfigurationError(f"induction_minutes must be >= 0, got {self.induction_minutes}")
        if (self.maintenance.u_p_max > self.induction.u_p_max
                or self.maintenance.u_r_max > self.induction.u_r_max):
            raise ConfigurationError("Maintenance bounds must not exceed induction bounds")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping, path: str = "bounds") -> "InputBoundsSchedule":
        data = check_keys(data, cls, path, require_all=False)
        default = cls()
        return cls(
            induction_minutes=float(data.get("induction_minutes", default.induction_minutes)),
            induction=(InfusionLimits.from_dict(data["induction"], f"{path}.induction")
                       if "induction" in data else default.induction),
            maintenance=(InfusionLimits.from_dict(data["maintenance"], f"{path}.maintenance")
                         if "maintenance" in data else default.maintenance),
        )


def load_patient(filepath: str) -> PatientProfile:
    """Load and validate a patient file."""
    if not os.path.isfile(filepath):
        raise ConfigurationError(f"Patient file not found: {filepath}")
    with open(filepath, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Patient file {filepath} is not valid JSON: {e}") from e
    return PatientProfile.from_dict(data)


def save_patient(profile: PatientProfile, filepath: str):
    """Save a patient profile as JSON."""
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(profile.to_dict(), f, indent=2)
