"""
Trace Model

Time-indexed record of a closed-loop run and the clinical metrics computed
from it. One TraceRow per sampling instant, both endpoints included.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

NOT_REACHED = "not reached"


@dataclass
class TraceRow:
    """State of the loop at one sampling instant."""
    time_min: float
    plant_state: np.ndarray          # 8-vector
    estimated_state: np.ndarray      # 8-vector seen by the controller
    applied_input: np.ndarray        # (u_p mg/min, u_r ug/min)
    measured_bis: float              # true BIS + disturbance + noise
    true_bis: float
    disturbance_offset: float
    solver_iterations: int
    solver_residual: float
    stage_cost: float
    criterion_met: Optional[bool] = None   # StoppingCriterion mode only


@dataclass
class SimTrace:
    """Rows of one run, in time order."""
    scenario_name: str = ""
    rows: List[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def append(self, row: TraceRow):
        self.rows.append(row)

    @property
    def times(self) -> np.ndarray:
        return np.array([row.time_min for row in self.rows])

    @property
    def true_bis(self) -> np.ndarray:
        return np.array([row.true_bis for row in self.rows])

    @property
    def measured_bis(self) -> np.ndarray:
        return np.array([row.measured_bis for row in self.rows])

    @property
    def inputs(self) -> np.ndarray:
        return np.array([row.applied_input for row in self.rows]).reshape(len(self.rows), -1)

    @property
    def plant_states(self) -> np.ndarray:
        return np.array([row.plant_state for row in self.rows]).reshape(len(self.rows), -1)

    @property
    def estimated_states(self) -> np.ndarray:
        return np.array([row.estimated_state for row in self.rows]).reshape(len(self.rows), -1)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([row.solver_iterations for row in self.rows], dtype=int)


@dataclass
class MetricsReport:
    """
    Clinical performance of one run. None means "not reached" (serialized as
    the string "not reached").
    """
    rise_time_min: Optional[float]
    overshoot_pct: float
    time_in_band_pct: Optional[float]                 # None when the run never reaches maintenance
    disturbance_settling_min: List[Optional[float]]   # one per disturbance event
    oscillation_flag: bool
    terminal_error: float                             # |BIS - ref| at the last sample
    bis_nadir: float                                  # lowest BIS during induction
    criterion_met_pct: Optional[float] = None         # StoppingCriterion mode only

    def to_dict(self) -> Dict[str, Any]:
        def mark(value):
            return NOT_REACHED if value is None else value

        return {
            "rise_time_min": mark(self.rise_time_min),
            "overshoot_pct": self.overshoot_pct,
            "time_in_band_pct": mark(self.time_in_band_pct),
            "disturbance_settling_min": [mark(v) for v in self.disturbance_settling_min],
            "oscillation_flag": self.oscillation_flag,
            "terminal_error": self.terminal_error,
            "bis_nadir": self.bis_nadir,
            "criterion_met_pct": self.criterion_met_pct,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        def unmark(value):
            return None if value == NOT_REACHED else value

        return cls(
            rise_time_min=unmark(data["rise_time_min"]),
            overshoot_pct=data["overshoot_pct"],
            time_in_band_pct=unmark(data["time_in_band_pct"]),
            disturbance_settling_min=[unmark(v) for v in data["disturbance_settling_min"]],
            oscillation_flag=data["oscillation_flag"],
            terminal_error=data["terminal_error"],
            bis_nadir=data["bis_nadir"],
            criterion_met_pct=data.get("criterion_met_pct"),
        )
