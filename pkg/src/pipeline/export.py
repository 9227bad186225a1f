"""
Export - CSV traces, metrics summaries and the config echo

The CSV header (TRACE_COLUMNS) is a stable interface; see PIPELINE.md.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.errors import ConfigurationError
from src.models.patient import PatientProfile
from src.models.scenario import Scenario
from src.models.trace import MetricsReport, SimTrace
from src.pkpd.pk import STATE_DIM

logger = logging.getLogger(__name__)

TRACE_COLUMNS: List[str] = (
    ["time_min"]
    + [f"plant_state_{i}" for i in range(STATE_DIM)]
    + [f"estimated_state_{i}" for i in range(STATE_DIM)]
    + ["applied_input_p", "applied_input_r",
       "measured_bis", "true_bis", "disturbance_offset",
       "solver_iterations", "solver_residual", "stage_cost", "criterion_met"]
)


def trace_frame(trace: SimTrace) -> pd.DataFrame:
    """One row per sampling instant, columns in TRACE_COLUMNS order."""
    records = []
    for row in trace:
        record: Dict[str, Any] = {"time_min": row.time_min}
        record.update({f"plant_state_{i}": float(v) for i, v in enumerate(row.plant_state)})
        record.update({f"estimated_state_{i}": float(v) for i, v in enumerate(row.estimated_state)})
        record.update({
            "applied_input_p": float(row.applied_input[0]),
            "applied_input_r": float(row.applied_input[1]),
            "measured_bis": row.measured_bis,
            "true_bis": row.true_bis,
            "disturbance_offset": row.disturbance_offset,
            "solver_iterations": row.solver_iterations,
            "solver_residual": row.solver_residual,
            "stage_cost": row.stage_cost,
            "criterion_met": "" if row.criterion_met is None else row.criterion_met,
        })
        records.append(record)
    return pd.DataFrame.from_records(records, columns=TRACE_COLUMNS)


def write_trace_csv(trace: SimTrace, filepath: str):
    trace_frame(trace).to_csv(filepath, index=False)
    logger.info("Wrote %d rows to %s", len(trace), filepath)


def write_comparison_csv(traces: Sequence[Tuple[int, SimTrace]], filepath: str):
    """All traces stacked, keyed by a leading `count` column."""
    frames = []
    for count, trace in traces:
        frame = trace_frame(trace)
        frame.insert(0, "count", count)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(filepath, index=False)
    logger.info("Wrote comparison of %d runs to %s", len(frames), filepath)


def write_json(document: Any, filepath: str):
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
    logger.info("Wrote %s", filepath)


def write_metrics_json(report: MetricsReport, filepath: str):
    write_json(report.to_dict(), filepath)


def config_document(seed: int, profile: PatientProfile, scenario: Scenario,
                    overrides: Optional[List[str]] = None,
                    patient_path: str = "", scenario_path: str = "") -> Dict[str, Any]:
    """Fully resolved inputs of a run; feeding it back through --config reproduces the run."""
    return {
        "seed": seed,
        "patient_path": patient_path,
        "scenario_path": scenario_path,
        "overrides": list(overrides or []),
        "patient": profile.to_dict(),
        "scenario": scenario.to_dict(),
    }


def load_config_document(filepath: str) -> Tuple[PatientProfile, Scenario, int]:
    """Inverse of config_document: (patient, scenario, seed)."""
    if not os.path.isfile(filepath):
        raise ConfigurationError(f"Config file not found: {filepath}")
    with open(filepath, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {filepath} is not valid JSON: {e}") from e
    for key in ("seed", "patient", "scenario"):
        if key not in data:
            raise ConfigurationError(f"Missing key in config: {key}")
    return PatientProfile.from_dict(data["patient"]), Scenario.from_dict(data["scenario"]), int(data["seed"])
