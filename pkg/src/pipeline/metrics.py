"""
Metrics - Clinical performance of a closed-loop run

Computed on the measured BIS (what the monitor shows):
1. Rise time: first entry into [ref - 10, ref + 10]
2. Overshoot: dip below ref during induction, relative to the e0 -> ref step
3. Time in band: share of maintenance samples within +-10, disturbance windows excluded
4. Disturbance settling: time from the end of each event until the BIS is back
   within +-10 and stays there for SETTLE_HOLD_MIN; oscillation if the error
   then re-exceeds OSCILLATION_POINTS more than once before the next event
"""

from typing import List, Optional

import numpy as np

from src.errors import DomainError
from src.models.scenario import Scenario
from src.models.trace import MetricsReport, SimTrace

BAND = 10.0
SETTLE_HOLD_MIN = 1.0
OSCILLATION_POINTS = 5.0
_TOL = 1e-9


def rise_time(times: np.ndarray, error: np.ndarray) -> Optional[float]:
    inside = np.flatnonzero(np.abs(error) <= BAND)
    if inside.size == 0:
        return None
    return float(times[inside[0]] - times[0])


def overshoot_pct(bis: np.ndarray, bis_ref: float, e0: float) -> float:
    if e0 <= bis_ref:
        raise DomainError(f"Overshoot needs e0 > bis_ref, got e0={e0}, bis_ref={bis_ref}")
    return float(max(0.0, bis_ref - np.min(bis)) / (e0 - bis_ref) * 100.0)


def settling_index(times: np.ndarray, error: np.ndarray, start: float) -> Optional[int]:
    """First sample at or after `start` from which |error| <= BAND holds for SETTLE_HOLD_MIN."""
    inside = np.abs(error) <= BAND
    candidates = np.flatnonzero(times >= start - _TOL)
    for i in candidates:
        if not inside[i]:
            continue
        window = (times >= times[i] - _TOL) & (times <= times[i] + SETTLE_HOLD_MIN + _TOL)
        if np.all(inside[window]):
            return int(i)
    return None


def count_excursions(error: np.ndarray) -> int:
    """Number of times |error| goes from <= OSCILLATION_POINTS to above it."""
    outside = np.abs(error) > OSCILLATION_POINTS
    return int(np.sum(outside[1:] & ~outside[:-1]))


def compute_metrics(trace: SimTrace, scenario: Scenario, e0: float = 100.0) -> MetricsReport:
    """
    Clinical metrics of a trace.

    Args:
        trace: nonempty closed-loop trace
        scenario: the scenario that produced it (reference, phases, events)
        e0: baseline BIS of the patient, for the overshoot normalization
    """
    if len(trace) == 0:
        raise DomainError("Cannot compute metrics of an empty trace")
    times = trace.times
    bis = trace.measured_bis
    ref = scenario.bis_ref
    error = bis - ref
    induction_end = scenario.bounds.induction_minutes

    induction = times < induction_end - _TOL
    induction_bis = bis[induction] if np.any(induction) else bis
    nadir = float(np.min(induction_bis))

    maintenance = (times >= induction_end - _TOL) & ~np.array([scenario.in_disturbance(t) for t in times])
    time_in_band = None
    if np.any(maintenance):
        time_in_band = float(np.mean(np.abs(error[maintenance]) <= BAND) * 100.0)

    events = sorted(scenario.disturbances, key=lambda event: event.start_min)
    settling: List[Optional[float]] = []
    oscillation = False
    for n, event in enumerate(events):
        index = settling_index(times, error, event.end_min)
        if index is None:
            settling.append(None)
            continue
        settling.append(float(times[index] - event.end_min))
        until = events[n + 1].start_min if n + 1 < len(events) else np.inf
        window = (times >= times[index] - _TOL) & (times < until - _TOL)
        if count_excursions(error[window]) > 1:
            oscillation = True

    met = [row.criterion_met for row in trace if row.criterion_met is not None]
    criterion_met_pct = float(np.mean(met) * 100.0) if met else None

    return MetricsReport(
        rise_time_min=rise_time(times, error),
        overshoot_pct=overshoot_pct(induction_bis, ref, e0),
        time_in_band_pct=time_in_band,
        disturbance_settling_min=settling,
        oscillation_flag=oscillation,
        terminal_error=float(abs(error[-1])),
        bis_nadir=nadir,
        criterion_met_pct=criterion_met_pct,
    )


def reaches_and_holds(trace: SimTrace, lower: float = 40.0, upper: float = 60.0,
                      hold_min: float = 10.0) -> bool:
    """BIS enters [lower, upper] and stays inside over the final `hold_min` minutes."""
    times = trace.times
    bis = trace.measured_bis
    if times.size == 0:
        return False
    inside = (bis >= lower) & (bis <= upper)
    final = times >= times[-1] - hold_min - _TOL
    return bool(np.any(inside) and np.all(inside[final]))
