import numpy as np
import pytest

from src.errors import DomainError
from src.models.scenario import DisturbanceEvent, Scenario
from src.models.trace import SimTrace, TraceRow
from src.pipeline.metrics import compute_metrics, count_excursions, reaches_and_holds

TIMES = np.round(np.arange(301) * 0.1, 10)


def make_trace(bis, times=TIMES, criterion=None) -> SimTrace:
    trace = SimTrace("synthetic")
    for k, (t, value) in enumerate(zip(times, bis)):
        trace.append(TraceRow(
            time_min=float(t),
            plant_state=np.zeros(8),
            estimated_state=np.zeros(8),
            applied_input=np.zeros(2),
            measured_bis=float(value),
            true_bis=float(value),
            disturbance_offset=0.0,
            solver_iterations=50,
            solver_residual=0.0,
            stage_cost=0.0,
            criterion_met=None if criterion is None else criterion[k],
        ))
    return trace


class TestComputeMetrics:
    def test_constant_at_reference(self):
        report = compute_metrics(make_trace(np.full(301, 50.0)), Scenario())
        assert report.rise_time_min == 0.0
        assert report.overshoot_pct == 0.0
        assert report.time_in_band_pct == 100.0
        assert report.terminal_error == 0.0
        assert report.bis_nadir == 50.0
        assert report.disturbance_settling_min == []
        assert report.criterion_met_pct is None

    def test_step_at_three_and_a_half_minutes(self):
        bis = np.where(TIMES < 3.5, 100.0, 50.0)
        report = compute_metrics(make_trace(bis), Scenario())
        assert report.rise_time_min == pytest.approx(3.5)

    def test_never_reaches_band(self):
        report = compute_metrics(make_trace(np.full(301, 100.0)), Scenario())
        assert report.rise_time_min is None
        assert report.time_in_band_pct == 0.0
        assert report.to_dict()["rise_time_min"] == "not reached"

    def test_overshoot_relative_to_step(self):
        bis = np.where(TIMES < 2.0, 100.0, 50.0)
        bis[30] = 42.5
        report = compute_metrics(make_trace(bis), Scenario())
        assert report.overshoot_pct == pytest.approx(15.0)
        assert report.bis_nadir == 42.5

    def test_overshoot_ignores_maintenance(self):
        bis = np.full(301, 50.0)
        bis[200] = 35.0
        report = compute_metrics(make_trace(bis), Scenario())
        assert report.overshoot_pct == 0.0
        assert report.time_in_band_pct < 100.0

    def test_disturbance_window_excluded_from_band(self):
        scenario = Scenario(disturbances=[DisturbanceEvent(20.0, 1.0, 10.0)])
        bis = np.full(301, 50.0)
        bis[(TIMES >= 20.0) & (TIMES < 21.0)] = 70.0
        report = compute_metrics(make_trace(bis), scenario)
        assert report.time_in_band_pct == 100.0
        assert report.disturbance_settling_min == [0.0]

    def test_settling_after_event(self):
        scenario = Scenario(disturbances=[DisturbanceEvent(20.0, 1.0, 10.0)])
        bis = np.full(301, 50.0)
        bis[(TIMES >= 20.0) & (TIMES < 21.5)] = 65.0
        report = compute_metrics(make_trace(bis), scenario)
        assert report.disturbance_settling_min == [pytest.approx(0.5)]
        assert not report.oscillation_flag

    def test_settling_requires_hold(self):
        scenario = Scenario(disturbances=[DisturbanceEvent(20.0, 1.0, 10.0)])
        bis = np.full(301, 50.0)
        bis[(TIMES >= 20.0) & (TIMES < 21.0)] = 65.0
        bis[TIMES == 21.5] = 65.0
        report = compute_metrics(make_trace(bis), scenario)
        assert report.disturbance_settling_min == [pytest.approx(0.6)]

    def test_never_settles(self):
        scenario = Scenario(disturbances=[DisturbanceEvent(20.0, 1.0, 10.0)])
        bis = np.where(TIMES >= 20.0, 70.0, 50.0)
        report = compute_metrics(make_trace(bis), scenario)
        assert report.disturbance_settling_min == [None]

    def test_oscillation_after_settling(self):
        scenario = Scenario(disturbances=[DisturbanceEvent(20.0, 1.0, 10.0)])
        bis = np.full(301, 50.0)
        for t in (23.0, 25.0, 27.0):
            bis[np.isclose(TIMES, t)] = 57.0
        report = compute_metrics(make_trace(bis), scenario)
        assert report.disturbance_settling_min == [0.0]
        assert report.oscillation_flag

    def test_single_excursion_is_not_oscillation(self):
        scenario = Scenario(disturbances=[DisturbanceEvent(20.0, 1.0, 10.0)])
        bis = np.full(301, 50.0)
        bis[np.isclose(TIMES, 23.0)] = 57.0
        assert not compute_metrics(make_trace(bis), scenario).oscillation_flag

    def test_short_run_has_no_maintenance(self):
        report = compute_metrics(make_trace(np.full(51, 50.0), TIMES[:51]), Scenario(duration_min=5.0))
        assert report.time_in_band_pct is None

    def test_criterion_share(self):
        met = [k % 4 != 0 for k in range(301)]
        report = compute_metrics(make_trace(np.full(301, 50.0), criterion=met), Scenario())
        assert report.criterion_met_pct == pytest.approx(100.0 * sum(met) / 301)

    def test_empty_trace(self):
        with pytest.raises(DomainError):
            compute_metrics(SimTrace(), Scenario())

    def test_baseline_must_exceed_reference(self):
        with pytest.raises(DomainError):
            compute_metrics(make_trace(np.full(301, 50.0)), Scenario(), e0=50.0)


class TestHelpers:
    def test_count_excursions(self):
        error = np.array([0.0, 6.0, 6.0, 0.0, -7.0, 0.0, 4.9])
        assert count_excursions(error) == 2

    def test_reaches_and_holds(self):
        bis = np.where(TIMES < 5.0, 100.0, 50.0)
        assert reaches_and_holds(make_trace(bis))
        bis[-5] = 65.0
        assert not reaches_and_holds(make_trace(bis))
        assert not reaches_and_holds(SimTrace())
