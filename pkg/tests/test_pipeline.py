import numpy as np
import pytest

from wattsplit.core import CURRENT, Waveform
from wattsplit.pipeline import (
    PipelineConfig,
    attribute_unexplained,
    disaggregate,
    evaluate_report,
)
from wattsplit.simulate import (
    FSM_VARYING,
    TWO_STATE,
    FsmVaryingParams,
    LoadModel,
    MachineScenario,
    Mains,
    TwoStateParams,
    compose_machine,
    mains_voltage,
    random_walk_profile,
)
from wattsplit.scenarios import thermoform_scenario

FS = 10_000.0
MAINS = Mains()


@pytest.fixture(scope="module")
def thermoform_run():
    scenario = thermoform_scenario(duration=60.0)
    aggregate, voltage, truth = compose_machine(scenario)
    report = disaggregate(aggregate, voltage)
    return report, truth


class TestDisaggregate:
    def test_estimate_count_and_classes(self, thermoform_run):
        report, _ = thermoform_run
        assert len(report.estimates) >= 4
        classes = {e.load_class for e in report.estimates}
        assert "ubr_three_phase" in classes
        assert "ubr_single_phase" in classes
        assert "two_state" in classes
        assert "fsm_varying" in classes

    def test_power_accounting_within_1w(self, thermoform_run):
        report, _ = thermoform_run
        total = report.explained_p() + report.unexplained_p
        assert np.abs(total - report.aggregate_p).max() <= 1.0

    def test_weighted_accuracy(self, thermoform_run):
        report, truth = thermoform_run
        report = evaluate_report(report, truth.load_power)
        assert report.evaluation["weighted_acc"] >= 0.85
        assert report.evaluation["coverage"] >= 0.8

    def test_motor_recovered(self, thermoform_run):
        report, truth = thermoform_run
        motor = [e for e in report.estimates if e.load_class == FSM_VARYING]
        assert len(motor) == 1
        p_true = truth.load_power["vacuum_pump_motor"]
        acc = 1 - np.sum(np.abs(motor[0].p_series - p_true)) / np.sum(np.abs(p_true))
        assert acc >= 0.85
        assert motor[0].meta["harmonic"] == 8

    def test_silent_machine(self):
        duration = 2.0
        v = mains_voltage(MAINS, FS, duration)
        silent = Waveform(np.zeros(len(v)), FS, CURRENT)
        report = disaggregate(silent, v)
        assert report.estimates == []
        assert np.allclose(report.unexplained_p, 0.0, atol=1e-9)

    def test_all_stages_disabled_single_unexplained(self):
        scenario = thermoform_scenario(duration=20.0)
        aggregate, voltage, _ = compose_machine(scenario)
        cfg = PipelineConfig(enable_ubr=False, enable_events=False, enable_fsm=False)
        report = disaggregate(aggregate, voltage, cfg)
        assert len(report.estimates) == 1
        only = report.estimates[0]
        assert only.load_class == "residual_unexplained"
        assert np.array_equal(only.p_series, report.aggregate_p)

    def test_stage_subsets_still_account(self):
        scenario = thermoform_scenario(duration=20.0)
        aggregate, voltage, _ = compose_machine(scenario)
        for flags in ((True, False, False), (False, True, False), (True, True, False)):
            cfg = PipelineConfig(
                enable_ubr=flags[0], enable_events=flags[1], enable_fsm=flags[2]
            )
            report = disaggregate(aggregate, voltage, cfg)
            total = report.explained_p() + report.unexplained_p
            assert np.abs(total - report.aggregate_p).max() <= 1.0


class TestAttributeUnexplained:
    def test_idempotent(self, thermoform_run):
        report, _ = thermoform_run
        n = len(report.estimates)
        again = attribute_unexplained(report)
        assert len(again.estimates) == n  # catch-all was already present
        third = attribute_unexplained(again)
        assert len(third.estimates) == n

    def test_restores_accounting_exactly(self):
        scenario = thermoform_scenario(duration=20.0)
        aggregate, voltage, _ = compose_machine(scenario)
        cfg = PipelineConfig(enable_fsm=False)
        report = disaggregate(aggregate, voltage, cfg)
        attribute_unexplained(report)
        total = report.explained_p()
        assert np.allclose(total, report.aggregate_p, atol=1e-9)
        assert np.all(report.unexplained_p == 0.0)

    def test_fully_explained_scenario_small_catchall(self):
        # two clean two-state loads, nothing else: the catch-all is near zero
        duration = 30.0
        loads = [
            LoadModel("a", TWO_STATE, TwoStateParams(1500.0, 1.0), [(3.0, 18.0)]),
            LoadModel("b", TWO_STATE, TwoStateParams(600.0, 0.9), [(8.0, 26.0)]),
        ]
        scenario = MachineScenario(
            loads=loads, mains=MAINS, duration=duration, sample_rate=FS, noise_rms=0.0
        )
        aggregate, voltage, _ = compose_machine(scenario)
        report = disaggregate(aggregate, voltage)
        attribute_unexplained(report)
        rest = [e for e in report.estimates if e.load_class == "residual_unexplained"]
        total_e = np.sum(report.aggregate_p) * report.t_period / 3600
        assert abs(rest[0].energy_wh) < 0.01 * total_e


class TestConfig:
    def test_round_trip(self):
        cfg = PipelineConfig(event_threshold_w=75.0, harmonic_candidates=(2, 4, 8))
        clone = PipelineConfig.from_json(cfg.to_json())
        assert clone == cfg

    def test_defaults_documented_values(self):
        cfg = PipelineConfig()
        assert cfg.event_threshold_w == 50.0
        assert cfg.settle_periods == 3
        assert cfg.curvature_threshold == 8.0
        assert cfg.min_abs_r == 0.9
        assert cfg.harmonic_candidates == tuple(range(2, 14))


class TestVaryingMotorAttribution:
    def test_motor_alone_no_event_capture(self):
        # the motor's on/off magnitudes differ, so its events do not pair;
        # the harmonic stage must still recover the full power
        duration = 40.0
        profile = random_walk_profile(600.0, 950.0, duration, seed=5)
        loads = [
            LoadModel(
                "motor",
                FSM_VARYING,
                FsmVaryingParams(
                    p_base=750.0,
                    step_dp=620.0,
                    step_dq=470.0,
                    coupling_harmonic=8,
                    coupling_slope=0.0012,
                    coupling_intercept=0.15,
                    p_profile=profile,
                ),
                [(5.0, 35.0)],
            ),
            LoadModel("heater", TWO_STATE, TwoStateParams(1800.0, 1.0), [(10.0, 28.0)]),
        ]
        scenario = MachineScenario(
            loads=loads, mains=MAINS, duration=duration, sample_rate=FS, noise_rms=None, seed=2
        )
        aggregate, voltage, truth = compose_machine(scenario)
        report = disaggregate(aggregate, voltage)
        motor = [e for e in report.estimates if e.load_class == FSM_VARYING]
        assert len(motor) == 1
        p_true = truth.load_power["motor"]
        acc = 1 - np.sum(np.abs(motor[0].p_series - p_true)) / np.sum(np.abs(p_true))
        assert acc >= 0.9
        heater = [e for e in report.estimates if e.load_class == TWO_STATE]
        assert len(heater) == 1
        acc_h = 1 - np.sum(np.abs(heater[0].p_series - truth.load_power["heater"])) / np.sum(
            truth.load_power["heater"]
        )
        assert acc_h >= 0.98
