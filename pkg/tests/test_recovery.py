import numpy as np
import pandas as pd
import pytest

from src.fault_injection import BiasType, TimeType, inject_constant
from src.recovery import (
    RecoveryAction,
    RecoveryModule,
    RecoveryOutput,
    recover,
    write_alert_log,
    write_recovery_csv,
)
from src.rema import RemaParams, rema_stream
from src.trace_ingest import CHANNELS, NormStats

IDENTITY = NormStats(CHANNELS, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
SCALED = NormStats(CHANNELS, (33.8, -112.1, 10.0), (0.01, 0.02, 3.0))
PARAMS = RemaParams(alpha=0.5, alpha_min=0.1, alpha_max=0.9, punish=0.1, reward=0.02, slide_size=8, sensitivity=3.0)


class TestRecover:
    def test_normal_reading_passes_through(self):
        out = recover(5.0, (False, BiasType.NONE), TimeType.NONE, 0.0, IDENTITY, "latitude")
        assert out == RecoveryOutput(5.0, RecoveryAction.PASSTHROUGH, TimeType.NONE, BiasType.NONE)

    def test_transient_replaced_with_ema(self):
        out = recover(9.0, (True, BiasType.JUMP), TimeType.TRANSIENT, 4.2, IDENTITY, "latitude")
        assert out.action is RecoveryAction.REPLACED
        assert out.value == 4.2

    def test_replacement_is_in_raw_units(self):
        out = recover(34.0, (True, BiasType.NOISE), TimeType.INTERMITTENT, 1.5, SCALED, "latitude")
        assert out.value == pytest.approx(33.8 + 1.5 * 0.01, rel=1e-12)
        assert out.bias_type is BiasType.NOISE

    def test_permanent_holds_last_trustworthy_value(self):
        out = recover(40.0, (True, BiasType.JUMP), TimeType.PERMANENT, 1.5, SCALED, "latitude", 33.81)
        assert out.action is RecoveryAction.ALERT
        assert out.value == 33.81

    def test_alert_requires_permanent(self):
        with pytest.raises(ValueError):
            RecoveryOutput(1.0, RecoveryAction.ALERT, TimeType.TRANSIENT, BiasType.JUMP)

    def test_jump_episodes_are_repaired(self):
        rng = np.random.default_rng(0)
        recovered_err, corrupted_err = [], []
        for _ in range(100):
            clean = np.sin(np.arange(120) / 20.0 + rng.uniform(0, 6)) + rng.normal(0, 0.01, 120)
            at = int(rng.integers(40, 100))
            corrupted, labels = inject_constant(clean, 5.0, at, 5, rng)
            outputs = rema_stream(corrupted, PARAMS)
            for t in np.flatnonzero(labels.detect):
                out = recover(corrupted[t], (True, BiasType.JUMP), TimeType.TRANSIENT,
                              outputs[t].ema_value, IDENTITY, "latitude")
                recovered_err.append(abs(out.value - clean[t]))
                corrupted_err.append(abs(corrupted[t] - clean[t]))
        assert len(corrupted_err) >= 100
        assert np.mean(recovered_err) < 0.5 * np.mean(corrupted_err)


class TestRecoveryModule:
    def _step(self, module, step, x, detect, time_type):
        bias = BiasType.JUMP if detect else BiasType.NONE
        return module.step(step, float(step), x, (detect, bias), time_type, 0.0, run_length=step)

    def test_one_alert_per_permanent_run(self):
        module = RecoveryModule("latitude", IDENTITY)
        actions = [self._step(module, 0, 1.0, False, TimeType.NONE).action]
        for step in range(1, 6):
            actions.append(self._step(module, step, 9.0, True, TimeType.PERMANENT).action)
        self._step(module, 6, 1.0, False, TimeType.NONE)
        self._step(module, 7, 9.0, True, TimeType.PERMANENT)

        assert actions[1:] == [RecoveryAction.ALERT] * 5
        assert [a.step for a in module.alerts] == [1, 7]
        # the held value is the last passthrough reading
        assert module.records[3].value == 1.0

    def test_streamwide_alerts_are_permanent(self):
        module = RecoveryModule("longitude", IDENTITY)
        rng = np.random.default_rng(1)
        kinds = [TimeType.NONE, TimeType.TRANSIENT, TimeType.INTERMITTENT, TimeType.PERMANENT]
        for step in range(200):
            time_type = kinds[int(rng.integers(4))]
            self._step(module, step, rng.normal(), time_type is not TimeType.NONE, time_type)
        assert len(module.records) == 200
        assert all(r.time_type == "permanent" for r in module.records if r.action == "alert")

    def test_logs_written(self, tmp_path):
        module = RecoveryModule("latitude", IDENTITY)
        self._step(module, 0, 1.0, False, TimeType.NONE)
        self._step(module, 1, 5.0, True, TimeType.PERMANENT)
        write_recovery_csv(module.records, tmp_path / "recovery.csv")
        write_alert_log(module.alerts, tmp_path / "alerts.csv")

        records = pd.read_csv(tmp_path / "recovery.csv")
        assert list(records.columns) == ["timestamp", "channel", "value", "action", "bias_type", "time_type"]
        assert list(records["action"]) == ["passthrough", "alert"]
        alerts = pd.read_csv(tmp_path / "alerts.csv")
        assert list(alerts.columns) == ["step", "timestamp", "channel", "run_length"]
        assert len(alerts) == 1
