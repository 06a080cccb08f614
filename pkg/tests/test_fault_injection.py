import numpy as np
import pytest

from src.errors import DataError, InfeasiblePlanError
from src.fault_injection import (
    INSTANT_STD,
    AnomalyLabel,
    BiasType,
    InjectionKind,
    InjectionSpec,
    SchedulePlan,
    TimeType,
    build_labeled_dataset,
    inject_bias,
    inject_constant,
    inject_drift,
    inject_instant,
    load_plan,
    plan_schedule,
    read_labeled_csv,
    realized_rates,
    write_labeled_csv,
)
from src.trace_ingest import Trace


def _flat_trace(length, rng):
    return Trace(np.arange(float(length)), rng.normal(size=(length, 3)))


class TestTypes:
    def test_instant_has_duration_one(self):
        with pytest.raises(ValueError):
            InjectionSpec(InjectionKind.INSTANT, 25, 3, "latitude")
        assert InjectionSpec("instant", 25, 1, "latitude").bias_type is BiasType.NOISE

    def test_magnitude_positive(self):
        with pytest.raises(ValueError):
            InjectionSpec(InjectionKind.BIAS, 0, 3, "latitude")

    def test_label_consistency(self):
        with pytest.raises(ValueError):
            AnomalyLabel(True, BiasType.NONE, TimeType.TRANSIENT)
        with pytest.raises(ValueError):
            AnomalyLabel(False, BiasType.NOISE, TimeType.NONE)
        assert AnomalyLabel(True, "jump", "permanent").time_type is TimeType.PERMANENT


class TestInjectInstant:
    def test_pins_seeded_draw(self):
        modified, labels = inject_instant(np.zeros(5), 100, 2, np.random.default_rng(7))
        expected = 100 * np.random.default_rng(7).normal(0.0, INSTANT_STD)
        assert modified[2] == expected
        np.testing.assert_array_equal(np.delete(modified, 2), 0.0)
        assert labels[2] == AnomalyLabel(True, BiasType.NOISE, TimeType.TRANSIENT)
        assert labels.detect.sum() == 1

    def test_zero_scale_rejected(self, rng):
        with pytest.raises(ValueError):
            inject_instant(np.zeros(5), 0, 2, rng)

    def test_index_out_of_range(self, rng):
        with pytest.raises(IndexError):
            inject_instant(np.zeros(5), 25, 5, rng)

    def test_offset_std_matches_scale(self):
        rng = np.random.default_rng(0)
        offsets = [inject_instant(np.zeros(1), 25, 0, rng)[0][0] for _ in range(10_000)]
        assert np.std(offsets) == pytest.approx(2.5, rel=0.05)


class TestInjectConstant:
    def test_window_held_flat(self, rng):
        clean = rng.normal(size=20)
        modified, labels = inject_constant(clean, 5, 8, 3, rng)
        window = modified[8:11]
        assert np.all(window == window[0])
        assert 0 < window[0] - clean[7] < 5
        np.testing.assert_array_equal(modified[:8], clean[:8])
        np.testing.assert_array_equal(modified[11:], clean[11:])
        assert labels[9].bias_type is BiasType.JUMP

    def test_small_bound_approaches_preceding_value(self, rng):
        clean = np.arange(10.0)
        modified, _ = inject_constant(clean, 1e-6, 4, 3, rng)
        np.testing.assert_allclose(modified[4:7], clean[3], atol=1e-6)

    def test_needs_preceding_reading(self, rng):
        with pytest.raises(IndexError):
            inject_constant(np.zeros(5), 5, 0, 2, rng)

    def test_window_out_of_range(self, rng):
        with pytest.raises(IndexError):
            inject_constant(np.zeros(5), 5, 3, 3, rng)


class TestInjectBias:
    def test_additive_offset(self):
        clean = np.array([0.0, 1.0, 2.0, 3.0, 9.0])
        offset = np.random.default_rng(3).uniform(0.0, 5.0)
        modified, labels = inject_bias(clean, 5, 1, 3, np.random.default_rng(3))
        np.testing.assert_array_equal(modified[1:4], clean[1:4] + offset)
        assert modified[4] == 9.0
        np.testing.assert_array_equal(labels.detect, [0, 1, 1, 1, 0])

    def test_preserves_local_shape(self, rng):
        clean = rng.normal(size=50)
        modified, _ = inject_bias(clean, 5, 10, 20, rng)
        np.testing.assert_allclose(np.diff(modified[10:30]), np.diff(clean[10:30]), atol=1e-12)


class TestInjectDrift:
    def test_linspace_endpoints(self):
        clean = np.zeros(12)
        modified, labels = inject_drift(clean, 4, 1, 10)
        assert modified[1] == 0.0
        assert modified[10] == 4.0
        # first offset is zero, so that step stays normal
        assert labels.detect[1] == 0
        assert labels.detect[2:11].all()

    def test_two_points(self):
        modified, _ = inject_drift(np.ones(3), 4, 1, 2)
        np.testing.assert_array_equal(modified, [1.0, 1.0, 5.0])

    def test_offsets_are_linear(self, rng):
        clean = rng.normal(size=30)
        modified, _ = inject_drift(clean, 2, 5, 20)
        np.testing.assert_allclose(np.diff(modified[5:25] - clean[5:25], n=2), 0.0, atol=1e-12)

    def test_needs_two_steps(self):
        with pytest.raises(ValueError):
            inject_drift(np.zeros(5), 4, 1, 1)


class TestPlanSchedule:
    def test_zero_rates_give_empty_plan(self, rng):
        assert plan_schedule(1000, SchedulePlan(), rng) == []

    def test_rates_capped(self):
        with pytest.raises(DataError):
            SchedulePlan(rates={"latitude": {"transient": {"noise": 0.3, "jump": 0.3}}})

    def test_episodes_disjoint(self):
        plan = SchedulePlan.preset("mmitss")
        for seed in range(200):
            rng = np.random.default_rng(seed)
            episodes = plan_schedule(2000, plan, rng)
            for channel in ("latitude", "longitude"):
                spans = sorted(
                    (e.index, e.stop) for e in episodes if e.spec.channel == channel
                )
                assert all(stop <= start for (_, stop), (start, _) in zip(spans, spans[1:]))
                assert spans[-1][1] <= 2000

    def test_infeasible_length(self, rng):
        plan = SchedulePlan(rates={"latitude": {"transient": {"noise": 0.5}}})
        with pytest.raises(InfeasiblePlanError):
            plan_schedule(100, plan, rng)

    def test_mmitss_rates_within_half_point(self, rng):
        trace = _flat_trace(10_000, rng)
        plan = SchedulePlan.preset("mmitss")
        realized = realized_rates(build_labeled_dataset(trace, plan, seed=11))
        for channel in plan.channels():
            for time_type in ("transient", "intermittent", "permanent"):
                for bias in ("noise", "jump"):
                    target = plan.rate(channel, TimeType(time_type), BiasType(bias))
                    assert abs(realized[channel][time_type][bias] - target) <= 0.005

    def test_pinned_plan_uses_one_kind(self, rng):
        plan = SchedulePlan.for_injection("constant", 5, 10, rate=0.05)
        episodes = plan_schedule(5000, plan, rng)
        assert {e.spec.kind for e in episodes} == {InjectionKind.CONSTANT}
        assert {e.spec.duration for e in episodes} == {10}
        assert {e.time_type for e in episodes} == {TimeType.TRANSIENT}

    def test_long_pinned_drift_is_permanent(self):
        plan = SchedulePlan.for_injection("drift", 4, 20, rate=0.05)
        assert plan.rates["latitude"] == {"permanent": {"jump": 0.05}}


class TestBuildLabeledDataset:
    def test_deterministic(self, rng):
        trace = _flat_trace(3000, rng)
        plan = SchedulePlan.preset("zurich")
        first = build_labeled_dataset(trace, plan, seed=5)
        second = build_labeled_dataset(trace, plan, seed=5)
        for channel in first.channels:
            np.testing.assert_array_equal(first.corrupted[channel], second.corrupted[channel])
            np.testing.assert_array_equal(first.labels[channel].time, second.labels[channel].time)

    def test_zero_rate_plan_leaves_data_clean(self, rng):
        trace = _flat_trace(500, rng)
        labeled = build_labeled_dataset(trace, SchedulePlan(), seed=1)
        for channel in labeled.channels:
            np.testing.assert_array_equal(labeled.corrupted[channel], labeled.clean[channel])
        assert labeled.injected_channels == []

    def test_labels_match_changed_positions(self, labeled_dataset):
        for channel in labeled_dataset.channels:
            changed = labeled_dataset.corrupted[channel] != labeled_dataset.clean[channel]
            np.testing.assert_array_equal(changed, labeled_dataset.labels[channel].detect == 1)
        assert labeled_dataset.injected_channels == ["latitude", "longitude"]

    def test_every_time_type_present(self, labeled_dataset):
        times = set(labeled_dataset.labels["latitude"].time_names())
        assert times == {"none", "transient", "intermittent", "permanent"}

    def test_labeled_csv_keeps_everything(self, labeled_dataset, tmp_path):
        path = tmp_path / "labeled.csv"
        write_labeled_csv(labeled_dataset, path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:6] == [
            "timestamp", "latitude_clean", "latitude_corrupt",
            "latitude_detect", "latitude_bias", "latitude_time",
        ]
        loaded = read_labeled_csv(path)
        np.testing.assert_array_equal(loaded.corrupted["longitude"], labeled_dataset.corrupted["longitude"])
        np.testing.assert_array_equal(loaded.labels["longitude"].bias, labeled_dataset.labels["longitude"].bias)


def test_load_plan_file(tmp_path):
    path = tmp_path / "plan.yaml"
    path.write_text(
        "seed: 9\n"
        "pinned: {kind: instant, magnitude: 500, duration: 1, rate: 0.05, channels: [latitude]}\n"
    )
    plan, seed = load_plan(path)
    assert seed == 9
    assert plan.pinned.kind is InjectionKind.INSTANT
    assert plan.channels() == ["latitude"]
    assert SchedulePlan.from_dict(plan.to_dict()).to_dict() == plan.to_dict()


def test_preset_with_override():
    plan = SchedulePlan.from_dict({"preset": "mmitss", "rates": {"latitude": {"permanent": {"jump": 0.02}}}})
    assert plan.rate("latitude", TimeType.PERMANENT, BiasType.JUMP) == 0.02
    assert plan.rate("latitude", TimeType.PERMANENT, BiasType.NOISE) > 0
