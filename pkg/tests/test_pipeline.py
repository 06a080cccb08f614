import itertools
import math

import numpy as np
import pytest

from src.errors import DataError
from src.fault_injection import BIAS_TYPES, BiasType
from src.features import FEATURE_NAMES
from src.gru_net import GruModel
from src.pipeline import ModelBundle, StreamingPipeline, bench_latency, run_channel_batch
from src.synthetic import synthesize_trace
from src.trace_ingest import GpsReading, interpolate_missing, normalize
from tests.factories import FEED_WINDOW, REGRESSION_WINDOW, constant_detector, make_bundle


@pytest.fixture(scope="module")
def raw_trace():
    return interpolate_missing(synthesize_trace(200, seed=11, profile="zurich"))


@pytest.fixture(scope="module")
def normalized(raw_trace):
    return normalize(raw_trace)


def run_streaming(bundle, trace):
    pipeline = StreamingPipeline(bundle)
    outputs = [pipeline.process(reading) for reading in trace.readings]
    return pipeline, outputs


def run_batch(bundle, normalized_trace, channel):
    return run_channel_batch(bundle, normalized_trace.channel(channel), normalized_trace.timestamps, channel)


@pytest.mark.parametrize("flag", [False, True])
def test_streaming_matches_batch(raw_trace, normalized, flag):
    normalized_trace, stats = normalized
    bundle = make_bundle(stats, flag)
    pipeline, outputs = run_streaming(bundle, raw_trace)

    for channel in bundle.channels:
        batch = run_batch(bundle, normalized_trace, channel)
        streamed = [step[channel] for step in outputs]
        assert [o.action.value for o in streamed] == list(batch.actions)
        assert [o.bias_type for o in streamed] == [BIAS_TYPES[code] for code in batch.bias]
        np.testing.assert_allclose([o.value for o in streamed], batch.recovered, rtol=1e-12, atol=1e-9)
        assert [a.step for a in pipeline.alerts if a.channel == channel] == [a.step for a in batch.alerts]


def test_quiet_detector_passes_every_reading_through(raw_trace, normalized):
    _, stats = normalized
    pipeline, outputs = run_streaming(make_bundle(stats, flag=False), raw_trace)

    assert pipeline.alerts == []
    np.testing.assert_array_equal([step["latitude"].value for step in outputs], raw_trace.channel("latitude"))


def test_flagging_starts_after_warmup_and_alerts_once(normalized):
    normalized_trace, stats = normalized
    bundle = make_bundle(stats, flag=True)
    result = run_batch(bundle, normalized_trace, "latitude")

    first = REGRESSION_WINDOW + FEED_WINDOW - 1
    assert not result.detect[:first].any()
    assert result.detect[first:].all()
    # the run turns permanent once it reaches 20 points
    assert [a.step for a in result.alerts] == [first + 19]
    assert set(result.actions[first:first + 19]) == {"replaced"}
    assert set(result.actions[first + 19:]) == {"alert"}


def test_default_bias_is_used_without_a_bias_classifier(raw_trace, normalized):
    normalized_trace, stats = normalized
    bundle = make_bundle(stats, flag=True, default_bias=BiasType.NOISE)
    result = run_batch(bundle, normalized_trace, "longitude")
    _, outputs = run_streaming(bundle, raw_trace)

    assert result.bias_calls == 0
    assert set(result.bias[result.detect]) == {BIAS_TYPES.index(BiasType.NOISE)}
    assert outputs[-1]["longitude"].bias_type is BiasType.NOISE


def test_bias_classifier_is_consulted_on_flagged_windows(normalized):
    normalized_trace, stats = normalized
    bias_clf = constant_detector(flag=False, seed=1)  # class 0 -> noise
    result = run_batch(make_bundle(stats, flag=True, bias_clf=bias_clf), normalized_trace, "latitude")

    assert result.bias_calls == int(result.detect.sum())
    assert set(result.bias[result.detect]) == {BIAS_TYPES.index(BiasType.NOISE)}


def test_bundle_round_trip(tmp_path, normalized):
    normalized_trace, stats = normalized
    bundle = make_bundle(stats, flag=True, bias_clf=constant_detector(flag=True, seed=2))
    bundle.save(tmp_path / "bundle")
    loaded = ModelBundle.load(tmp_path / "bundle")

    assert loaded.name == "test"
    assert loaded.channels == ("latitude", "longitude")
    assert loaded.rema_params == bundle.rema_params
    assert loaded.window_config == bundle.window_config
    assert loaded.time_config == bundle.time_config
    assert loaded.bias_clf is not None
    assert loaded.warmup == REGRESSION_WINDOW

    expected = run_batch(bundle, normalized_trace, "latitude")
    actual = run_batch(loaded, normalized_trace, "latitude")
    np.testing.assert_array_equal(actual.actions, expected.actions)
    np.testing.assert_array_equal(actual.recovered, expected.recovered)


def test_bundle_without_bias_classifier_round_trip(tmp_path, normalized):
    _, stats = normalized
    make_bundle(stats, flag=False, default_bias=BiasType.NOISE).save(tmp_path)
    loaded = ModelBundle.load(tmp_path)

    assert loaded.bias_clf is None
    assert loaded.default_bias is BiasType.NOISE


def test_load_without_manifest(tmp_path):
    with pytest.raises(DataError):
        ModelBundle.load(tmp_path)


def test_unknown_channel_rejected(normalized):
    _, stats = normalized
    bundle = make_bundle(stats, flag=False)
    with pytest.raises(DataError):
        ModelBundle(
            detector=bundle.detector, rema_params=bundle.rema_params, norm_stats=stats,
            scaler=bundle.scaler, channels=("latitude", "heading"),
        )


def test_missing_value_in_stream(normalized):
    _, stats = normalized
    pipeline = StreamingPipeline(make_bundle(stats, flag=False))
    with pytest.raises(DataError):
        pipeline.process(GpsReading(0.0, math.nan, 8.5))


def test_reset_restarts_every_channel(raw_trace, normalized):
    _, stats = normalized
    pipeline, first = run_streaming(make_bundle(stats, flag=True), raw_trace)
    pipeline.reset()
    second = [pipeline.process(reading) for reading in raw_trace.readings]

    assert [s["latitude"].action for s in second] == [f["latitude"].action for f in first]
    assert len(pipeline.records) == 2 * len(raw_trace)


def test_bench_latency_counts_every_timed_point(normalized):
    _, stats = normalized
    pipeline = StreamingPipeline(make_bundle(stats, flag=False))
    ticks = itertools.count()

    stats_out = bench_latency(pipeline, [GpsReading(0.0, 47.37, 8.54)], repetitions=3, clock=lambda: float(next(ticks)))

    assert stats_out.samples == 3
    assert stats_out.median_s == 1.0
    assert stats_out.p99_s == 1.0
    assert stats_out.totals_s == (3.0, 3.0, 3.0)
    assert stats_out.to_dict()["total_s"] == 3.0


def test_bench_latency_rejects_bad_arguments(normalized):
    _, stats = normalized
    pipeline = StreamingPipeline(make_bundle(stats, flag=False))
    with pytest.raises(DataError):
        bench_latency(pipeline, [])
    with pytest.raises(ValueError):
        bench_latency(pipeline, [GpsReading(0.0, 47.37, 8.54)], repetitions=2)


def test_streaming_latency_stays_under_a_millisecond(normalized):
    _, stats = normalized
    base = make_bundle(stats, flag=False)
    detector = GruModel.initialize(
        len(FEATURE_NAMES), 10, hidden=(32, 16), rng=np.random.default_rng(0), feature_names=FEATURE_NAMES
    )
    bundle = ModelBundle(
        detector=detector, rema_params=base.rema_params, norm_stats=stats,
        scaler=base.scaler, window_config=base.window_config,
    )
    stream = interpolate_missing(synthesize_trace(400, seed=12, profile="zurich")).readings

    latency = bench_latency(StreamingPipeline(bundle), stream, repetitions=3)

    assert latency.samples == 3 * 400
    assert latency.median_s < 1e-3
