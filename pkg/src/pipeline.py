"""
End-to-end detection pipeline: normalize -> REMA -> features -> GRU detector
-> bias classifier -> time classifier -> recovery.

ModelBundle groups every trained artifact a pipeline needs and is stored as
one directory. StreamingPipeline processes one reading at a time;
run_channel_batch evaluates a whole channel with the vectorized paths and
produces the same labels.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from src.errors import DataError
from src.fault_injection import BIAS_TYPES, TIME_TYPES, BiasType
from src.features import (
    FeatureScaler,
    StreamingFeatureExtractor,
    WindowConfig,
    assemble_frames,
)
from src.gru_net import GruModel, StreamingPredictor, check_schema, load_model, predict_stream, save_model
from src.recovery import AlertEvent, RecoveryModule, RecoveryOutput, RecoveryRecord
from src.rema import RemaDetector, RemaParams, load_rema_params, outputs_to_arrays, rema_stream, save_rema_params
from src.time_classifier import TimeClassifier, TimeClassifierConfig
from src.trace_ingest import CHANNELS, GpsReading, NormStats, load_norm_stats, save_norm_stats

logger = logging.getLogger(__name__)

BUNDLE_FILES = {
    "manifest": "bundle.yaml",
    "detector": "detector.npz",
    "bias_classifier": "bias_classifier.npz",
    "rema": "rema.yaml",
    "norm_stats": "norm_stats.csv",
    "scaler": "feature_scaler.csv",
}


@dataclass
class ModelBundle:
    """Trained artifacts for one deployment"""
    detector: GruModel
    rema_params: RemaParams
    norm_stats: NormStats
    scaler: FeatureScaler
    window_config: WindowConfig = field(default_factory=WindowConfig)
    time_config: TimeClassifierConfig = field(default_factory=TimeClassifierConfig)
    bias_clf: Optional[GruModel] = None
    default_bias: BiasType = BiasType.JUMP  # used when no bias classifier was trained
    channels: Tuple[str, ...] = ("latitude", "longitude")
    name: str = "default"

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.default_bias = BiasType(self.default_bias)
        check_schema(self.detector, self.bias_clf)
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise DataError(f"Bundle names unknown channel(s): {', '.join(sorted(unknown))}")

    @property
    def window(self) -> int:
        return self.detector.window

    @property
    def warmup(self) -> int:
        return max(self.window_config.regression_window, self.rema_params.slide_size)

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(self.detector, directory / BUNDLE_FILES["detector"])
        if self.bias_clf is not None:
            save_model(self.bias_clf, directory / BUNDLE_FILES["bias_classifier"])
        save_rema_params(self.rema_params, directory / BUNDLE_FILES["rema"])
        save_norm_stats(self.norm_stats, directory / BUNDLE_FILES["norm_stats"])
        self.scaler.save(directory / BUNDLE_FILES["scaler"])
        manifest = {
            "name": self.name,
            "channels": list(self.channels),
            "default_bias": self.default_bias.value,
            "window_config": {
                "regression_window": self.window_config.regression_window,
                "stat_window": self.window_config.stat_window,
                "rsi_window": self.window_config.rsi_window,
            },
            "time_classifier": {
                "transient_max": self.time_config.transient_max,
                "intermittent_min_episodes": self.time_config.intermittent_min_episodes,
                "horizon": self.time_config.horizon,
                "permanent_min": self.time_config.permanent_min,
            },
            "schema_hash": self.detector.schema_hash,
        }
        with open(directory / BUNDLE_FILES["manifest"], "w") as f:
            yaml.safe_dump(manifest, f, sort_keys=False)
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "ModelBundle":
        directory = Path(directory)
        manifest_path = directory / BUNDLE_FILES["manifest"]
        if not manifest_path.is_file():
            raise DataError(f"{directory}: no {BUNDLE_FILES['manifest']}")
        with open(manifest_path, "r") as f:
            manifest = yaml.safe_load(f) or {}

        bias_path = directory / BUNDLE_FILES["bias_classifier"]
        rema_params, _ = load_rema_params(directory / BUNDLE_FILES["rema"])
        return cls(
            detector=load_model(directory / BUNDLE_FILES["detector"]),
            bias_clf=load_model(bias_path) if bias_path.is_file() else None,
            rema_params=rema_params,
            norm_stats=load_norm_stats(directory / BUNDLE_FILES["norm_stats"]),
            scaler=FeatureScaler.load(directory / BUNDLE_FILES["scaler"]),
            window_config=WindowConfig(**manifest.get("window_config", {})),
            time_config=TimeClassifierConfig(**manifest.get("time_classifier", {})),
            default_bias=manifest.get("default_bias", BiasType.JUMP.value),
            channels=tuple(manifest.get("channels", ("latitude", "longitude"))),
            name=manifest.get("name", directory.name),
        )


class ChannelStream:
    """All per-point state for one channel of one stream"""

    def __init__(self, bundle: ModelBundle, channel: str):
        self.bundle = bundle
        self.channel = channel
        self.rema = RemaDetector(bundle.rema_params)
        self.features = StreamingFeatureExtractor(bundle.window_config, bundle.scaler)
        self.predictor = StreamingPredictor(bundle.detector, bundle.bias_clf)
        self.classifier = TimeClassifier(bundle.time_config)
        self.recovery = RecoveryModule(channel, bundle.norm_stats)
        self._step = 0

    def step(self, timestamp: float, x: float) -> RecoveryOutput:
        x_norm = self.bundle.norm_stats.normalize_value(x, self.channel)
        rema_out = self.rema.step(x_norm)
        frame = self.features.push(x_norm, rema_out)

        detect, bias = False, BiasType.NONE
        if frame is not None:
            prediction = self.predictor.push(frame)
            detect = prediction.detect
            if detect:
                bias = prediction.bias_type if self.bundle.bias_clf is not None else self.bundle.default_bias

        time_type = self.classifier.step(detect)
        output = self.recovery.step(
            self._step, timestamp, x, (detect, bias), time_type, self.rema.state, self.classifier.run_length
        )
        self._step += 1
        return output


class StreamingPipeline:
    """Per-reading pipeline over the bundle's channels; single writer"""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        self.reset()

    def reset(self) -> None:
        self.streams = {channel: ChannelStream(self.bundle, channel) for channel in self.bundle.channels}

    def process(self, reading: GpsReading) -> Dict[str, RecoveryOutput]:
        outputs = {}
        for channel, stream in self.streams.items():
            value = getattr(reading, channel)
            if not np.isfinite(value):
                raise DataError(f"Reading at {reading.timestamp} has no {channel} value")
            outputs[channel] = stream.step(reading.timestamp, value)
        return outputs

    @property
    def alerts(self) -> List[AlertEvent]:
        return [alert for stream in self.streams.values() for alert in stream.recovery.alerts]

    @property
    def records(self) -> List[RecoveryRecord]:
        return [record for stream in self.streams.values() for record in stream.recovery.records]


@dataclass
class ChannelResult:
    """Full-length per-step outputs for one channel"""
    channel: str
    rema: Dict[str, np.ndarray]
    frames: np.ndarray
    detect: np.ndarray
    bias: np.ndarray  # codes into BIAS_TYPES
    time: np.ndarray  # codes into TIME_TYPES
    recovered: np.ndarray
    actions: np.ndarray
    records: List[RecoveryRecord]
    alerts: List[AlertEvent]
    bias_calls: int = 0


def run_channel_batch(
    bundle: ModelBundle, values: np.ndarray, timestamps: np.ndarray, channel: str
) -> ChannelResult:
    """
    Evaluate one normalized channel. Steps before the first full feed window
    are normal. Time typing and recovery run sequentially over the detections.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    R = bundle.window_config.regression_window

    rema = outputs_to_arrays(rema_stream(values, bundle.rema_params))
    frames = assemble_frames(values, rema, bundle.window_config, bundle.scaler)
    predictions = predict_stream(bundle.detector, bundle.bias_clf, frames.values)

    detect = np.zeros(n, dtype=bool)
    bias = np.zeros(n, dtype=np.int8)
    detect[R:] = predictions.detect
    bias[R:] = predictions.bias
    if bundle.bias_clf is None:
        bias[detect] = BIAS_TYPES.index(bundle.default_bias)

    classifier = TimeClassifier(bundle.time_config)
    recovery = RecoveryModule(channel, bundle.norm_stats)
    time_codes = np.zeros(n, dtype=np.int8)
    recovered = np.empty(n)
    actions = np.empty(n, dtype=object)
    for i in range(n):
        time_type = classifier.step(detect[i])
        time_codes[i] = TIME_TYPES.index(time_type)
        x_raw = bundle.norm_stats.denormalize_value(values[i], channel)
        output = recovery.step(
            i, float(timestamps[i]), x_raw, (bool(detect[i]), BIAS_TYPES[bias[i]]), time_type,
            float(rema["ema_value"][i]), classifier.run_length,
        )
        recovered[i] = output.value
        actions[i] = output.action.value

    return ChannelResult(
        channel=channel,
        rema=rema,
        frames=frames.values,
        detect=detect,
        bias=bias,
        time=time_codes,
        recovered=recovered,
        actions=actions,
        records=recovery.records,
        alerts=recovery.alerts,
        bias_calls=predictions.bias_calls,
    )


@dataclass(frozen=True)
class LatencyStats:
    samples: int
    median_s: float
    p99_s: float
    mean_s: float
    totals_s: Tuple[float, ...]  # wall clock per repetition

    def to_dict(self) -> Dict[str, float]:
        return {
            "samples": self.samples,
            "median_s": self.median_s,
            "p99_s": self.p99_s,
            "mean_s": self.mean_s,
            "total_s": float(np.mean(self.totals_s)),
        }


def bench_latency(
    pipeline: StreamingPipeline,
    stream: Sequence[GpsReading],
    repetitions: int = 3,
    clock: Callable[[], float] = time.perf_counter,
) -> LatencyStats:
    """
    Per-point wall-clock latency of the full pipeline, excluding I/O.

    One untimed pass warms the pipeline up; every timed repetition starts
    from fresh stream state.
    """
    if not stream:
        raise DataError("Latency benchmark needs a non-empty stream")
    if repetitions < 3:
        raise ValueError("Latency benchmark needs at least 3 repetitions")

    pipeline.reset()
    for reading in stream:
        pipeline.process(reading)

    samples: List[float] = []
    totals: List[float] = []
    for _ in range(repetitions):
        pipeline.reset()
        started = clock()
        for reading in stream:
            t0 = clock()
            pipeline.process(reading)
            samples.append(clock() - t0)
        totals.append(clock() - started)

    timings = np.asarray(samples)
    stats = LatencyStats(
        samples=len(timings),
        median_s=float(np.median(timings)),
        p99_s=float(np.percentile(timings, 99)),
        mean_s=float(timings.mean()),
        totals_s=tuple(totals),
    )
    logger.info(
        "[Bench] %d points x %d reps: median %.1f us, p99 %.1f us",
        len(stream), repetitions, stats.median_s * 1e6, stats.p99_s * 1e6,
    )
    return stats
