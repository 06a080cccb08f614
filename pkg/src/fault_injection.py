"""
Fault injection: labeled synthetic anomalies for training and evaluation.

Injections operate on normalized series. Four kinds are supported:
- instant:  value[at] += k * N(0, 0.01)                  (noise)
- constant: window held at series[at-1] + U(0, u)        (jump, stuck-at)
- bias:     window shifted by U(0, u)                    (jump, shape kept)
- drift:    window shifted by linspace(0, e, d)          (jump)

Positions whose value an injection leaves unchanged are not labeled, so
corrupted != clean exactly where detect == 1.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from src.errors import DataError, InfeasiblePlanError, ZeroOffsetError
from src.trace_ingest import CHANNELS, FLOAT_FORMAT, Trace

logger = logging.getLogger(__name__)

INSTANT_STD = math.sqrt(0.01)  # N(0, 0.01) read as variance 0.01
MIN_OFFSET = 1e-9
MAX_EPISODE_REDRAWS = 10


class InjectionKind(str, Enum):
    INSTANT = "instant"
    CONSTANT = "constant"
    BIAS = "bias"
    DRIFT = "drift"


class BiasType(str, Enum):
    NONE = "none"
    NOISE = "noise"
    JUMP = "jump"


class TimeType(str, Enum):
    NONE = "none"
    TRANSIENT = "transient"
    INTERMITTENT = "intermittent"
    PERMANENT = "permanent"


BIAS_TYPES: Tuple[BiasType, ...] = (BiasType.NONE, BiasType.NOISE, BiasType.JUMP)
TIME_TYPES: Tuple[TimeType, ...] = (
    TimeType.NONE, TimeType.TRANSIENT, TimeType.INTERMITTENT, TimeType.PERMANENT
)


@dataclass(frozen=True)
class InjectionSpec:
    """One injection episode's kind, magnitude, duration and channel"""
    kind: InjectionKind
    magnitude: float  # k for instant, u for constant/bias, e for drift
    duration: int
    channel: str

    def __post_init__(self):
        object.__setattr__(self, "kind", InjectionKind(self.kind))
        if not self.magnitude > 0:
            raise ValueError(f"Injection magnitude must be positive, got {self.magnitude}")
        if self.duration < 1:
            raise ValueError(f"Injection duration must be positive, got {self.duration}")
        if self.kind is InjectionKind.INSTANT and self.duration != 1:
            raise ValueError("Instant injections have duration 1")
        if self.kind is InjectionKind.DRIFT and self.duration < 2:
            raise ValueError("Drift injections need duration >= 2")

    @property
    def bias_type(self) -> BiasType:
        return BiasType.NOISE if self.kind is InjectionKind.INSTANT else BiasType.JUMP

    @property
    def labeled_points(self) -> int:
        """Points the injection changes; a drift's first offset is zero"""
        return self.duration - 1 if self.kind is InjectionKind.DRIFT else self.duration


@dataclass(frozen=True)
class AnomalyLabel:
    detect: bool
    bias_type: BiasType = BiasType.NONE
    time_type: TimeType = TimeType.NONE

    def __post_init__(self):
        object.__setattr__(self, "bias_type", BiasType(self.bias_type))
        object.__setattr__(self, "time_type", TimeType(self.time_type))
        normal = not self.detect
        if normal != (self.bias_type is BiasType.NONE) or normal != (self.time_type is TimeType.NONE):
            raise ValueError(
                f"Inconsistent label: detect={self.detect}, bias={self.bias_type.value}, "
                f"time={self.time_type.value}"
            )


NORMAL = AnomalyLabel(False)


@dataclass
class ChannelLabels:
    """Per-step labels of one channel as parallel int8 code arrays"""
    detect: np.ndarray
    bias: np.ndarray  # index into BIAS_TYPES
    time: np.ndarray  # index into TIME_TYPES

    @classmethod
    def normal(cls, length: int) -> "ChannelLabels":
        return cls(
            detect=np.zeros(length, dtype=np.int8),
            bias=np.zeros(length, dtype=np.int8),
            time=np.zeros(length, dtype=np.int8),
        )

    def __len__(self) -> int:
        return int(self.detect.shape[0])

    def __getitem__(self, index: int) -> AnomalyLabel:
        return AnomalyLabel(
            bool(self.detect[index]), BIAS_TYPES[self.bias[index]], TIME_TYPES[self.time[index]]
        )

    def mark(self, positions: np.ndarray, label: AnomalyLabel) -> "ChannelLabels":
        marked = ChannelLabels(self.detect.copy(), self.bias.copy(), self.time.copy())
        marked.detect[positions] = int(label.detect)
        marked.bias[positions] = BIAS_TYPES.index(label.bias_type)
        marked.time[positions] = TIME_TYPES.index(label.time_type)
        return marked

    def merge(self, other: "ChannelLabels") -> "ChannelLabels":
        """Overlay the anomalous steps of other onto these labels"""
        hit = other.detect == 1
        return ChannelLabels(
            np.where(hit, other.detect, self.detect).astype(np.int8),
            np.where(hit, other.bias, self.bias).astype(np.int8),
            np.where(hit, other.time, self.time).astype(np.int8),
        )

    def slice(self, start: int, stop: int) -> "ChannelLabels":
        return ChannelLabels(
            self.detect[start:stop].copy(), self.bias[start:stop].copy(), self.time[start:stop].copy()
        )

    def bias_names(self) -> np.ndarray:
        return np.array([b.value for b in BIAS_TYPES], dtype=object)[self.bias]

    def time_names(self) -> np.ndarray:
        return np.array([t.value for t in TIME_TYPES], dtype=object)[self.time]


def _check_window(length: int, at: int, duration: int) -> None:
    if at < 0 or duration < 1 or at + duration > length:
        raise IndexError(f"Injection window [{at}, {at + duration}) outside series of length {length}")


def _labels_for_change(
    original: np.ndarray, modified: np.ndarray, start: int, stop: int, label: AnomalyLabel
) -> ChannelLabels:
    window = np.arange(start, stop)
    changed = window[modified[start:stop] != original[start:stop]]
    return ChannelLabels.normal(len(original)).mark(changed, label)


def _draw_uniform(rng: np.random.Generator, bound: float) -> float:
    """U(0, bound) offset, resampled once when it would not move the reading"""
    offset = float(rng.uniform(0.0, bound))
    if offset < MIN_OFFSET:
        offset = float(rng.uniform(0.0, bound))
        if offset < MIN_OFFSET:
            raise ZeroOffsetError(f"Uniform(0, {bound}) drew {offset} twice below {MIN_OFFSET}")
    return offset


def inject_instant(
    series: Sequence[float],
    scale: float,
    at: int,
    rng: np.random.Generator,
    time_type: TimeType = TimeType.TRANSIENT,
) -> Tuple[np.ndarray, ChannelLabels]:
    """Add k * N(0, 0.01) to one reading"""
    original = np.asarray(series, dtype=np.float64)
    _check_window(len(original), at, 1)
    if not scale > 0:
        raise ValueError(f"Instant injection scale must be positive, got {scale}")

    offset = scale * float(rng.normal(0.0, INSTANT_STD))
    if abs(offset) < MIN_OFFSET:
        offset = scale * float(rng.normal(0.0, INSTANT_STD))
        if abs(offset) < MIN_OFFSET:
            raise ZeroOffsetError(f"Instant draw at {at} twice below {MIN_OFFSET}")

    modified = original.copy()
    modified[at] += offset
    label = AnomalyLabel(True, BiasType.NOISE, time_type)
    return modified, _labels_for_change(original, modified, at, at + 1, label)


def inject_constant(
    series: Sequence[float],
    bound: float,
    at: int,
    duration: int,
    rng: np.random.Generator,
    time_type: TimeType = TimeType.TRANSIENT,
) -> Tuple[np.ndarray, ChannelLabels]:
    """Hold the window flat at the preceding reading plus one U(0, u) offset"""
    original = np.asarray(series, dtype=np.float64)
    _check_window(len(original), at, duration)
    if at == 0:
        raise IndexError("Constant injection needs a preceding reading (at >= 1)")
    if not bound > 0:
        raise ValueError(f"Constant injection bound must be positive, got {bound}")

    level = original[at - 1] + _draw_uniform(rng, bound)
    modified = original.copy()
    modified[at:at + duration] = level
    label = AnomalyLabel(True, BiasType.JUMP, time_type)
    return modified, _labels_for_change(original, modified, at, at + duration, label)


def inject_bias(
    series: Sequence[float],
    bound: float,
    at: int,
    duration: int,
    rng: np.random.Generator,
    time_type: TimeType = TimeType.TRANSIENT,
) -> Tuple[np.ndarray, ChannelLabels]:
    """Shift the window by one U(0, u) offset, keeping its local shape"""
    original = np.asarray(series, dtype=np.float64)
    _check_window(len(original), at, duration)
    if not bound > 0:
        raise ValueError(f"Bias injection bound must be positive, got {bound}")

    offset = _draw_uniform(rng, bound)
    modified = original.copy()
    modified[at:at + duration] += offset
    label = AnomalyLabel(True, BiasType.JUMP, time_type)
    return modified, _labels_for_change(original, modified, at, at + duration, label)


def inject_drift(
    series: Sequence[float],
    endpoint: float,
    at: int,
    duration: int,
    time_type: TimeType = TimeType.TRANSIENT,
) -> Tuple[np.ndarray, ChannelLabels]:
    """Add offsets linearly spaced from 0 to e (inclusive) over the window"""
    original = np.asarray(series, dtype=np.float64)
    if duration < 2:
        raise ValueError(f"Drift injection needs duration >= 2, got {duration}")
    _check_window(len(original), at, duration)
    if not endpoint > 0:
        raise ValueError(f"Drift endpoint must be positive, got {endpoint}")

    modified = original.copy()
    modified[at:at + duration] += np.linspace(0.0, endpoint, duration)
    label = AnomalyLabel(True, BiasType.JUMP, time_type)
    return modified, _labels_for_change(original, modified, at, at + duration, label)


@dataclass(frozen=True)
class PlannedEpisode:
    spec: InjectionSpec
    index: int
    time_type: TimeType

    @property
    def stop(self) -> int:
        return self.index + self.spec.duration


@dataclass(frozen=True)
class PinnedInjection:
    """A single injection-grid row: every episode uses this kind, magnitude and duration"""
    kind: InjectionKind
    magnitude: float
    duration: int

    def __post_init__(self):
        object.__setattr__(self, "kind", InjectionKind(self.kind))


# Published per-feature time-type percentages and per-time-type noise/jump percentages
TABLE_PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "mmitss": {
        "features": {
            "latitude": {"transient": 3.68, "intermittent": 3.27, "permanent": 3.24},
            "longitude": {"transient": 3.62, "intermittent": 3.28, "permanent": 3.21},
        },
        "bias": {
            "transient": {"noise": 4.38, "jump": 2.92},
            "intermittent": {"noise": 3.92, "jump": 2.63},
            "permanent": {"noise": 3.81, "jump": 2.64},
        },
    },
    "zurich": {
        "features": {
            "latitude": {"transient": 3.81, "intermittent": 3.18, "permanent": 3.42},
            "longitude": {"transient": 3.48, "intermittent": 3.33, "permanent": 3.22},
        },
        "bias": {
            "transient": {"noise": 4.34, "jump": 2.96},
            "intermittent": {"noise": 3.89, "jump": 2.62},
            "permanent": {"noise": 4.00, "jump": 2.64},
        },
    },
}

Rates = Dict[str, Dict[str, Dict[str, float]]]  # channel -> time type -> bias type -> fraction


@dataclass
class SchedulePlan:
    """Target anomaly rates per channel and the episode shape parameters"""
    rates: Rates = field(default_factory=dict)
    min_gap: int = 10
    transient_max: int = 2
    intermittent_episodes: int = 3
    intermittent_spacing: Tuple[int, int] = (3, 12)
    horizon: int = 50
    permanent_length: Tuple[int, int] = (20, 40)
    noise_scale: float = 100.0
    jump_bound: float = 5.0
    drift_endpoint: float = 4.0
    jump_kinds: Tuple[str, ...] = ("constant", "bias", "drift")
    pinned: Optional[PinnedInjection] = None

    def __post_init__(self):
        self.intermittent_spacing = tuple(self.intermittent_spacing)
        self.permanent_length = tuple(self.permanent_length)
        self.jump_kinds = tuple(self.jump_kinds)
        if isinstance(self.pinned, dict):
            self.pinned = PinnedInjection(**self.pinned)
        self.validate()

    @property
    def permanent_min(self) -> int:
        return self.permanent_length[0]

    def validate(self) -> None:
        for channel, by_time in self.rates.items():
            if channel not in CHANNELS:
                raise DataError(f"Plan names unknown channel '{channel}'")
            total = 0.0
            for time_name, by_bias in by_time.items():
                time_type = TimeType(time_name)
                if time_type is TimeType.NONE:
                    raise DataError("Plan rates cannot target time type 'none'")
                for bias_name, rate in by_bias.items():
                    if BiasType(bias_name) is BiasType.NONE:
                        raise DataError("Plan rates cannot target bias type 'none'")
                    if rate < 0:
                        raise DataError(f"Negative rate for {channel}/{time_name}/{bias_name}")
                    total += rate
            if total > 0.5:
                raise DataError(f"Channel '{channel}' target rates sum to {total:.4f} > 0.5")

        if self.min_gap < 1:
            raise DataError("min_gap must be at least 1")
        if self.transient_max < 1 or self.intermittent_episodes < 1:
            raise DataError("transient_max and intermittent_episodes must be positive")
        low, high = self.intermittent_spacing
        if not 1 <= low <= high:
            raise DataError(f"Invalid intermittent spacing {self.intermittent_spacing}")
        span = self.intermittent_episodes * max(self.transient_max, 2) + (self.intermittent_episodes - 1) * high
        if span > self.horizon:
            raise DataError(f"Intermittent groups span up to {span} steps, beyond horizon {self.horizon}")
        low, high = self.permanent_length
        if not 1 <= low <= high:
            raise DataError(f"Invalid permanent length range {self.permanent_length}")
        for kind in self.jump_kinds:
            if InjectionKind(kind) is InjectionKind.INSTANT:
                raise DataError("jump_kinds cannot include 'instant'")

    def channels(self) -> List[str]:
        return [c for c in CHANNELS if c in self.rates]

    def rate(self, channel: str, time_type: TimeType, bias_type: BiasType) -> float:
        return self.rates.get(channel, {}).get(time_type.value, {}).get(bias_type.value, 0.0)

    @classmethod
    def from_table(
        cls,
        feature_rates: Dict[str, Dict[str, float]],
        bias_rates: Dict[str, Dict[str, float]],
        **kwargs,
    ) -> "SchedulePlan":
        """
        Build per-channel targets from percentage tables.

        feature_rates: channel -> time type -> percent of points
        bias_rates: time type -> {"noise": percent, "jump": percent}, split across channels
        """
        rates: Rates = {}
        for channel, by_time in feature_rates.items():
            rates[channel] = {}
            for time_name, percent in by_time.items():
                split = bias_rates[time_name]
                noise_share = split["noise"] / (split["noise"] + split["jump"])
                rates[channel][time_name] = {
                    "noise": percent / 100.0 * noise_share,
                    "jump": percent / 100.0 * (1.0 - noise_share),
                }
        return cls(rates=rates, **kwargs)

    @classmethod
    def preset(cls, name: str, **kwargs) -> "SchedulePlan":
        if name not in TABLE_PRESETS:
            raise DataError(f"Unknown plan preset '{name}', expected one of {', '.join(TABLE_PRESETS)}")
        table = TABLE_PRESETS[name]
        return cls.from_table(table["features"], table["bias"], **kwargs)

    @classmethod
    def for_injection(
        cls,
        kind: Union[str, InjectionKind],
        magnitude: float,
        duration: int,
        rate: float,
        channels: Sequence[str] = ("latitude", "longitude"),
        **kwargs,
    ) -> "SchedulePlan":
        """Plan for one injection-grid row at the given per-channel anomaly rate"""
        pinned = PinnedInjection(InjectionKind(kind), float(magnitude), int(duration))
        bias = BiasType.NOISE if pinned.kind is InjectionKind.INSTANT else BiasType.JUMP
        permanent_min = tuple(kwargs.get("permanent_length", (20, 40)))[0]
        time_type = TimeType.PERMANENT if duration >= permanent_min else TimeType.TRANSIENT
        rates = {channel: {time_type.value: {bias.value: float(rate)}} for channel in channels}
        return cls(rates=rates, pinned=pinned, **kwargs)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SchedulePlan":
        data = dict(data or {})
        preset = data.pop("preset", None)
        data.pop("seed", None)
        pinned = data.pop("pinned", None)
        if pinned and "rate" in pinned:
            pinned = dict(pinned)
            rate = pinned.pop("rate")
            channels = pinned.pop("channels", ("latitude", "longitude"))
            return cls.for_injection(rate=rate, channels=channels, **pinned, **data)
        if pinned:
            data["pinned"] = PinnedInjection(**pinned)
        if preset:
            overrides = data.pop("rates", None)
            plan = cls.preset(preset, **data)
            if overrides:
                for channel, by_time in overrides.items():
                    for time_name, by_bias in by_time.items():
                        plan.rates.setdefault(channel, {}).setdefault(time_name, {}).update(by_bias)
                plan.validate()
            return plan
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "rates": self.rates,
            "min_gap": self.min_gap,
            "transient_max": self.transient_max,
            "intermittent_episodes": self.intermittent_episodes,
            "intermittent_spacing": list(self.intermittent_spacing),
            "horizon": self.horizon,
            "permanent_length": list(self.permanent_length),
            "noise_scale": self.noise_scale,
            "jump_bound": self.jump_bound,
            "drift_endpoint": self.drift_endpoint,
            "jump_kinds": list(self.jump_kinds),
        }
        if self.pinned:
            data["pinned"] = {
                "kind": self.pinned.kind.value,
                "magnitude": self.pinned.magnitude,
                "duration": self.pinned.duration,
            }
        return data


def load_plan(path: Union[str, Path]) -> Tuple[SchedulePlan, Optional[int]]:
    """Load a plan YAML file; returns the plan and its seed (if any)"""
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    seed = data.get("seed")
    return SchedulePlan.from_dict(data), (int(seed) if seed is not None else None)


@dataclass
class _Block:
    """Episodes that are laid out together; offsets are relative to the block start"""
    episodes: List[Tuple[int, InjectionSpec, TimeType]]
    length: int
    points: int


def _jump_spec(plan: SchedulePlan, channel: str, duration: int, rng: np.random.Generator) -> InjectionSpec:
    kind = InjectionKind(plan.jump_kinds[int(rng.integers(len(plan.jump_kinds)))])
    if kind is InjectionKind.DRIFT:
        return InjectionSpec(kind, plan.drift_endpoint, max(duration, 2), channel)
    return InjectionSpec(kind, plan.jump_bound, duration, channel)


def _episode_spec(
    plan: SchedulePlan, channel: str, bias: BiasType, duration: int, rng: np.random.Generator
) -> InjectionSpec:
    if plan.pinned:
        return InjectionSpec(plan.pinned.kind, plan.pinned.magnitude, plan.pinned.duration, channel)
    if bias is BiasType.NOISE:
        return InjectionSpec(InjectionKind.INSTANT, plan.noise_scale, 1, channel)
    return _jump_spec(plan, channel, duration, rng)


def _draw_block(
    plan: SchedulePlan, channel: str, time_type: TimeType, bias: BiasType, rng: np.random.Generator
) -> _Block:
    episodes: List[Tuple[int, InjectionSpec, TimeType]] = []

    if time_type is TimeType.PERMANENT and not plan.pinned:
        length = int(rng.integers(plan.permanent_length[0], plan.permanent_length[1] + 1))
        if bias is BiasType.NOISE:
            # a permanent noise fault is a run of back-to-back point outliers
            spec = InjectionSpec(InjectionKind.INSTANT, plan.noise_scale, 1, channel)
            episodes = [(offset, spec, time_type) for offset in range(length)]
        else:
            episodes = [(0, _jump_spec(plan, channel, length, rng), time_type)]
    elif time_type is TimeType.INTERMITTENT:
        offset = 0
        for i in range(plan.intermittent_episodes):
            if i:
                offset += int(rng.integers(plan.intermittent_spacing[0], plan.intermittent_spacing[1] + 1))
            duration = int(rng.integers(1, plan.transient_max + 1))
            spec = _episode_spec(plan, channel, bias, duration, rng)
            episodes.append((offset, spec, time_type))
            offset += spec.duration
    else:
        duration = int(rng.integers(1, plan.transient_max + 1))
        episodes = [(0, _episode_spec(plan, channel, bias, duration, rng), time_type)]

    length = max(offset + spec.duration for offset, spec, _ in episodes)
    points = sum(spec.labeled_points for _, spec, _ in episodes)
    return _Block(episodes, length, points)


def _plan_channel(length: int, plan: SchedulePlan, channel: str, rng: np.random.Generator) -> List[PlannedEpisode]:
    blocks: List[_Block] = []
    for time_type in TIME_TYPES[1:]:
        for bias in BIAS_TYPES[1:]:
            target = plan.rate(channel, time_type, bias) * length
            if target <= 0:
                continue
            points = 0
            while True:
                block = _draw_block(plan, channel, time_type, bias, rng)
                # stop once adding the block would overshoot by more than half of it
                if points + block.points / 2.0 > target:
                    break
                blocks.append(block)
                points += block.points

    if not blocks:
        return []

    order = rng.permutation(len(blocks))
    blocks = [blocks[i] for i in order]
    occupied = sum(b.length for b in blocks)
    slack = length - occupied - (len(blocks) + 1) * plan.min_gap
    if slack < 0:
        raise InfeasiblePlanError(
            f"Channel '{channel}': {len(blocks)} episodes need {occupied} steps plus gaps, "
            f"series has only {length}"
        )
    gaps = plan.min_gap + rng.multinomial(slack, np.full(len(blocks) + 1, 1.0 / (len(blocks) + 1)))

    episodes: List[PlannedEpisode] = []
    cursor = 0
    for gap, block in zip(gaps, blocks):
        cursor += int(gap)
        for offset, spec, time_type in block.episodes:
            episodes.append(PlannedEpisode(spec, cursor + offset, time_type))
        cursor += block.length
    return episodes


def plan_schedule(length: int, plan: SchedulePlan, rng: np.random.Generator) -> List[PlannedEpisode]:
    """
    Lay out non-overlapping injection episodes for every planned channel.

    Realized per-category point rates land within half an episode block of
    the targets.

    Raises:
        InfeasiblePlanError: the episodes and gaps do not fit in `length`
    """
    plan.validate()
    episodes: List[PlannedEpisode] = []
    for channel in plan.channels():
        episodes.extend(_plan_channel(length, plan, channel, rng))
    return episodes


def apply_episode(series: np.ndarray, episode: PlannedEpisode, rng: np.random.Generator) -> Tuple[np.ndarray, ChannelLabels]:
    spec = episode.spec
    if spec.kind is InjectionKind.INSTANT:
        return inject_instant(series, spec.magnitude, episode.index, rng, episode.time_type)
    if spec.kind is InjectionKind.CONSTANT:
        return inject_constant(series, spec.magnitude, episode.index, spec.duration, rng, episode.time_type)
    if spec.kind is InjectionKind.BIAS:
        return inject_bias(series, spec.magnitude, episode.index, spec.duration, rng, episode.time_type)
    return inject_drift(series, spec.magnitude, episode.index, spec.duration, episode.time_type)


@dataclass
class LabeledSeries:
    """Clean and corrupted channels with per-step ground truth"""
    timestamps: np.ndarray
    clean: Dict[str, np.ndarray]
    corrupted: Dict[str, np.ndarray]
    labels: Dict[str, ChannelLabels]
    seed: Optional[int] = None

    def __post_init__(self):
        n = len(self.timestamps)
        for channel in self.clean:
            if not (len(self.clean[channel]) == len(self.corrupted[channel]) == len(self.labels[channel]) == n):
                raise DataError(f"Channel '{channel}' clean/corrupted/labels lengths differ")

    def __len__(self) -> int:
        return int(len(self.timestamps))

    @property
    def channels(self) -> List[str]:
        return [c for c in CHANNELS if c in self.clean]

    @property
    def injected_channels(self) -> List[str]:
        return [c for c in self.channels if self.labels[c].detect.any()]

    def slice(self, start: int, stop: int) -> "LabeledSeries":
        return LabeledSeries(
            timestamps=self.timestamps[start:stop].copy(),
            clean={c: v[start:stop].copy() for c, v in self.clean.items()},
            corrupted={c: v[start:stop].copy() for c, v in self.corrupted.items()},
            labels={c: v.slice(start, stop) for c, v in self.labels.items()},
            seed=self.seed,
        )

    def check_labels(self) -> None:
        for channel in self.channels:
            changed = self.corrupted[channel] != self.clean[channel]
            if not np.array_equal(changed, self.labels[channel].detect == 1):
                raise DataError(f"Channel '{channel}': labels disagree with corrupted values")

    def to_frame(self) -> pd.DataFrame:
        columns: Dict[str, Any] = {"timestamp": self.timestamps}
        for channel in self.channels:
            labels = self.labels[channel]
            columns[f"{channel}_clean"] = self.clean[channel]
            columns[f"{channel}_corrupt"] = self.corrupted[channel]
            columns[f"{channel}_detect"] = labels.detect.astype(int)
            columns[f"{channel}_bias"] = labels.bias_names()
            columns[f"{channel}_time"] = labels.time_names()
        return pd.DataFrame(columns)


def build_labeled_dataset(trace: Trace, plan: SchedulePlan, seed: int) -> LabeledSeries:
    """
    Corrupt a preprocessed (normalized) trace according to the plan.

    Each channel draws from its own child of SeedSequence(seed), so the
    result is bit-identical for a fixed (trace, plan, seed).
    """
    n = len(trace)
    children = np.random.SeedSequence(seed).spawn(len(CHANNELS))
    clean, corrupted, labels = {}, {}, {}

    for idx, channel in enumerate(CHANNELS):
        rng = np.random.default_rng(children[idx])
        values = trace.channel(channel).astype(np.float64, copy=True)
        channel_labels = ChannelLabels.normal(n)
        current = values.copy()

        if channel in plan.rates:
            for episode in _plan_channel(n, plan, channel, rng):
                for attempt in range(MAX_EPISODE_REDRAWS):
                    try:
                        current, episode_labels = apply_episode(current, episode, rng)
                        break
                    except ZeroOffsetError:
                        logger.debug("[Inject] Re-drawing episode at %d (attempt %d)", episode.index, attempt + 1)
                else:
                    raise ZeroOffsetError(f"Episode at {episode.index} kept drawing zero offsets")
                channel_labels = channel_labels.merge(episode_labels)

        clean[channel] = values
        corrupted[channel] = current
        labels[channel] = channel_labels

    labeled = LabeledSeries(trace.timestamps.copy(), clean, corrupted, labels, seed)
    labeled.check_labels()
    for channel in labeled.injected_channels:
        logger.info(
            "[Inject] %s: %.2f%% of %d points corrupted",
            channel, 100.0 * labels[channel].detect.mean(), n,
        )
    return labeled


def realized_rates(labeled: LabeledSeries) -> Rates:
    """Fraction of points per channel, time type and bias type"""
    rates: Rates = {}
    n = len(labeled)
    for channel in labeled.channels:
        labels = labeled.labels[channel]
        rates[channel] = {}
        for t_idx, time_type in enumerate(TIME_TYPES[1:], 1):
            rates[channel][time_type.value] = {
                bias.value: float(np.sum((labels.time == t_idx) & (labels.bias == b_idx)) / n)
                for b_idx, bias in enumerate(BIAS_TYPES[1:], 1)
            }
    return rates


def write_labeled_csv(labeled: LabeledSeries, path: Union[str, Path]) -> None:
    labeled.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_labeled_csv(path: Union[str, Path]) -> LabeledSeries:
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False)
    if "timestamp" not in frame.columns:
        raise DataError(f"{path}: labeled file lacks a timestamp column")

    clean, corrupted, labels = {}, {}, {}
    bias_lookup = {b.value: i for i, b in enumerate(BIAS_TYPES)}
    time_lookup = {t.value: i for i, t in enumerate(TIME_TYPES)}
    for channel in CHANNELS:
        if f"{channel}_clean" not in frame.columns:
            continue
        try:
            clean[channel] = frame[f"{channel}_clean"].to_numpy(dtype=np.float64)
            corrupted[channel] = frame[f"{channel}_corrupt"].to_numpy(dtype=np.float64)
            labels[channel] = ChannelLabels(
                detect=frame[f"{channel}_detect"].to_numpy(dtype=np.int8),
                bias=np.array([bias_lookup[v] for v in frame[f"{channel}_bias"]], dtype=np.int8),
                time=np.array([time_lookup[v] for v in frame[f"{channel}_time"]], dtype=np.int8),
            )
        except KeyError as e:
            raise DataError(f"{path}: malformed columns for channel '{channel}': {e}") from e

    if not clean:
        raise DataError(f"{path}: no channel columns found")
    return LabeledSeries(frame["timestamp"].to_numpy(dtype=np.float64), clean, corrupted, labels)
