"""
Sliding-window regression and statistics features.

For every step t >= regression_window a frame combines:
- regression features over series[t-R+1 .. t]:   slope, intercept, se
- statistical features over series[t-S .. t-1]:  std, rsi, range, variation
- REMA features at t:                            ema, distance, upper/lower margin

Batch extraction is vectorized with sliding_window_view; the streaming
extractor runs the same row kernels on a bounded buffer.
"""
import logging
from collections import deque
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Deque, Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import DataError
from src.rema import RemaOutput, outputs_to_arrays
from src.trace_ingest import FLOAT_FORMAT

logger = logging.getLogger(__name__)

FEATURE_NAMES: Tuple[str, ...] = (
    "slope", "intercept", "se",
    "std", "rsi", "range", "variation",
    "ema", "distance", "upper_margin", "lower_margin",
)


@dataclass(frozen=True)
class WindowConfig:
    regression_window: int = 20
    stat_window: int = 10
    rsi_window: Optional[int] = None  # defaults to stat_window

    def __post_init__(self):
        if self.rsi_window is None:
            object.__setattr__(self, "rsi_window", self.stat_window)
        if self.regression_window < 3:
            raise ValueError(f"regression_window must be >= 3, got {self.regression_window}")
        if self.stat_window < 2 or self.rsi_window < 2:
            raise ValueError("stat_window and rsi_window must be >= 2")
        if self.stat_window > self.regression_window or self.rsi_window > self.regression_window:
            raise ValueError("Statistical windows cannot be longer than the regression window")


@dataclass(frozen=True)
class FeatureFrame:
    slope: float
    intercept: float
    se: float
    std: float
    rsi: float
    range: float
    variation: float
    ema: float
    distance: float
    upper_margin: float
    lower_margin: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def _regression_rows(windows: np.ndarray) -> np.ndarray:
    """OLS on x = 0..n-1 for every row; returns (rows, 3) slope, intercept, se"""
    n = windows.shape[1]
    x = np.arange(n, dtype=np.float64)
    x_dev = x - x.mean()
    sxx = (x_dev * x_dev).sum()
    y_mean = windows.mean(axis=1)
    slope = ((windows - y_mean[:, None]) * x_dev).sum(axis=1) / sxx
    intercept = y_mean - slope * x.mean()
    residuals = windows - (intercept[:, None] + slope[:, None] * x)
    se = np.sqrt((residuals * residuals).sum(axis=1) / (n - 2))
    return np.column_stack([slope, intercept, se])


def _rsi_rows(windows: np.ndarray) -> np.ndarray:
    """Simple-average RSI over each row's first differences"""
    diffs = np.diff(windows, axis=1)
    gain = np.clip(diffs, 0.0, None).mean(axis=1)
    loss = np.clip(-diffs, 0.0, None).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rsi = 100.0 - 100.0 / (1.0 + gain / loss)
    return np.where(loss == 0.0, np.where(gain == 0.0, 50.0, 100.0), rsi)


def _stat_rows(windows: np.ndarray, rsi_windows: np.ndarray, incoming: np.ndarray) -> np.ndarray:
    """(rows, 4) std, rsi, range, variation"""
    return np.column_stack([
        windows.std(axis=1),
        _rsi_rows(rsi_windows),
        np.ptp(windows, axis=1),
        incoming - windows[:, -1],
    ])


def regression_features(window: Sequence[float]) -> Tuple[float, float, float]:
    """(slope, intercept, se) of a least-squares line through the window"""
    values = np.asarray(window, dtype=np.float64)
    if values.ndim != 1 or len(values) < 3:
        raise ValueError(f"Regression window needs at least 3 values, got {values.shape}")
    slope, intercept, se = _regression_rows(values[None, :])[0]
    return float(slope), float(intercept), float(se)


def stat_features(window: Sequence[float], incoming: float) -> Tuple[float, float, float, float]:
    """(std, rsi, range, variation) of a short window and the incoming reading"""
    values = np.asarray(window, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise ValueError(f"Statistical window needs at least 2 values, got {values.shape}")
    std, rsi, value_range, variation = _stat_rows(values[None, :], values[None, :], np.array([incoming]))[0]
    return float(std), float(rsi), float(value_range), float(variation)


RemaInput = Union[Sequence[RemaOutput], Dict[str, np.ndarray]]


@dataclass
class FrameBatch:
    """Feature frames of one channel; row i belongs to step `steps[i]`"""
    values: np.ndarray  # (frames, len(FEATURE_NAMES))
    steps: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __iter__(self) -> Iterator[FeatureFrame]:
        for row in self.values:
            yield FeatureFrame(*(float(v) for v in row))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, FEATURE_NAMES.index(name)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(FEATURE_NAMES))
        frame.insert(0, "step", self.steps)
        return frame


def assemble_frames(
    series: Sequence[float],
    rema_outputs: RemaInput,
    config: WindowConfig = WindowConfig(),
    scaler: Optional["FeatureScaler"] = None,
) -> FrameBatch:
    """
    Frames for steps regression_window .. n-1, each using data at indices <= its step.

    With a scaler the frames come back z-scored with its (training-split) statistics.
    """
    values = np.asarray(series, dtype=np.float64)
    rema = rema_outputs if isinstance(rema_outputs, dict) else outputs_to_arrays(rema_outputs)
    n = len(values)
    if any(len(rema[name]) != n for name in ("ema_value", "distance", "upper_margin", "lower_margin")):
        raise DataError("REMA outputs are not aligned with the series")
    R, S, Q = config.regression_window, config.stat_window, config.rsi_window
    if n <= R:
        raise DataError(f"Series of length {n} too short for regression window {R}")

    steps = np.arange(R, n)
    regression = _regression_rows(sliding_window_view(values, R)[1:])
    history = values[:-1]
    stat = _stat_rows(
        sliding_window_view(history, S)[R - S:],
        sliding_window_view(history, Q)[R - Q:],
        values[R:],
    )
    frames = np.column_stack([
        regression,
        stat,
        rema["ema_value"][R:],
        rema["distance"][R:],
        rema["upper_margin"][R:],
        rema["lower_margin"][R:],
    ])
    if not np.isfinite(frames).all():
        raise DataError("Non-finite feature values; check the input series for gaps")

    batch = FrameBatch(frames, steps)
    if scaler is not None:
        batch = FrameBatch(scaler.transform(frames), steps)
    return batch


class StreamingFeatureExtractor:
    """Per-point frame extraction over a bounded buffer; matches assemble_frames"""

    def __init__(self, config: WindowConfig = WindowConfig(), scaler: Optional["FeatureScaler"] = None):
        self.config = config
        self.scaler = scaler
        self._buffer: Deque[float] = deque(maxlen=config.regression_window + 1)
        self._step = 0

    def reset(self) -> None:
        self._buffer.clear()
        self._step = 0

    def push(self, x: float, rema: RemaOutput) -> Optional[np.ndarray]:
        """Add reading x; returns the frame for this step once the regression window is full"""
        self._buffer.append(float(x))
        step = self._step
        self._step += 1
        R, S, Q = self.config.regression_window, self.config.stat_window, self.config.rsi_window
        if step < R:
            return None

        buffer = np.fromiter(self._buffer, dtype=np.float64, count=len(self._buffer))
        regression = _regression_rows(buffer[None, -R:])[0]
        stat = _stat_rows(buffer[None, -S - 1:-1], buffer[None, -Q - 1:-1], buffer[-1:])[0]
        frame = np.concatenate([
            regression,
            stat,
            [rema.ema_value, rema.distance, rema.upper_margin, rema.lower_margin],
        ])
        if self.scaler is not None:
            frame = self.scaler.transform(frame[None, :])[0]
        return frame


class FeatureScaler:
    """Column-wise z-score fitted on training frames"""

    def __init__(self, mean: np.ndarray, std: np.ndarray, names: Sequence[str] = FEATURE_NAMES):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.names = tuple(names)
        if self.mean.shape != (len(self.names),) or self.std.shape != (len(self.names),):
            raise DataError("Scaler statistics do not match the feature names")

    @classmethod
    def fit(cls, frames: np.ndarray, names: Sequence[str] = FEATURE_NAMES) -> "FeatureScaler":
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise DataError("Cannot fit a feature scaler on an empty frame set")
        std = frames.std(axis=0)
        constant = std == 0.0
        if constant.any():
            logger.warning(
                "[Features] Constant training columns %s; scaling them by 1",
                [n for n, c in zip(names, constant) if c],
            )
        return cls(frames.mean(axis=0), np.where(constant, 1.0, std), names)

    def transform(self, frames: np.ndarray) -> np.ndarray:
        return (np.asarray(frames, dtype=np.float64) - self.mean) / self.std

    def save(self, path: Union[str, Path]) -> None:
        frame = pd.DataFrame({"feature": self.names, "mean": self.mean, "std": self.std})
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FeatureScaler":
        frame = pd.read_csv(path, float_precision="round_trip")
        return cls(frame["mean"].to_numpy(), frame["std"].to_numpy(), frame["feature"].tolist())


def make_windows(frames: np.ndarray, labels: Optional[np.ndarray], window: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Feed windows of `window` consecutive frames.

    Returns X of shape (frames - window + 1, window, features) and, when
    labels are given, the label of each window's final frame.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if window < 1:
        raise ValueError(f"Window must be positive, got {window}")
    count = frames.shape[0] - window + 1
    if count <= 0:
        empty = np.empty((0, window, frames.shape[1]))
        return empty, (np.empty(0, dtype=np.int64) if labels is not None else None)

    X = np.ascontiguousarray(sliding_window_view(frames, (window, frames.shape[1]))[:, 0])
    y = None
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != frames.shape[0]:
            raise DataError("Labels are not aligned with frames")
        y = labels[window - 1:].astype(np.int64)
    return X, y
