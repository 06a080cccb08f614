"""
GPS trace ingestion: parsing, temporal ordering, gap repair and normalization.

Traces are held as numpy arrays with a fixed channel order
(latitude, longitude, speed). A missing value is NaN.
"""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import DataError, TraceFormatError

logger = logging.getLogger(__name__)

CHANNELS: Tuple[str, ...] = ("latitude", "longitude", "speed")
FLOAT_FORMAT = "%.17g"

_RANGES = {
    "latitude": (-90.0, 90.0),
    "longitude": (-180.0, 180.0),
}


@dataclass(frozen=True)
class ColumnMapping:
    """Maps trace channels onto CSV header names"""
    timestamp: str = "timestamp"
    latitude: str = "latitude"
    longitude: str = "longitude"
    speed: str = "speed"

    def columns(self) -> Dict[str, str]:
        return {
            "timestamp": self.timestamp,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "speed": self.speed,
        }


@dataclass(frozen=True)
class GpsReading:
    """One timestamped sensor sample; NaN marks a missing value"""
    timestamp: float
    latitude: float
    longitude: float
    speed: float = math.nan


@dataclass(frozen=True)
class RowReject:
    row_number: int  # 1-based data row, header excluded
    reason: str


@dataclass
class Trace:
    """
    An ordered GPS trace.

    timestamps has shape (n,), values has shape (n, 3) in CHANNELS order.
    rejects and fill_counts carry the parse and interpolation reports along.
    """
    timestamps: np.ndarray
    values: np.ndarray
    source_id: str = "trace"
    rejects: List[RowReject] = field(default_factory=list)
    fill_counts: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(CHANNELS))
        if self.values.shape[0] != self.timestamps.shape[0]:
            raise ValueError(
                f"Trace has {self.timestamps.shape[0]} timestamps but {self.values.shape[0]} value rows"
            )

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def readings(self) -> List[GpsReading]:
        return [
            GpsReading(float(t), float(row[0]), float(row[1]), float(row[2]))
            for t, row in zip(self.timestamps, self.values)
        ]

    @classmethod
    def from_readings(cls, readings: Iterable[GpsReading], source_id: str = "trace") -> "Trace":
        readings = list(readings)
        timestamps = np.array([r.timestamp for r in readings], dtype=np.float64)
        values = np.array(
            [[r.latitude, r.longitude, r.speed] for r in readings], dtype=np.float64
        ).reshape(-1, len(CHANNELS))
        return cls(timestamps=timestamps, values=values, source_id=source_id)

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, channel_index(name)]

    def slice(self, start: int, stop: int) -> "Trace":
        return replace(
            self,
            timestamps=self.timestamps[start:stop].copy(),
            values=self.values[start:stop].copy(),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(CHANNELS))
        frame.insert(0, "timestamp", self.timestamps)
        return frame


def channel_index(name: str) -> int:
    try:
        return CHANNELS.index(name)
    except ValueError:
        raise DataError(f"Unknown channel '{name}', expected one of {', '.join(CHANNELS)}") from None


def _parse_field(raw: str) -> Optional[float]:
    """Parse one numeric CSV field; empty and 'NaN' both mean missing. None means unparseable."""
    text = raw.strip()
    if not text:
        return math.nan
    try:
        return float(text)
    except ValueError:
        return None


def _parse_row(row: List[str], positions: Dict[str, int], width: int) -> Tuple[Optional[GpsReading], str]:
    if not row or all(not cell.strip() for cell in row):
        return None, "empty row"
    if len(row) != width:
        return None, f"expected {width} fields, found {len(row)}"

    timestamp = _parse_field(row[positions["timestamp"]])
    if timestamp is None:
        return None, "timestamp not a number"
    if math.isnan(timestamp):
        return None, "timestamp missing"
    if not math.isfinite(timestamp):
        return None, "timestamp not finite"

    parsed = {}
    for name in CHANNELS:
        value = _parse_field(row[positions[name]])
        if value is None:
            return None, f"{name} not a number"
        if math.isinf(value):
            return None, f"{name} not finite"
        if not math.isnan(value):
            if name in _RANGES:
                low, high = _RANGES[name]
                if not low <= value <= high:
                    return None, f"{name} out of range"
            elif value < 0:
                return None, f"{name} negative"
        parsed[name] = value

    return GpsReading(timestamp, parsed["latitude"], parsed["longitude"], parsed["speed"]), ""


def parse_trace(path: Union[str, Path], format_spec: Optional[ColumnMapping] = None) -> Trace:
    """
    Parse a GPS trace CSV into a Trace.

    Every data row becomes a reading or a RowReject on trace.rejects, so
    len(trace) + len(trace.rejects) equals the number of data rows.

    Raises:
        FileNotFoundError: the file does not exist
        TraceFormatError: missing header or a mapped column is absent
    """
    path = Path(path)
    mapping = format_spec or ColumnMapping()
    if not path.is_file():
        raise FileNotFoundError(f"Trace file not found: {path}")

    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise TraceFormatError(f"{path.name}: header row required")

        header = [name.strip() for name in header]
        missing = [column for column in mapping.columns().values() if column not in header]
        if missing:
            raise TraceFormatError(f"{path.name}: header lacks column(s) {', '.join(missing)}")
        positions = {key: header.index(column) for key, column in mapping.columns().items()}

        readings: List[GpsReading] = []
        rejects: List[RowReject] = []
        for row_number, row in enumerate(reader, 1):
            reading, reason = _parse_row(row, positions, len(header))
            if reading is None:
                rejects.append(RowReject(row_number, reason))
            else:
                readings.append(reading)

    trace = Trace.from_readings(readings, source_id=path.stem)
    trace.rejects = rejects
    if rejects:
        logger.warning("[Ingest] %s: %d row(s) rejected", path.name, len(rejects))
    logger.info("[Ingest] Parsed %d readings from %s", len(trace), path.name)
    return trace


def sort_merge(trace: Trace) -> Trace:
    """Order readings by timestamp, merging simultaneous readings by per-channel mean"""
    if len(trace) == 0:
        raise DataError("Cannot sort an empty trace")

    frame = trace.to_frame()
    merged = frame.groupby("timestamp", sort=True).mean()
    if len(merged) < len(trace):
        logger.info("[Ingest] Merged %d simultaneous readings", len(trace) - len(merged))

    return replace(
        trace,
        timestamps=merged.index.to_numpy(dtype=np.float64),
        values=merged[list(CHANNELS)].to_numpy(dtype=np.float64),
    )


def interpolate_missing(trace: Trace) -> Trace:
    """
    Fill missing values per channel.

    Interior gaps are linearly interpolated on timestamp; leading and trailing
    gaps take the nearest valid value. Non-missing values are never touched.
    The per-channel fill count lands on trace.fill_counts.
    """
    values = trace.values.copy()
    fill_counts = {}
    for idx, name in enumerate(CHANNELS):
        column = values[:, idx]
        valid = ~np.isnan(column)
        if valid.sum() < 2:
            raise DataError(f"Channel '{name}' has fewer than two valid values")
        missing = ~valid
        if missing.any():
            # np.interp clamps to the end values outside the valid range
            column[missing] = np.interp(trace.timestamps[missing], trace.timestamps[valid], column[valid])
        fill_counts[name] = int(missing.sum())

    if any(fill_counts.values()):
        logger.info("[Ingest] Interpolated missing values: %s", fill_counts)
    return replace(trace, values=values, fill_counts=fill_counts)


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics"""
    channels: Tuple[str, ...]
    mean: Tuple[float, ...]
    std: Tuple[float, ...]
    degenerate: Tuple[bool, ...] = ()

    def __post_init__(self):
        if not (len(self.channels) == len(self.mean) == len(self.std)):
            raise ValueError("NormStats channels, mean and std must have equal length")
        if any(not s > 0 for s in self.std):
            raise ValueError("NormStats standard deviations must be positive")
        if not self.degenerate:
            object.__setattr__(self, "degenerate", (False,) * len(self.channels))
        elif len(self.degenerate) != len(self.channels):
            raise ValueError("NormStats needs one degenerate flag per channel")

    def index(self, channel: str) -> int:
        try:
            return self.channels.index(channel)
        except ValueError:
            raise DataError(f"NormStats has no channel '{channel}'") from None

    @classmethod
    def fit(cls, values: np.ndarray, channels: Sequence[str] = CHANNELS) -> "NormStats":
        values = np.asarray(values, dtype=np.float64).reshape(-1, len(channels))
        if np.isnan(values).any():
            raise DataError("Normalization statistics require a fully populated trace")
        means, stds, degenerate = [], [], []
        for idx, name in enumerate(channels):
            column = values[:, idx]
            std = float(np.std(column))
            flagged = len(np.unique(column)) < 2 or not std > 0
            if flagged:
                logger.warning("[Normalize] Channel '%s' has zero variance, using std = 1", name)
                std = 1.0
            means.append(float(np.mean(column)))
            stds.append(std)
            degenerate.append(flagged)
        return cls(tuple(channels), tuple(means), tuple(stds), tuple(degenerate))

    def normalize_value(self, value: float, channel: str) -> float:
        idx = self.index(channel)
        return (value - self.mean[idx]) / self.std[idx]

    def denormalize_value(self, value: float, channel: str) -> float:
        idx = self.index(channel)
        return value * self.std[idx] + self.mean[idx]


def normalize(trace: Trace, stats: Union[NormStats, str] = "fit") -> Tuple[Trace, NormStats]:
    """
    Z-score every channel with the given stats, or with stats fitted on this trace.

    Fit on the training split only and pass the result in for the other splits.
    """
    if isinstance(stats, str):
        if stats != "fit":
            raise ValueError(f"stats must be a NormStats or 'fit', got '{stats}'")
        stats = NormStats.fit(trace.values)
    if tuple(stats.channels) != CHANNELS:
        raise DataError(f"NormStats channels {stats.channels} do not match trace channels {CHANNELS}")

    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.asarray(stats.std, dtype=np.float64)
    return replace(trace, values=(trace.values - mean) / std), stats


def denormalize(value: float, stats: NormStats, channel: str) -> float:
    """Exact inverse of normalize for one value"""
    return stats.denormalize_value(value, channel)


def split_indices(length: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> Dict[str, slice]:
    """Contiguous train/validation/test blocks"""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"Split ratios must be three non-negative numbers summing to 1, got {ratios}")
    train_end = int(round(length * ratios[0]))
    val_end = int(round(length * (ratios[0] + ratios[1])))
    return {
        "train": slice(0, train_end),
        "validation": slice(train_end, val_end),
        "test": slice(val_end, length),
    }


def write_trace(trace: Trace, path: Union[str, Path]) -> None:
    trace.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_rejects(rejects: Sequence[RowReject], path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [(r.row_number, r.reason) for r in rejects], columns=["row_number", "reason"]
    )
    frame.to_csv(path, index=False)


def save_norm_stats(stats: NormStats, path: Union[str, Path]) -> None:
    frame = pd.DataFrame({
        "channel": stats.channels, "mean": stats.mean, "std": stats.std, "degenerate": stats.degenerate,
    })
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def load_norm_stats(path: Union[str, Path]) -> NormStats:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"channel", "mean", "std"} - set(frame.columns)
    if missing:
        raise DataError(f"{path}: norm stats file lacks column(s) {', '.join(sorted(missing))}")
    # files written before the flag was stored count as non-degenerate
    degenerate = tuple(
        str(v).strip().lower() == "true" for v in frame.get("degenerate", pd.Series([False] * len(frame)))
    )
    return NormStats(
        channels=tuple(str(c) for c in frame["channel"]),
        mean=tuple(float(v) for v in frame["mean"]),
        std=tuple(float(v) for v in frame["std"]),
        degenerate=degenerate,
    )


def preprocess(path: Union[str, Path], format_spec: Optional[ColumnMapping] = None) -> Trace:
    """parse_trace -> sort_merge -> interpolate_missing"""
    return interpolate_missing(sort_merge(parse_trace(path, format_spec)))


def read_trace(path: Union[str, Path]) -> Trace:
    """Load a trace written by write_trace"""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"timestamp", *CHANNELS} - set(frame.columns)
    if missing:
        raise TraceFormatError(f"{path}: trace file lacks column(s) {', '.join(sorted(missing))}")
    return Trace(
        timestamps=frame["timestamp"].to_numpy(dtype=np.float64),
        values=frame[list(CHANNELS)].to_numpy(dtype=np.float64),
        source_id=Path(path).stem,
    )
