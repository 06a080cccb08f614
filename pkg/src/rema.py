"""
Reinforced EMA (REMA) outlier screening.

Each step runs in two phases:
- fit:   predict ema[t] from the previous processed value and a three-lag
         mean of past EMA values, then place bounds at ema[t] +/- S * scale
- check: compare the incoming reading against the bounds; outliers replace
         ema[t] with the window's trend estimate and lower alpha, inliers
         raise it

The window holds the last `slide_size` EMA values. The scale is the larger
of the window's spread and the RMS prediction error over the last
`slide_size` accepted readings, widened by run/slide_size while a run of
outliers lasts. After a substitution the bounds are re-centred on the
stored EMA. Sums go through math.fsum so streaming and batch evaluation
agree bit for bit.
"""
import itertools
import logging
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Deque, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from src.errors import DataError, WarmupError
from src.fault_injection import LabeledSeries
from src.metrics import detection_f1
from src.trace_ingest import FLOAT_FORMAT

logger = logging.getLogger(__name__)

THRESHOLD_FLOOR = 1e-9

PARAM_FIELDS = ("alpha", "alpha_min", "alpha_max", "punish", "reward", "slide_size", "sensitivity")

DEFAULT_GRID: Dict[str, List[Any]] = {
    "alpha": [0.3, 0.5, 0.7],
    "alpha_min": [0.05, 0.1],
    "alpha_max": [0.9, 0.99],
    "punish": [0.05, 0.1],
    "reward": [0.01, 0.02],
    "slide_size": [8, 12, 20],
    "sensitivity": [2.0, 3.0, 4.0],
}


@dataclass(frozen=True)
class RemaParams:
    alpha: float
    alpha_min: float
    alpha_max: float
    punish: float
    reward: float
    slide_size: int
    sensitivity: float
    epsilon: float = THRESHOLD_FLOOR

    def __post_init__(self):
        if not 0 < self.alpha_min <= self.alpha <= self.alpha_max <= 1:
            raise ValueError(
                f"Need 0 < alpha_min <= alpha <= alpha_max <= 1, got "
                f"{self.alpha_min}, {self.alpha}, {self.alpha_max}"
            )
        if not (self.punish > 0 and self.reward > 0):
            raise ValueError("punish and reward must be positive")
        if int(self.slide_size) != self.slide_size or self.slide_size < 3:
            raise ValueError(f"slide_size must be an integer >= 3, got {self.slide_size}")
        object.__setattr__(self, "slide_size", int(self.slide_size))
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be positive, got {self.sensitivity}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RemaState:
    """Live detector state for one channel; single writer"""
    window: Deque[float]
    residuals: Deque[float]
    alpha_current: float
    processed: float = math.nan  # last reading, or its substitute when it was flagged
    upper_bound: float = math.nan
    lower_bound: float = math.nan
    threshold: float = math.nan
    distance: float = 0.0
    run_length: int = 0
    step_count: int = 0
    # set by fit, consumed by check
    fitted_ema: float = math.nan
    awaiting_check: bool = False

    @classmethod
    def initial(cls, params: RemaParams) -> "RemaState":
        return cls(
            window=deque(maxlen=params.slide_size),
            residuals=deque(maxlen=params.slide_size),
            alpha_current=params.alpha,
        )

    @property
    def ema(self) -> float:
        """Most recent EMA value"""
        return self.window[-1] if self.window else math.nan


@dataclass(frozen=True)
class RemaOutput:
    """
    One step's result. Margins are measured against the fitted bounds, so
    they carry the outlier flag; upper/lower_bound are centred on ema_value.
    """
    is_outlier: bool
    ema_value: float
    distance: float
    upper_margin: float
    lower_margin: float
    upper_bound: float
    lower_bound: float
    alpha: float


def _mean(values: Iterable[float], count: int) -> float:
    return math.fsum(values) / count


def window_trend(window: Sequence[float]) -> float:
    """Least-squares line through the window, evaluated one step past its end"""
    n = len(window)
    mean = _mean(window, n)
    center = (n - 1) / 2.0
    sxx = n * (n * n - 1) / 12.0
    slope = math.fsum((i - center) * (e - mean) for i, e in enumerate(window)) / sxx
    return mean + slope * (n - center)


def rema_fit(state: RemaState, params: RemaParams, t: int, previous: float) -> RemaState:
    """
    Fit phase for step t. `previous` is the processed value of step t-1.

    Raises:
        WarmupError: t < slide_size
    """
    ss = params.slide_size
    if t < ss:
        raise WarmupError(f"Step {t} is inside the {ss}-step warm-up")
    if t != state.step_count or state.awaiting_check:
        raise ValueError(f"Out-of-order fit: step {t}, detector at {state.step_count}")

    window = state.window
    p_value = _mean((window[0], window[ss - ss // 2], window[ss - ss // 3]), 3)
    alpha = state.alpha_current
    ema_t = alpha * previous + (1.0 - alpha) * p_value

    mean = _mean(window, ss)
    spread = math.sqrt(_mean(((e - mean) * (e - mean) for e in window), ss))
    residuals = state.residuals
    error = math.sqrt(_mean((r * r for r in residuals), len(residuals))) if residuals else 0.0
    threshold = max(spread, error, params.epsilon) * (1.0 + state.run_length / ss)

    state.fitted_ema = ema_t
    state.threshold = threshold
    state.upper_bound = ema_t + threshold * params.sensitivity
    state.lower_bound = ema_t - threshold * params.sensitivity
    state.awaiting_check = True
    return state


def rema_check(state: RemaState, params: RemaParams, t: int, x: float) -> Tuple[RemaOutput, RemaState]:
    """Check phase for step t against the bounds fitted without seeing x"""
    if not state.awaiting_check or t != state.step_count:
        raise ValueError(f"rema_check at step {t} without a matching rema_fit")

    is_outlier = x > state.upper_bound or x < state.lower_bound
    upper_margin = state.upper_bound - x
    lower_margin = x - state.lower_bound
    if is_outlier:
        ema_t = window_trend(state.window)
        state.alpha_current = max(state.alpha_current - params.punish, params.alpha_min)
        state.run_length += 1
        state.processed = ema_t
    else:
        ema_t = state.fitted_ema
        state.alpha_current = min(state.alpha_current + params.reward, params.alpha_max)
        state.residuals.append(x - ema_t)
        state.run_length = 0
        state.processed = x

    state.distance = abs(x - ema_t)
    state.window.append(ema_t)
    state.upper_bound = ema_t + state.threshold * params.sensitivity
    state.lower_bound = ema_t - state.threshold * params.sensitivity
    state.step_count += 1
    state.awaiting_check = False

    output = RemaOutput(
        is_outlier=is_outlier,
        ema_value=ema_t,
        distance=state.distance,
        upper_margin=upper_margin,
        lower_margin=lower_margin,
        upper_bound=state.upper_bound,
        lower_bound=state.lower_bound,
        alpha=state.alpha_current,
    )
    return output, state


def _warmup_step(state: RemaState, x: float) -> RemaOutput:
    # the previous reading stands in for the prediction
    if state.window:
        state.residuals.append(x - state.window[-1])
    state.window.append(x)
    state.processed = x
    state.upper_bound = state.lower_bound = x
    state.distance = 0.0
    state.step_count += 1
    return RemaOutput(False, x, 0.0, 0.0, 0.0, x, x, state.alpha_current)


class RemaDetector:
    """Stateful single-channel REMA stream"""

    def __init__(self, params: RemaParams):
        self.params = params
        self.state = RemaState.initial(params)

    @property
    def step_count(self) -> int:
        return self.state.step_count

    @property
    def warmed_up(self) -> bool:
        return self.state.step_count >= self.params.slide_size

    def reset(self) -> None:
        self.state = RemaState.initial(self.params)

    def step(self, x: float) -> RemaOutput:
        x = float(x)
        t = self.state.step_count
        if t < self.params.slide_size:
            return _warmup_step(self.state, x)
        rema_fit(self.state, self.params, t, self.state.processed)
        output, _ = rema_check(self.state, self.params, t, x)
        return output


def rema_stream(series: Sequence[float], params: RemaParams) -> List[RemaOutput]:
    """Run REMA over a whole series, one output per step"""
    if len(series) <= params.slide_size:
        raise DataError(f"Series of length {len(series)} too short for slide_size {params.slide_size}")
    detector = RemaDetector(params)
    return [detector.step(x) for x in series]


REMA_ARRAY_FIELDS = ("is_outlier", "ema_value", "distance", "upper_margin", "lower_margin")


def outputs_to_arrays(outputs: Sequence[RemaOutput]) -> Dict[str, np.ndarray]:
    """Column arrays of a REMA output sequence"""
    arrays = {name: np.array([getattr(o, name) for o in outputs], dtype=np.float64) for name in REMA_ARRAY_FIELDS}
    arrays["is_outlier"] = arrays["is_outlier"].astype(bool)
    return arrays


@dataclass(frozen=True)
class GridScore:
    combo_id: int
    params: RemaParams
    f1_anomaly: float
    f1_normal: float
    score: float

    def ranking_key(self) -> Tuple[float, float, int, float, int]:
        return (self.score, self.f1_anomaly, -self.params.slide_size, -self.params.sensitivity, -self.combo_id)

    def to_row(self) -> Dict[str, Any]:
        row = {"combo_id": self.combo_id}
        row.update({name: getattr(self.params, name) for name in PARAM_FIELDS})
        row.update(f1_anomaly=self.f1_anomaly, f1_normal=self.f1_normal, score=self.score)
        return row


def expand_grid(grid: Dict[str, Sequence[Any]]) -> List[Tuple[int, RemaParams]]:
    """Valid parameter combinations in a fixed order, numbered from 0"""
    missing = [name for name in PARAM_FIELDS if not grid.get(name)]
    if missing:
        raise DataError(f"Grid has no candidates for: {', '.join(missing)}")

    combos: List[Tuple[int, RemaParams]] = []
    skipped = 0
    for values in itertools.product(*(grid[name] for name in PARAM_FIELDS)):
        try:
            params = RemaParams(**dict(zip(PARAM_FIELDS, values)))
        except ValueError:
            skipped += 1
            continue
        combos.append((len(combos), params))

    if skipped:
        logger.debug("[Tune] Skipped %d invalid combinations", skipped)
    if not combos:
        raise DataError("Grid contains no valid parameter combination")
    return combos


# per-process evaluation data, set once by the pool initializer
_GRID_DATA: Dict[str, Any] = {}


def _init_grid_worker(series: List[np.ndarray], truth: np.ndarray, exclude: int) -> None:
    _GRID_DATA.update(series=series, truth=truth, exclude=exclude)


def _score_combo(combo: Tuple[int, RemaParams]) -> GridScore:
    combo_id, params = combo
    exclude = _GRID_DATA["exclude"]
    predictions = []
    for values in _GRID_DATA["series"]:
        flags = np.fromiter((o.is_outlier for o in rema_stream(values, params)), dtype=bool, count=len(values))
        predictions.append(flags[exclude:])
    f1_anomaly, f1_normal = detection_f1(np.concatenate(predictions), _GRID_DATA["truth"])
    return GridScore(combo_id, params, f1_anomaly, f1_normal, (f1_anomaly + f1_normal) / 2.0)


def grid_search(
    labeled: LabeledSeries,
    grid: Optional[Dict[str, Sequence[Any]]] = None,
    channels: Optional[Sequence[str]] = None,
    workers: int = 1,
    exclude: Optional[int] = None,
) -> Tuple[RemaParams, List[GridScore]]:
    """
    Evaluate every grid combination on the corrupted channels and pick the best.

    Score is the mean of anomaly and normal F1 over all channels, with the
    first `exclude` steps of each channel left out (default: the largest
    slide_size in the grid). Ties go to higher anomaly F1, then smaller
    slide_size, then smaller sensitivity.
    """
    grid = grid or DEFAULT_GRID
    combos = expand_grid(grid)
    channels = list(channels or labeled.injected_channels)
    if not channels:
        raise DataError("Labeled series has no corrupted channel to tune on")
    if exclude is None:
        exclude = max(p.slide_size for _, p in combos)

    series = [labeled.corrupted[c] for c in channels]
    truth = np.concatenate([labeled.labels[c].detect[exclude:] == 1 for c in channels])
    if truth.all() or not truth.any():
        raise DataError("Grid search needs both normal and anomalous steps")

    logger.info("[Tune] %d combinations over %d channel(s), %d workers", len(combos), len(channels), workers)
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_grid_worker, initargs=(series, truth, exclude)
        ) as pool:
            scores = list(pool.map(_score_combo, combos, chunksize=max(1, len(combos) // (workers * 4))))
    else:
        _init_grid_worker(series, truth, exclude)
        scores = [_score_combo(combo) for combo in combos]
        _GRID_DATA.clear()

    best = max(scores, key=GridScore.ranking_key)
    logger.info(
        "[Tune] Best combo %d: score %.4f (anomaly F1 %.4f, normal F1 %.4f)",
        best.combo_id, best.score, best.f1_anomaly, best.f1_normal,
    )
    return best.params, scores


def write_score_report(scores: Sequence[GridScore], path: Union[str, Path]) -> None:
    frame = pd.DataFrame([s.to_row() for s in sorted(scores, key=lambda s: s.combo_id)])
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def save_rema_params(params: RemaParams, path: Union[str, Path], score: Optional[float] = None) -> None:
    """Write tuned params as YAML; floats keep their shortest round-trip repr"""
    data: Dict[str, Any] = {"rema": params.to_dict()}
    if score is not None:
        data["grid_search_score"] = float(score)
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)


def load_rema_params(path: Union[str, Path]) -> Tuple[RemaParams, Optional[float]]:
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    if "rema" not in data:
        raise DataError(f"{path}: no 'rema' section")
    try:
        params = RemaParams(**data["rema"])
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: invalid REMA params: {e}") from e
    return params, data.get("grid_search_score")
