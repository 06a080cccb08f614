"""
Rule-based temporal typing of detected anomalies.

A run counter tracks consecutive anomalous steps and an episode memory keeps
the runs that ended within the last `horizon` steps. For an anomalous step:
- run length >= permanent_min                          -> permanent
- remembered episodes + current >= intermittent_min     -> intermittent
- otherwise                                             -> transient
A run never drops to a lower label while it continues.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Tuple

from src.fault_injection import TIME_TYPES, TimeType

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeClassifierConfig:
    transient_max: int = 2
    intermittent_min_episodes: int = 3
    horizon: int = 50
    permanent_min: int = 20

    def __post_init__(self):
        if self.transient_max < 1 or self.intermittent_min_episodes < 1:
            raise ValueError("transient_max and intermittent_min_episodes must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.permanent_min <= self.transient_max:
            raise ValueError("permanent_min must exceed transient_max")


@dataclass(frozen=True)
class Episode:
    start: int
    end: int  # last anomalous step, inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


class EpisodeMemory:
    """
    Recently finished anomaly episodes.

    Episodes that ended more than `horizon` steps before the current step are
    dropped on every cleanup.
    """

    def __init__(self, horizon: int = 50):
        self.horizon = horizon
        self._episodes: Deque[Episode] = deque()

    def __len__(self) -> int:
        return len(self._episodes)

    def record(self, episode: Episode) -> None:
        self._episodes.append(episode)

    def cleanup(self, step: int) -> None:
        """Remove episodes older than the horizon"""
        while self._episodes and step - self._episodes[0].end > self.horizon:
            self._episodes.popleft()

    def episodes(self) -> List[Episode]:
        return list(self._episodes)

    def clear(self) -> None:
        self._episodes.clear()


@dataclass
class TimeClassifierState:
    config: TimeClassifierConfig = field(default_factory=TimeClassifierConfig)
    consecutive_count: int = 0
    run_start: int = -1
    run_label: TimeType = TimeType.NONE
    last_step: int = -1
    memory: EpisodeMemory = None

    def __post_init__(self):
        if self.memory is None:
            self.memory = EpisodeMemory(self.config.horizon)


def _rank(time_type: TimeType) -> int:
    return TIME_TYPES.index(time_type)


def classify_time(state: TimeClassifierState, is_anomaly: bool, step: int) -> Tuple[TimeType, TimeClassifierState]:
    """Label one step; steps must arrive in strictly increasing order"""
    if step <= state.last_step:
        raise ValueError(f"Step {step} presented after step {state.last_step}")
    cfg = state.config

    if not is_anomaly:
        if state.consecutive_count:
            state.memory.record(Episode(state.run_start, state.last_step))
            state.consecutive_count = 0
            state.run_label = TimeType.NONE
        state.memory.cleanup(step)
        state.last_step = step
        return TimeType.NONE, state

    state.memory.cleanup(step)
    if state.consecutive_count == 0:
        state.run_start = step
    state.consecutive_count += 1
    state.last_step = step

    if state.consecutive_count >= cfg.permanent_min:
        label = TimeType.PERMANENT
    elif len(state.memory) + 1 >= cfg.intermittent_min_episodes:
        label = TimeType.INTERMITTENT
    else:
        label = TimeType.TRANSIENT
    if _rank(label) < _rank(state.run_label):
        label = state.run_label
    elif label is TimeType.PERMANENT and state.run_label is not TimeType.PERMANENT:
        logger.debug("[Classify] Run from step %d became permanent at step %d", state.run_start, step)
    state.run_label = label
    return label, state


class TimeClassifier:
    """Per-stream wrapper that numbers steps itself"""

    def __init__(self, config: TimeClassifierConfig = TimeClassifierConfig()):
        self.state = TimeClassifierState(config)
        self._next_step = 0

    @property
    def run_length(self) -> int:
        return self.state.consecutive_count

    def step(self, is_anomaly: bool) -> TimeType:
        label, _ = classify_time(self.state, bool(is_anomaly), self._next_step)
        self._next_step += 1
        return label

    def reset(self) -> None:
        self.state = TimeClassifierState(self.state.config)
        self._next_step = 0
