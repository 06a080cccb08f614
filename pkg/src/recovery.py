"""
EMA-based recovery of flagged readings.

Normal steps pass through. Transient and intermittent anomalies are replaced
with the denormalized REMA estimate. Permanent anomalies hold the last
trustworthy value and raise one alert per run.
"""
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd

from src.fault_injection import BiasType, TimeType
from src.rema import RemaState
from src.trace_ingest import FLOAT_FORMAT, NormStats, denormalize

logger = logging.getLogger(__name__)


class RecoveryAction(str, Enum):
    PASSTHROUGH = "passthrough"
    REPLACED = "replaced"
    ALERT = "alert"


@dataclass(frozen=True)
class RecoveryOutput:
    value: float
    action: RecoveryAction
    time_type: TimeType
    bias_type: BiasType

    def __post_init__(self):
        if self.action is RecoveryAction.ALERT and self.time_type is not TimeType.PERMANENT:
            raise ValueError("Alerts are only raised for permanent anomalies")


@dataclass(frozen=True)
class AlertEvent:
    step: int
    timestamp: float
    channel: str
    run_length: int


def recover(
    x: float,
    detection: Tuple[bool, BiasType],
    time_type: TimeType,
    rema_state: Union[RemaState, float],
    norm_stats: NormStats,
    channel: str,
    last_trustworthy: Optional[float] = None,
) -> RecoveryOutput:
    """
    Decide the emitted value for one raw reading x.

    rema_state is the channel's REMA state after this step (or its ema value,
    in normalized units). Permanent faults fall back to the EMA estimate when
    no trustworthy value has been emitted yet.
    """
    detect, bias_type = detection
    if not detect:
        return RecoveryOutput(float(x), RecoveryAction.PASSTHROUGH, TimeType.NONE, BiasType.NONE)

    ema = rema_state.ema if isinstance(rema_state, RemaState) else float(rema_state)
    estimate = denormalize(ema, norm_stats, channel)
    if time_type is TimeType.PERMANENT:
        held = estimate if last_trustworthy is None else last_trustworthy
        return RecoveryOutput(held, RecoveryAction.ALERT, time_type, bias_type)
    return RecoveryOutput(estimate, RecoveryAction.REPLACED, time_type, bias_type)


@dataclass(frozen=True)
class RecoveryRecord:
    timestamp: float
    channel: str
    value: float
    action: str
    bias_type: str
    time_type: str


class RecoveryModule:
    """Per-channel recovery stream with its alert log"""

    def __init__(self, channel: str, norm_stats: NormStats):
        self.channel = channel
        self.norm_stats = norm_stats
        self.last_trustworthy: Optional[float] = None
        self.alerts: List[AlertEvent] = []
        self.records: List[RecoveryRecord] = []
        self._alerted_run = False

    def step(
        self,
        step: int,
        timestamp: float,
        x: float,
        detection: Tuple[bool, BiasType],
        time_type: TimeType,
        rema_state: Union[RemaState, float],
        run_length: int = 0,
    ) -> RecoveryOutput:
        output = recover(
            x, detection, time_type, rema_state, self.norm_stats, self.channel, self.last_trustworthy
        )
        if output.action is RecoveryAction.ALERT:
            if not self._alerted_run:
                self._alerted_run = True
                self.alerts.append(AlertEvent(step, timestamp, self.channel, run_length))
                logger.warning(
                    "[Recover] Permanent fault on %s at step %d (run length %d)", self.channel, step, run_length
                )
        else:
            self.last_trustworthy = output.value
            if not detection[0]:
                self._alerted_run = False

        self.records.append(RecoveryRecord(
            timestamp, self.channel, output.value, output.action.value,
            output.bias_type.value, output.time_type.value,
        ))
        return output


def write_recovery_csv(records: Sequence[RecoveryRecord], path: Union[str, Path]) -> None:
    columns = ["timestamp", "channel", "value", "action", "bias_type", "time_type"]
    frame = pd.DataFrame([asdict(r) for r in records], columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_alert_log(alerts: Sequence[AlertEvent], path: Union[str, Path]) -> None:
    columns = ["step", "timestamp", "channel", "run_length"]
    frame = pd.DataFrame([asdict(a) for a in alerts], columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
