"""
Base stage for experiment orchestration.
Every step of a run (inject, tune, features, train, predict, recover, score)
is a stage that reads and writes a shared StageContext.
"""
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

from src.errors import StageFailure
from src.fault_injection import SchedulePlan
from src.features import WindowConfig
from src.gru_net import TrainConfig
from src.rema import RemaParams
from src.time_classifier import TimeClassifierConfig
from src.trace_ingest import NormStats, Trace

logger = logging.getLogger(__name__)


@dataclass
class StageContext:
    """
    Inputs and intermediate artifacts of one (scenario, seed) run.

    Stages add their outputs to `artifacts` under documented keys and
    `timings` collects per-stage wall clock.
    """
    scenario: str
    seed: int
    splits: Dict[str, slice]
    out_dir: Path
    norm_stats: Optional[NormStats] = None
    plan: Optional[SchedulePlan] = None
    trace: Optional[Trace] = None  # normalized with the training split's statistics
    channels: Tuple[str, ...] = ("latitude", "longitude")
    grid: Optional[Dict[str, Sequence[Any]]] = None
    rema_params: Optional[RemaParams] = None  # skips the grid search when set
    workers: int = 1
    window_config: WindowConfig = field(default_factory=WindowConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    feed_window: int = 10
    time_config: TimeClassifierConfig = field(default_factory=TimeClassifierConfig)
    train_bias_classifier: bool = True
    write_series: bool = True
    artifacts: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def require(self, key: str) -> Any:
        if key not in self.artifacts:
            raise KeyError(f"Artifact '{key}' has not been produced by an earlier stage")
        return self.artifacts[key]


class BaseStage(ABC):
    """
    Abstract base class for experiment stages.

    Implements:
    - Timing of the stage body
    - Failure capture: the error is logged and recorded on the context,
      then re-raised as StageFailure so later stages do not run

    Subclasses should implement:
    - name
    - execute()
    """

    name: str = "stage"

    def __init__(self, context: StageContext):
        self.context = context

    @property
    def out_dir(self) -> Path:
        return self.context.out_dir

    def run(self) -> None:
        """Run the stage body, recording its duration or its failure."""
        started = time.perf_counter()
        logger.info("[%s] %s / seed %d", self.name.capitalize(), self.context.scenario, self.context.seed)
        try:
            self.execute()
        except StageFailure:
            raise
        except Exception as e:
            self.context.artifacts["failed_stage"] = self.name
            logger.error("[%s] Failed for %s / seed %d: %s", self.name.capitalize(),
                         self.context.scenario, self.context.seed, e)
            raise StageFailure(self.name, str(e)) from e
        finally:
            self.context.timings[self.name] = time.perf_counter() - started

    @abstractmethod
    def execute(self) -> None:
        """
        Do the stage's work. Must be implemented by subclasses.

        Reads earlier artifacts through context.require() and stores its own
        outputs on context.artifacts.
        """
        pass
