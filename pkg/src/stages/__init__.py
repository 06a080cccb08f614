"""
Experiment stages.
Each stage reads and extends a StageContext; STAGE_ORDER is the full run.
"""
from src.stages.base_stage import BaseStage, StageContext
from src.stages.evaluation import REPORT_COLUMNS, PredictStage, RecoverStage, ScoreStage
from src.stages.prepare import FeatureStage, InjectStage, TuneStage
from src.stages.training import TrainStage

STAGE_ORDER = (InjectStage, TuneStage, FeatureStage, TrainStage, PredictStage, RecoverStage, ScoreStage)

__all__ = [
    "BaseStage",
    "StageContext",
    "InjectStage",
    "TuneStage",
    "FeatureStage",
    "TrainStage",
    "PredictStage",
    "RecoverStage",
    "ScoreStage",
    "STAGE_ORDER",
    "REPORT_COLUMNS",
]
