"""
Data preparation stages: corrupt the trace, tune REMA, extract features.
"""
import logging
from typing import Dict, Tuple

import numpy as np

from src.fault_injection import build_labeled_dataset, realized_rates, write_labeled_csv
from src.features import FeatureScaler, FrameBatch, assemble_frames
from src.rema import grid_search, outputs_to_arrays, rema_stream, save_rema_params, write_score_report
from src.stages.base_stage import BaseStage

logger = logging.getLogger(__name__)

# splits the model is fitted on; the test split only goes through the bundle
FIT_SPLITS = ("train", "validation")


class InjectStage(BaseStage):
    """Produces `labeled` and `labeled_splits` (train / validation / test)"""

    name = "inject"

    def execute(self) -> None:
        ctx = self.context
        if ctx.trace is None or ctx.plan is None:
            raise ValueError("Injection needs a normalized trace and a schedule plan")
        labeled = build_labeled_dataset(ctx.trace, ctx.plan, ctx.seed)
        ctx.artifacts["labeled"] = labeled
        ctx.artifacts["labeled_splits"] = {
            split: labeled.slice(bounds.start, bounds.stop) for split, bounds in ctx.splits.items()
        }

        for channel, by_time in realized_rates(labeled).items():
            realized = sum(rate for by_bias in by_time.values() for rate in by_bias.values())
            if realized:
                logger.debug("[Inject] %s realized anomaly rate %.4f", channel, realized)
        if ctx.write_series:
            write_labeled_csv(labeled, self.out_dir / "labeled.csv")


class TuneStage(BaseStage):
    """Produces `rema_params`, either fixed by the manifest or grid-searched on the training split"""

    name = "tune"

    def execute(self) -> None:
        ctx = self.context
        score = None
        if ctx.rema_params is not None:
            params = ctx.rema_params
            logger.info("[Tune] Using fixed REMA params")
        else:
            train = ctx.require("labeled_splits")["train"]
            channels = [c for c in ctx.channels if c in train.injected_channels]
            params, scores = grid_search(train, ctx.grid, channels=channels, workers=ctx.workers)
            score = max(s.score for s in scores)
            write_score_report(scores, self.out_dir / "rema_scores.csv")

        save_rema_params(params, self.out_dir / "rema.yaml", score)
        ctx.artifacts["rema_params"] = params


class FeatureStage(BaseStage):
    """
    Produces `scaler` (fitted on training frames) and `frames`, the scaled
    FrameBatch of every (split, channel) in FIT_SPLITS.
    """

    name = "features"

    def execute(self) -> None:
        ctx = self.context
        params = ctx.require("rema_params")
        splits = ctx.require("labeled_splits")

        raw: Dict[Tuple[str, str], FrameBatch] = {}
        for split in FIT_SPLITS:
            for channel in ctx.channels:
                series = splits[split].corrupted[channel]
                rema = outputs_to_arrays(rema_stream(series, params))
                raw[(split, channel)] = assemble_frames(series, rema, ctx.window_config)

        scaler = FeatureScaler.fit(np.concatenate([raw[("train", c)].values for c in ctx.channels]))
        ctx.artifacts["scaler"] = scaler
        ctx.artifacts["frames"] = {
            key: FrameBatch(scaler.transform(batch.values), batch.steps) for key, batch in raw.items()
        }
        logger.info(
            "[Features] %d training frames over %d channel(s)",
            sum(len(raw[("train", c)]) for c in ctx.channels), len(ctx.channels),
        )
