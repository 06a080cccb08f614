"""
Model training stage: GRU detector plus the noise/jump bias classifier.
"""
import logging
from dataclasses import replace
from typing import Callable, Tuple

import numpy as np

from src.fault_injection import BiasType, ChannelLabels
from src.features import FEATURE_NAMES, make_windows
from src.gru_net import JUMP_CODE, train, write_training_log
from src.pipeline import ModelBundle
from src.stages.base_stage import BaseStage

logger = logging.getLogger(__name__)


class TrainStage(BaseStage):
    """
    Produces `bundle`, saved under <out>/bundle.

    The bias classifier is trained on windows whose final step is a true
    anomaly (noise -> 0, jump -> 1). When the training split holds a single
    bias type no classifier is trained and the bundle flags that type.
    """

    name = "train"

    def _windows(self, split: str, target: Callable[[ChannelLabels], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        ctx = self.context
        frames = ctx.require("frames")
        labels = ctx.require("labeled_splits")[split].labels
        R = ctx.window_config.regression_window
        X_parts, y_parts = [], []
        for channel in ctx.channels:
            X, y = make_windows(frames[(split, channel)].values, target(labels[channel])[R:], ctx.feed_window)
            X_parts.append(X)
            y_parts.append(y)
        return np.concatenate(X_parts), np.concatenate(y_parts)

    def execute(self) -> None:
        ctx = self.context
        config = replace(ctx.train_config, seed=ctx.seed)

        X_train, y_train = self._windows("train", lambda labels: labels.detect)
        X_val, y_val = self._windows("validation", lambda labels: labels.detect)
        detector = train(X_train, y_train, config, X_val, y_val, FEATURE_NAMES)
        write_training_log(detector, self.out_dir / "training_log.csv")

        Xb_train, yb_train = self._windows("train", lambda labels: labels.bias)
        Xb_val, yb_val = self._windows("validation", lambda labels: labels.bias)
        flagged, flagged_val = yb_train != 0, yb_val != 0
        yb_train = (yb_train[flagged] == JUMP_CODE).astype(np.int64)
        yb_val = (yb_val[flagged_val] == JUMP_CODE).astype(np.int64)

        bias_clf = None
        default_bias = BiasType.NOISE if len(yb_train) and not yb_train.any() else BiasType.JUMP
        if ctx.train_bias_classifier and len(np.unique(yb_train)) == 2:
            bias_clf = train(
                Xb_train[flagged], yb_train, replace(config, seed=ctx.seed + 1),
                Xb_val[flagged_val], yb_val, FEATURE_NAMES,
            )
            write_training_log(bias_clf, self.out_dir / "bias_training_log.csv")
        else:
            logger.info("[Train] No bias classifier trained; flagged steps are typed as %s", default_bias.value)

        bundle = ModelBundle(
            detector=detector,
            rema_params=ctx.require("rema_params"),
            norm_stats=ctx.norm_stats,
            scaler=ctx.require("scaler"),
            window_config=ctx.window_config,
            time_config=ctx.time_config,
            bias_clf=bias_clf,
            default_bias=default_bias,
            channels=ctx.channels,
            name=f"{ctx.scenario}-seed{ctx.seed}",
        )
        bundle.save(self.out_dir / "bundle")
        ctx.artifacts["bundle"] = bundle
