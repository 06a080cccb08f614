"""
Evaluation stages on the test split: predict, recover and score.
"""
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.fault_injection import BIAS_TYPES, TIME_TYPES
from src.metrics import ClassMetrics, overall_f1, score_classification, score_detection
from src.pipeline import run_channel_batch
from src.recovery import RecoveryAction, write_alert_log, write_recovery_csv
from src.stages.base_stage import BaseStage
from src.trace_ingest import FLOAT_FORMAT

logger = logging.getLogger(__name__)

OVERALL_F1_DEFINITION = "mean(f1_normal, f1_anomaly)"

REPORT_COLUMNS = [
    "scenario", "seed", "method", "injection", "magnitude", "duration",
    "evaluated_steps", "anomaly_steps",
    "precision_normal", "recall_normal", "f1_normal",
    "precision_anomaly", "recall_anomaly", "f1_anomaly",
    "tp", "fp", "fn", "tn", "undefined",
    "overall_f1", "overall_f1_definition",
    "bias_accuracy", "time_accuracy",
    "recovery_mae", "corrupted_mae", "repaired_steps", "alerts",
]


class PredictStage(BaseStage):
    """Produces `results`: a ChannelResult per channel from the saved bundle"""

    name = "predict"

    def execute(self) -> None:
        ctx = self.context
        bundle = ctx.require("bundle")
        test = ctx.require("labeled_splits")["test"]
        ctx.artifacts["results"] = {
            channel: run_channel_batch(bundle, test.corrupted[channel], test.timestamps, channel)
            for channel in ctx.channels
        }


class RecoverStage(BaseStage):
    """
    Produces `recovery`: raw-unit errors on the replaced steps and the alert
    count. Writes the recovery stream, alert log and plot-ready series.
    """

    name = "recover"

    def execute(self) -> None:
        ctx = self.context
        results = ctx.require("results")
        test = ctx.require("labeled_splits")["test"]
        stats = ctx.norm_stats

        recovered_err, corrupted_err = [], []
        records, alerts = [], []
        for channel, result in results.items():
            idx = stats.index(channel)
            clean = test.clean[channel] * stats.std[idx] + stats.mean[idx]
            corrupted = test.corrupted[channel] * stats.std[idx] + stats.mean[idx]
            replaced = result.actions == RecoveryAction.REPLACED.value
            recovered_err.append(np.abs(result.recovered[replaced] - clean[replaced]))
            corrupted_err.append(np.abs(corrupted[replaced] - clean[replaced]))
            records.extend(result.records)
            alerts.extend(result.alerts)

            if ctx.write_series:
                labels = test.labels[channel]
                pd.DataFrame({
                    "step": np.arange(len(test)),
                    "timestamp": test.timestamps,
                    "clean": clean,
                    "corrupted": corrupted,
                    "recovered": result.recovered,
                    "truth": labels.detect,
                    "detect": result.detect.astype(int),
                    "rema_outlier": result.rema["is_outlier"].astype(int),
                    "ema": result.rema["ema_value"],
                    "action": result.actions,
                }).to_csv(self.out_dir / f"series_{channel}.csv", index=False, float_format=FLOAT_FORMAT)

        write_recovery_csv(records, self.out_dir / "recovery.csv")
        write_alert_log(alerts, self.out_dir / "alerts.csv")

        recovered_err = np.concatenate(recovered_err)
        corrupted_err = np.concatenate(corrupted_err)
        ctx.artifacts["recovery"] = {
            "recovery_mae": float(recovered_err.mean()) if len(recovered_err) else float("nan"),
            "corrupted_mae": float(corrupted_err.mean()) if len(corrupted_err) else float("nan"),
            "repaired_steps": int(len(recovered_err)),
            "alerts": len(alerts),
        }


def _detection_row(metrics: Dict[str, ClassMetrics]) -> Dict[str, Any]:
    normal, anomaly = metrics["normal"], metrics["anomaly"]
    return {
        "evaluated_steps": anomaly.tp + anomaly.fp + anomaly.fn + anomaly.tn,
        "anomaly_steps": anomaly.tp + anomaly.fn,
        "precision_normal": normal.precision,
        "recall_normal": normal.recall,
        "f1_normal": normal.f1,
        "precision_anomaly": anomaly.precision,
        "recall_anomaly": anomaly.recall,
        "f1_anomaly": anomaly.f1,
        "tp": anomaly.tp,
        "fp": anomaly.fp,
        "fn": anomaly.fn,
        "tn": anomaly.tn,
        "undefined": normal.undefined or anomaly.undefined,
        "overall_f1": overall_f1(metrics),
        "overall_f1_definition": OVERALL_F1_DEFINITION,
    }


class ScoreStage(BaseStage):
    """
    Produces `rows`: one REMA-only and one full-pipeline report row.

    The first bundle.warmup steps of every channel are excluded for both
    methods. Bias and time confusion matrices are taken on true anomalies.
    """

    name = "score"

    def _classification_accuracy(
        self, pred: np.ndarray, truth: np.ndarray, mask: np.ndarray, labels: List[str], filename: str
    ) -> Optional[float]:
        if not mask.any():
            logger.warning("[Score] No true anomalies in the test split; skipping %s", filename)
            return None
        matrix, _ = score_classification(pred, truth, mask, labels)
        matrix.to_frame().to_csv(self.out_dir / filename)
        return float(np.trace(matrix.matrix) / matrix.total)

    def execute(self) -> None:
        ctx = self.context
        bundle = ctx.require("bundle")
        results = ctx.require("results")
        test = ctx.require("labeled_splits")["test"]
        exclude = bundle.warmup

        truth, rema_pred, grad_pred = [], [], []
        bias_true, bias_pred, time_true, time_pred = [], [], [], []
        for channel, result in results.items():
            labels = test.labels[channel]
            truth.append(labels.detect[exclude:] == 1)
            rema_pred.append(result.rema["is_outlier"][exclude:])
            grad_pred.append(result.detect[exclude:])
            bias_true.append(labels.bias[exclude:])
            bias_pred.append(result.bias[exclude:])
            time_true.append(labels.time[exclude:])
            time_pred.append(result.time[exclude:])

        truth = np.concatenate(truth)
        bias_names = [b.value for b in BIAS_TYPES]
        time_names = [t.value for t in TIME_TYPES]
        bias_acc = self._classification_accuracy(
            np.array(bias_names)[np.concatenate(bias_pred)], np.array(bias_names)[np.concatenate(bias_true)],
            truth, bias_names, "bias_confusion.csv",
        )
        time_acc = self._classification_accuracy(
            np.array(time_names)[np.concatenate(time_pred)], np.array(time_names)[np.concatenate(time_true)],
            truth, time_names, "time_confusion.csv",
        )

        pinned = ctx.plan.pinned if ctx.plan is not None else None
        base = {
            "scenario": ctx.scenario,
            "seed": ctx.seed,
            "injection": pinned.kind.value if pinned else "plan",
            "magnitude": pinned.magnitude if pinned else None,
            "duration": pinned.duration if pinned else None,
        }
        rema_row = {**base, "method": "rema", **_detection_row(score_detection(np.concatenate(rema_pred), truth))}
        grad_row = {
            **base,
            "method": "grad",
            **_detection_row(score_detection(np.concatenate(grad_pred), truth)),
            "bias_accuracy": bias_acc,
            "time_accuracy": time_acc,
            **ctx.require("recovery"),
        }
        ctx.artifacts["rows"] = [rema_row, grad_row]
        logger.info(
            "[Score] %s / seed %d: REMA overall F1 %.4f, GRAD overall F1 %.4f",
            ctx.scenario, ctx.seed, rema_row["overall_f1"], grad_row["overall_f1"],
        )
