"""
Command-line interface.

    grad.py [--config PROFILE] [--seed N] [--out DIR] [--log-level LEVEL] <command> ...

Exit codes: 0 success, 1 usage error, 2 data error, 3 stage failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import GradError, StageFailure, UsageError
from src.experiment import load_manifest, run_experiment, window_size_study
from src.fault_injection import (
    BIAS_TYPES,
    TIME_TYPES,
    SchedulePlan,
    build_labeled_dataset,
    load_plan,
    read_labeled_csv,
    write_labeled_csv,
)
from src.features import FeatureScaler, FrameBatch, assemble_frames
from src.grad_config import ConfigManager, GradConfig, Settings
from src.pipeline import ModelBundle, StreamingPipeline, bench_latency, run_channel_batch
from src.recovery import write_alert_log, write_recovery_csv
from src.rema import load_rema_params, outputs_to_arrays, rema_stream
from src.stages import FeatureStage, StageContext, TrainStage, TuneStage
from src.synthetic import PROFILES, synthesize_trace
from src.trace_ingest import (
    FLOAT_FORMAT,
    NormStats,
    interpolate_missing,
    load_norm_stats,
    normalize,
    preprocess,
    read_trace,
    save_norm_stats,
    split_indices,
    write_rejects,
    write_trace,
)

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Reports usage problems as UsageError instead of exiting with status 2"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _seed(args: argparse.Namespace, config: GradConfig) -> int:
    return args.seed if args.seed is not None else config.seed


def _norm_stats(args: argparse.Namespace, values: np.ndarray, config: GradConfig) -> NormStats:
    if getattr(args, "norm_stats", None):
        return load_norm_stats(args.norm_stats)
    train = split_indices(len(values), config.ingest.split_ratios)["train"]
    return NormStats.fit(values[train])


def _fit_context(
    args: argparse.Namespace, config: GradConfig, out: Path, norm_stats: Optional[NormStats] = None
) -> StageContext:
    """A stage context whose labeled splits come from a labeled CSV"""
    labeled = read_labeled_csv(args.labeled)
    splits = split_indices(len(labeled), config.ingest.split_ratios)
    context = StageContext(
        scenario=Path(args.labeled).stem,
        seed=_seed(args, config),
        norm_stats=norm_stats,
        splits=splits,
        out_dir=out,
        channels=config.channels,
        grid=config.rema_grid,
        workers=getattr(args, "workers", None) or config.rema_workers,
        window_config=config.windows,
        train_config=config.train,
        feed_window=config.feed_window,
        time_config=config.time_classifier,
    )
    context.artifacts["labeled"] = labeled
    context.artifacts["labeled_splits"] = {
        name: labeled.slice(bounds.start, bounds.stop) for name, bounds in splits.items()
    }
    if getattr(args, "rema", None):
        context.artifacts["rema_params"], _ = load_rema_params(args.rema)
    return context


def cmd_preprocess(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    if args.synthetic:
        trace = interpolate_missing(synthesize_trace(args.synthetic, _seed(args, config), args.profile))
    elif args.input:
        trace = preprocess(args.input, config.ingest.column_mapping())
    else:
        raise UsageError("preprocess needs an input file or --synthetic LENGTH")
    write_trace(trace, out / "trace.csv")
    write_rejects(trace.rejects, out / "rejects.csv")
    save_norm_stats(_norm_stats(args, trace.values, config), out / "norm_stats.csv")
    logger.info("[Preprocess] %d readings, %d rejected rows, fills %s", len(trace), len(trace.rejects), trace.fill_counts)
    return 0


def cmd_inject(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    trace = read_trace(args.trace)
    stats = _norm_stats(args, trace.values, config)
    normalized, _ = normalize(trace, stats)
    plan_ref = args.plan or config.plan
    seed = _seed(args, config)
    if Path(plan_ref).is_file():
        plan, plan_seed = load_plan(plan_ref)
        if args.seed is None and plan_seed is not None:
            seed = plan_seed
    else:
        plan = SchedulePlan.preset(plan_ref)
    labeled = build_labeled_dataset(normalized, plan, seed)
    write_labeled_csv(labeled, out / "labeled.csv")
    save_norm_stats(stats, out / "norm_stats.csv")
    return 0


def cmd_tune_rema(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    context = _fit_context(args, config, out)
    TuneStage(context).run()
    return 0


def cmd_features(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    labeled = read_labeled_csv(args.labeled)
    params, _ = load_rema_params(args.rema)
    train = split_indices(len(labeled), config.ingest.split_ratios)["train"]
    batches = {}
    for channel in config.channels:
        series = labeled.corrupted[channel]
        batches[channel] = assemble_frames(series, outputs_to_arrays(rema_stream(series, params)), config.windows)

    R = config.windows.regression_window
    scaler = FeatureScaler.fit(np.concatenate([
        batch.values[max(train.start - R, 0):max(train.stop - R, 0)] for batch in batches.values()
    ]))
    scaler.save(out / "feature_scaler.csv")
    for channel, batch in batches.items():
        FrameBatch(scaler.transform(batch.values), batch.steps).to_frame().to_csv(
            out / f"features_{channel}.csv", index=False, float_format=FLOAT_FORMAT
        )
    return 0


def cmd_train(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    context = _fit_context(args, config, out, load_norm_stats(args.norm_stats))
    FeatureStage(context).run()
    TrainStage(context).run()
    logger.info("[Train] Bundle saved to %s", out / "bundle")
    return 0


def cmd_predict(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    bundle = ModelBundle.load(args.bundle)
    labeled = read_labeled_csv(args.labeled)
    frames = []
    for channel in bundle.channels:
        result = run_channel_batch(bundle, labeled.corrupted[channel], labeled.timestamps, channel)
        frames.append(pd.DataFrame({
            "timestamp": labeled.timestamps,
            "channel": channel,
            "rema_outlier": result.rema["is_outlier"].astype(int),
            "detect": result.detect.astype(int),
            "bias_type": [BIAS_TYPES[code].value for code in result.bias],
            "time_type": [TIME_TYPES[code].value for code in result.time],
        }))
    pd.concat(frames, ignore_index=True).to_csv(out / "predictions.csv", index=False, float_format=FLOAT_FORMAT)
    return 0


def cmd_recover(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    pipeline = StreamingPipeline(ModelBundle.load(args.bundle))
    for reading in read_trace(args.trace).readings:
        pipeline.process(reading)
    write_recovery_csv(pipeline.records, out / "recovery.csv")
    write_alert_log(pipeline.alerts, out / "alerts.csv")
    logger.info("[Recover] %d records, %d alerts", len(pipeline.records), len(pipeline.alerts))
    return 0


def cmd_evaluate(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest.seeds = [args.seed]
    report = run_experiment(manifest, out)
    if not report.ok:
        scenario, seed, stage = report.failures[0]
        raise StageFailure(stage, f"{len(report.failures)} run(s) failed, first: {scenario} / seed {seed}")
    return 0


def cmd_bench(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    pipeline = StreamingPipeline(ModelBundle.load(args.bundle))
    stream = read_trace(args.trace).readings[:args.points]
    stats = bench_latency(pipeline, stream, args.repetitions)
    pd.DataFrame([stats.to_dict()]).to_csv(out / "latency.csv", index=False)
    print(f"median {stats.median_s * 1e6:.1f} us, p99 {stats.p99_s * 1e6:.1f} us per point")
    return 0


def cmd_study_window(args: argparse.Namespace, config: GradConfig, out: Path) -> int:
    table = window_size_study(load_manifest(args.manifest), args.sizes, out, args.points, args.repetitions)
    print(table.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grad", description="Streaming GPS anomaly detection, classification and recovery")
    parser.add_argument("--config", help="configuration profile name or YAML file")
    parser.add_argument("--seed", type=int, help="random seed (overrides the profile)")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default: $GRAD_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = commands.add_parser("preprocess", help="parse, sort/merge and interpolate a raw trace")
    p.add_argument("input", nargs="?", help="raw trace CSV")
    p.add_argument("--synthetic", type=int, metavar="LENGTH", help="generate a synthetic trace instead")
    p.add_argument("--profile", default="mmitss", choices=sorted(PROFILES))
    p.set_defaults(handler=cmd_preprocess)

    p = commands.add_parser("inject", help="build a labeled dataset from a preprocessed trace")
    p.add_argument("trace", help="trace CSV written by preprocess")
    p.add_argument("--plan", help="plan preset (mmitss, zurich) or plan YAML")
    p.add_argument("--norm-stats", help="normalization statistics CSV (default: fit on the training block)")
    p.set_defaults(handler=cmd_inject)

    p = commands.add_parser("tune-rema", help="grid-search REMA parameters on the training block")
    p.add_argument("labeled", help="labeled CSV written by inject")
    p.add_argument("--workers", type=int, help="process pool size")
    p.set_defaults(handler=cmd_tune_rema)

    p = commands.add_parser("features", help="extract scaled feature frames")
    p.add_argument("labeled")
    p.add_argument("--rema", required=True, help="REMA params YAML")
    p.set_defaults(handler=cmd_features)

    p = commands.add_parser("train", help="train the detector and bias classifier into a bundle")
    p.add_argument("labeled")
    p.add_argument("--rema", required=True, help="REMA params YAML")
    p.add_argument("--norm-stats", required=True, help="normalization statistics CSV")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("predict", help="detect and type anomalies in a labeled CSV")
    p.add_argument("bundle", help="model bundle directory")
    p.add_argument("labeled")
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("recover", help="stream a raw-unit trace through the pipeline")
    p.add_argument("bundle")
    p.add_argument("trace")
    p.set_defaults(handler=cmd_recover)

    p = commands.add_parser("evaluate", help="run an experiment manifest")
    p.add_argument("manifest")
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("bench", help="per-point pipeline latency")
    p.add_argument("bundle")
    p.add_argument("trace")
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(handler=cmd_bench)

    p = commands.add_parser("study-window", help="metrics and latency per feed-window size")
    p.add_argument("manifest")
    p.add_argument("--sizes", type=int, nargs="+", default=[10, 50])
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(handler=cmd_study_window)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = Settings.from_env()
        args = build_parser().parse_args(argv)
        level = (args.log_level or settings.log_level).upper()
        if not isinstance(logging.getLevelName(level), int):
            raise UsageError(f"Unknown log level '{level}'")
    except (UsageError, ValueError) as e:
        print(e, file=sys.stderr)
        return UsageError.exit_code

    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        build_parser().print_help(sys.stderr)
        return UsageError.exit_code

    try:
        config = ConfigManager(settings.config_dir).resolve(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return args.handler(args, config, out)
    except GradError as e:
        logger.error("%s", e)
        return e.exit_code
    except (ValueError, KeyError, OSError) as e:
        logger.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
