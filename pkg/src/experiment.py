"""
Experiment orchestration.

An experiment manifest (YAML, validated with pydantic) names the data, the
injection scenarios, the seeds and every model setting. run_experiment runs
the full stage chain for each (scenario, seed) and writes a report bundle:

    <out>/report.csv          metric rows (deterministic for fixed seeds)
    <out>/manifest.resolved   the manifest with every default filled in
    <out>/hashes.txt          sha256 of the inputs and of report.csv
    <out>/timings.csv         per-stage wall clock
    <out>/<scenario>/seed-<n>/  per-run artifacts and plot-ready series
"""
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from src.errors import DataError, StageFailure
from src.fault_injection import InjectionKind, SchedulePlan, load_plan
from src.features import WindowConfig
from src.gru_net import TrainConfig
from src.pipeline import ModelBundle, StreamingPipeline, bench_latency
from src.rema import RemaParams
from src.stages import REPORT_COLUMNS, STAGE_ORDER, StageContext
from src.synthetic import synthesize_trace
from src.time_classifier import TimeClassifierConfig
from src.trace_ingest import (
    CHANNELS,
    FLOAT_FORMAT,
    ColumnMapping,
    NormStats,
    Trace,
    interpolate_missing,
    normalize,
    preprocess,
    split_indices,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    trace: Optional[str] = None  # raw CSV; a synthetic trace is generated when absent
    columns: Optional[Dict[str, str]] = None
    synthetic_length: int = Field(20000, ge=200)
    profile: str = "mmitss"
    trace_seed: int = 0


class SplitSection(_Section):
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)


class RemaSection(_Section):
    grid: Optional[Dict[str, List[float]]] = None
    params: Optional[Dict[str, float]] = None
    workers: int = Field(1, ge=1)


class FeatureSection(_Section):
    regression_window: int = 20
    stat_window: int = 10
    rsi_window: Optional[int] = None


class TrainSection(_Section):
    window: int = Field(10, ge=1)
    hidden: List[int] = Field(default_factory=lambda: [32, 16])
    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(64, ge=1)
    patience: int = Field(5, ge=1)
    clip_norm: float = Field(5.0, gt=0)
    class_weights: Union[str, List[float], None] = "balanced"
    bias_classifier: bool = True


class TimeSection(_Section):
    transient_max: int = 2
    intermittent_min_episodes: int = 3
    horizon: int = 50
    permanent_min: int = 20


class InjectionSection(_Section):
    """One row of the injection grid"""
    kind: InjectionKind
    magnitude: float = Field(gt=0)
    duration: int = Field(1, ge=1)
    rate: float = Field(0.05, gt=0, le=0.5)
    channels: List[str] = Field(default_factory=lambda: ["latitude", "longitude"])


class ScenarioSection(_Section):
    name: str
    preset: Optional[str] = None
    plan: Optional[str] = None  # path to a plan YAML, relative to the manifest
    injection: Optional[InjectionSection] = None
    options: Dict[str, Any] = Field(default_factory=dict)  # extra SchedulePlan fields

    @model_validator(mode="after")
    def _one_source(self) -> "ScenarioSection":
        sources = [s for s in (self.preset, self.plan, self.injection) if s is not None]
        if len(sources) != 1:
            raise ValueError(f"Scenario '{self.name}' must set exactly one of preset, plan or injection")
        return self


class ExperimentManifest(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "experiment"
    data: DataSection = Field(default_factory=DataSection)
    split: SplitSection = Field(default_factory=SplitSection)
    rema: RemaSection = Field(default_factory=RemaSection)
    features: FeatureSection = Field(default_factory=FeatureSection)
    train: TrainSection = Field(default_factory=TrainSection)
    time_classifier: TimeSection = Field(default_factory=TimeSection)
    scenarios: List[ScenarioSection] = Field(min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    channels: List[str] = Field(default_factory=lambda: ["latitude", "longitude"], min_length=1)
    write_series: bool = True

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @model_validator(mode="after")
    def _check_names(self) -> "ExperimentManifest":
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise ValueError(f"Unknown channel(s): {', '.join(sorted(unknown))}")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ValueError("Scenario names must be unique")
        return self

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve_path(self, path: str) -> Path:
        resolved = Path(path)
        return resolved if resolved.is_absolute() else self._base_dir / resolved

    def window_config(self) -> WindowConfig:
        return WindowConfig(**self.features.model_dump())

    def train_config(self) -> TrainConfig:
        section = self.train.model_dump(exclude={"window", "bias_classifier"})
        return TrainConfig(**section)

    def time_config(self) -> TimeClassifierConfig:
        return TimeClassifierConfig(**self.time_classifier.model_dump())

    def fixed_rema_params(self) -> Optional[RemaParams]:
        return RemaParams(**self.rema.params) if self.rema.params else None

    def build_plan(self, scenario: ScenarioSection) -> SchedulePlan:
        options = dict(scenario.options)
        if scenario.injection is not None:
            row = scenario.injection
            return SchedulePlan.for_injection(
                row.kind, row.magnitude, row.duration, row.rate, row.channels, **options
            )
        if scenario.preset is not None:
            return SchedulePlan.from_dict({"preset": scenario.preset, **options})
        plan, _ = load_plan(self.resolve_path(scenario.plan))
        return plan


def load_manifest(path: Union[str, Path]) -> ExperimentManifest:
    """Read and validate a manifest; relative paths inside resolve against its directory"""
    path = Path(path)
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise DataError(f"Cannot read manifest {path}: {e}") from e
    except yaml.YAMLError as e:
        raise DataError(f"{path}: invalid YAML: {e}") from e
    manifest = parse_manifest(data)
    manifest._base_dir = path.resolve().parent
    return manifest


def parse_manifest(data: Dict[str, Any]) -> ExperimentManifest:
    try:
        return ExperimentManifest.model_validate(data)
    except ValidationError as e:
        raise DataError(f"Invalid experiment manifest: {e}") from e


def load_trace(manifest: ExperimentManifest) -> Trace:
    """The manifest's raw trace, preprocessed, or its synthetic stand-in"""
    data = manifest.data
    if data.trace:
        mapping = ColumnMapping(**data.columns) if data.columns else None
        trace = preprocess(manifest.resolve_path(data.trace), mapping)
    else:
        trace = interpolate_missing(synthesize_trace(data.synthetic_length, data.trace_seed, data.profile))
    logger.info("[Experiment] Trace '%s' with %d readings", trace.source_id, len(trace))
    return trace


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _input_hashes(manifest: ExperimentManifest, trace: Trace) -> List[Tuple[str, str]]:
    hashes = []
    if manifest.data.trace:
        path = manifest.resolve_path(manifest.data.trace)
        hashes.append((_sha256_file(path), f"data:{path.name}"))
    values = np.ascontiguousarray(np.column_stack([trace.timestamps, trace.values]), dtype="<f8")
    hashes.append((hashlib.sha256(values.tobytes()).hexdigest(), "trace:preprocessed"))
    for scenario in manifest.scenarios:
        if scenario.plan:
            path = manifest.resolve_path(scenario.plan)
            hashes.append((_sha256_file(path), f"plan:{path.name}"))
    return hashes


@dataclass
class ExperimentReport:
    report: pd.DataFrame
    out_dir: Path
    timings: pd.DataFrame
    bundles: Dict[Tuple[str, int], Path] = field(default_factory=dict)
    failures: List[Tuple[str, int, str]] = field(default_factory=list)  # (scenario, seed, stage)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(manifest: ExperimentManifest, out_dir: Union[str, Path]) -> ExperimentReport:
    """
    Run every (scenario, seed) through the stage chain and write the report bundle.

    A failing stage aborts the rest of its run; the run appears in report.csv
    with status 'failed:<stage>' and the other runs continue.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    trace = load_trace(manifest)
    splits = split_indices(len(trace), manifest.split.ratios)
    stats = NormStats.fit(trace.values[splits["train"]])
    normalized, _ = normalize(trace, stats)

    plans = {s.name: manifest.build_plan(s) for s in manifest.scenarios}
    resolved = {
        **manifest.model_dump(mode="json"),
        "resolved_plans": {name: plan.to_dict() for name, plan in plans.items()},
        "norm_stats": {"channels": list(stats.channels), "mean": list(stats.mean), "std": list(stats.std)},
        "overall_f1": "mean(f1_normal, f1_anomaly)",
    }
    with open(out_dir / "manifest.resolved", "w") as f:
        yaml.safe_dump(resolved, f, sort_keys=False)

    rows: List[Dict[str, Any]] = []
    timings: List[Dict[str, Any]] = []
    report = ExperimentReport(pd.DataFrame(), out_dir, pd.DataFrame())

    for scenario in manifest.scenarios:
        for seed in manifest.seeds:
            run_dir = out_dir / scenario.name / f"seed-{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            context = StageContext(
                scenario=scenario.name,
                seed=seed,
                plan=plans[scenario.name],
                trace=normalized,
                norm_stats=stats,
                splits=splits,
                out_dir=run_dir,
                channels=tuple(manifest.channels),
                grid=manifest.rema.grid,
                rema_params=manifest.fixed_rema_params(),
                workers=manifest.rema.workers,
                window_config=manifest.window_config(),
                train_config=manifest.train_config(),
                feed_window=manifest.train.window,
                time_config=manifest.time_config(),
                train_bias_classifier=manifest.train.bias_classifier,
                write_series=manifest.write_series,
            )
            try:
                for stage_cls in STAGE_ORDER:
                    stage_cls(context).run()
            except StageFailure as e:
                report.failures.append((scenario.name, seed, e.stage))
                rows.append({"scenario": scenario.name, "seed": seed, "status": f"failed:{e.stage}"})
            else:
                rows.extend({**row, "status": "ok"} for row in context.artifacts["rows"])
                report.bundles[(scenario.name, seed)] = run_dir / "bundle"
            finally:
                timings.extend(
                    {"scenario": scenario.name, "seed": seed, "stage": stage, "seconds": seconds}
                    for stage, seconds in context.timings.items()
                )

    report.report = pd.DataFrame(rows, columns=REPORT_COLUMNS + ["status"])
    report.report.to_csv(out_dir / "report.csv", index=False, float_format=FLOAT_FORMAT)
    report.timings = pd.DataFrame(timings, columns=["scenario", "seed", "stage", "seconds"])
    report.timings.to_csv(out_dir / "timings.csv", index=False)

    hashes = _input_hashes(manifest, trace)
    hashes.append((_sha256_file(out_dir / "report.csv"), "report.csv"))
    with open(out_dir / "hashes.txt", "w") as f:
        f.writelines(f"{digest}  {name}\n" for digest, name in hashes)

    if report.failures:
        logger.warning("[Experiment] %d run(s) failed: %s", len(report.failures), report.failures)
    logger.info("[Experiment] Report written to %s", out_dir / "report.csv")
    return report


def window_size_study(
    manifest: ExperimentManifest,
    sizes: Sequence[int],
    out_dir: Union[str, Path],
    bench_points: int = 2000,
    repetitions: int = 3,
) -> pd.DataFrame:
    """
    Train and evaluate the manifest once per feed-window size.

    Each row holds the mean GRU metrics over the manifest's runs and the
    per-point streaming latency of the first run's bundle.
    """
    if not sizes:
        raise DataError("Window study needs at least one window size")
    if len(set(sizes)) != len(sizes):
        raise DataError(f"Duplicate window sizes in {list(sizes)}")
    out_dir = Path(out_dir)
    stream = load_trace(manifest).readings[:bench_points]

    rows = []
    for size in sizes:
        variant = manifest.model_copy(deep=True)
        variant.train.window = int(size)
        variant._base_dir = manifest.base_dir
        result = run_experiment(variant, out_dir / f"window-{size}")
        grad = result.report[(result.report["method"] == "grad") & (result.report["status"] == "ok")]
        if grad.empty or not result.bundles:
            raise StageFailure("study-window", f"No successful run for window {size}")

        bundle = ModelBundle.load(next(iter(result.bundles.values())))
        latency = bench_latency(StreamingPipeline(bundle), stream, repetitions)
        rows.append({
            "window": int(size),
            "f1_normal": float(grad["f1_normal"].mean()),
            "f1_anomaly": float(grad["f1_anomaly"].mean()),
            "overall_f1": float(grad["overall_f1"].mean()),
            "median_latency_s": latency.median_s,
            "p99_latency_s": latency.p99_s,
        })

    table = pd.DataFrame(rows)
    table.to_csv(out_dir / "window_study.csv", index=False, float_format=FLOAT_FORMAT)
    return table
