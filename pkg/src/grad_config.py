"""
Configuration management for the toolkit.

Profiles are YAML files in the config directory (GRAD_CONFIG_DIR, default
`configs/`); each one fills a GradConfig. String values of the form
${VAR} are replaced by the environment variable VAR, and a local .env file
is loaded first.
"""
import logging
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv

from src.errors import DataError, UsageError
from src.features import WindowConfig
from src.gru_net import TrainConfig
from src.time_classifier import TimeClassifierConfig
from src.trace_ingest import ColumnMapping

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent
_ENV_PATTERN = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")


@dataclass
class IngestConfig:
    """How raw trace files are read and split"""
    columns: Dict[str, str] = field(default_factory=lambda: ColumnMapping().columns())
    split_ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)

    def column_mapping(self) -> ColumnMapping:
        return ColumnMapping(**self.columns)


@dataclass
class GradConfig:
    """One configuration profile; defaults are the documented model settings"""
    name: str = "default"
    description: Optional[str] = None
    seed: int = 0
    channels: Tuple[str, ...] = ("latitude", "longitude")
    plan: str = "mmitss"  # preset name or path to a plan YAML
    ingest: IngestConfig = field(default_factory=IngestConfig)
    rema_grid: Optional[Dict[str, List[float]]] = None
    rema_workers: int = 1
    windows: WindowConfig = field(default_factory=WindowConfig)
    feed_window: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    time_classifier: TimeClassifierConfig = field(default_factory=TimeClassifierConfig)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.feed_window < 1:
            raise DataError(f"feed_window must be >= 1, got {self.feed_window}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GradConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"Unknown configuration key(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        nested = {
            "ingest": IngestConfig,
            "windows": WindowConfig,
            "train": TrainConfig,
            "time_classifier": TimeClassifierConfig,
        }
        try:
            for key, kind in nested.items():
                if key in data:
                    data[key] = kind(**(data[key] or {}))
            return cls(**data)
        except (TypeError, ValueError) as e:
            raise DataError(f"Invalid configuration: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "seed": self.seed,
            "channels": list(self.channels),
            "plan": self.plan,
            "ingest": {"columns": dict(self.ingest.columns), "split_ratios": list(self.ingest.split_ratios)},
            "rema_grid": self.rema_grid,
            "rema_workers": self.rema_workers,
            "windows": {
                "regression_window": self.windows.regression_window,
                "stat_window": self.windows.stat_window,
                "rsi_window": self.windows.rsi_window,
            },
            "feed_window": self.feed_window,
            "train": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "class_weights": self.train.class_weights,
                "clip_norm": self.train.clip_norm,
                "seed": self.train.seed,
                "patience": self.train.patience,
                "hidden": list(self.train.hidden),
            },
            "time_classifier": {
                "transient_max": self.time_classifier.transient_max,
                "intermittent_min_episodes": self.time_classifier.intermittent_min_episodes,
                "horizon": self.time_classifier.horizon,
                "permanent_min": self.time_classifier.permanent_min,
            },
        }


@dataclass(frozen=True)
class Settings:
    """Process-level settings taken from the environment"""
    config_dir: Path
    model_dir: Path
    api_key: Optional[str]
    host: str
    port: int
    log_level: str

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            config_dir=Path(os.getenv("GRAD_CONFIG_DIR", str(PROJECT_ROOT / "configs"))),
            model_dir=Path(os.getenv("GRAD_MODEL_DIR", str(PROJECT_ROOT / "models"))),
            api_key=os.getenv("GRAD_API_KEY") or None,
            host=os.getenv("HOST", "0.0.0.0"),
            port=int(os.getenv("PORT", "8000")),
            log_level=os.getenv("GRAD_LOG_LEVEL", "INFO").upper(),
        )


def substitute_env(value: Any) -> Any:
    """Replace ${VAR} strings (at any depth) with the environment value"""
    if isinstance(value, str):
        match = _ENV_PATTERN.match(value)
        return os.getenv(match.group(1), "") if match else value
    if isinstance(value, dict):
        return {k: substitute_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [substitute_env(v) for v in value]
    return value


class ConfigManager:
    """Manages the configuration profiles in one directory"""

    def __init__(self, config_dir: Union[str, Path, None] = None):
        self.config_dir = Path(config_dir) if config_dir is not None else Settings.from_env().config_dir
        self.profiles: Dict[str, GradConfig] = {}
        self._load_configs()

    def _load_configs(self) -> None:
        if not self.config_dir.is_dir():
            logger.debug("[Config] No config directory at %s", self.config_dir)
            return
        for config_file in sorted(self.config_dir.glob("*.yaml")):
            try:
                config = self.load_file(config_file)
            except DataError as e:
                logger.error("[Config] Error loading %s: %s", config_file, e)
                continue
            self.profiles[config.name] = config
            logger.debug("[Config] Loaded profile '%s' from %s", config.name, config_file.name)

    @staticmethod
    def load_file(path: Union[str, Path]) -> GradConfig:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"Config file {path} does not exist")
        with open(path, "r") as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise DataError(f"{path}: invalid YAML: {e}") from e
        if not isinstance(data, dict):
            raise DataError(f"{path}: expected a mapping at the top level")
        data = substitute_env(data)
        data.setdefault("name", path.stem)
        return GradConfig.from_dict(data)

    def get_profile(self, name: str) -> Optional[GradConfig]:
        return self.profiles.get(name)

    def get_all_profiles(self) -> Dict[str, GradConfig]:
        return self.profiles.copy()

    def add_profile(self, config: GradConfig) -> None:
        self.profiles[config.name] = config

    def resolve(self, reference: Optional[str]) -> GradConfig:
        """A profile by name or file path; the built-in defaults when reference is None"""
        if reference is None:
            return self.profiles.get("default", GradConfig())
        if reference in self.profiles:
            return self.profiles[reference]
        return self.load_file(reference)

    def save_config(self, config: GradConfig) -> Path:
        self.config_dir.mkdir(parents=True, exist_ok=True)
        config_file = self.config_dir / f"{config.name}.yaml"
        with open(config_file, "w") as f:
            yaml.safe_dump(config.to_dict(), f, sort_keys=False)
        logger.info("[Config] Saved profile '%s' to %s", config.name, config_file)
        return config_file

