"""
Registry of the model bundles served online
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

from src.errors import GradError
from src.grad_config import Settings
from src.pipeline import BUNDLE_FILES, ModelBundle

logger = logging.getLogger(__name__)


class ModelRegistry:
    """
    Registry of model bundles, one per sub-directory of the model directory
    (GRAD_MODEL_DIR). Uses singleton pattern to ensure single registry instance.
    """

    _instance = None

    def __new__(cls, model_dir: Union[str, Path, None] = None):
        if cls._instance is None:
            cls._instance = super(ModelRegistry, cls).__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self, model_dir: Union[str, Path, None] = None):
        if self._initialized:
            return

        self.model_dir = Path(model_dir) if model_dir is not None else Settings.from_env().model_dir
        self.models: Dict[str, ModelBundle] = {}
        self._initialized = True
        self._load_models()

    def _load_models(self) -> None:
        """Load every bundle directory found in the model directory"""
        if not self.model_dir.is_dir():
            logger.warning("[Registry] Model directory %s does not exist", self.model_dir)
            return
        for bundle_dir in sorted(p for p in self.model_dir.iterdir() if (p / BUNDLE_FILES["manifest"]).is_file()):
            try:
                self.models[bundle_dir.name] = ModelBundle.load(bundle_dir)
                logger.info("[Registry] Registered model: %s", bundle_dir.name)
            except (GradError, OSError, ValueError) as e:
                logger.error("[Registry] Error loading model %s: %s", bundle_dir.name, e)

    def get_model(self, model_id: str) -> Optional[ModelBundle]:
        return self.models.get(model_id)

    def get_all_models(self) -> Dict[str, ModelBundle]:
        return self.models.copy()

    def register_model(self, model_id: str, bundle: ModelBundle) -> ModelBundle:
        self.models[model_id] = bundle
        return bundle

    def unregister_model(self, model_id: str) -> bool:
        if model_id in self.models:
            del self.models[model_id]
            return True
        return False

    def reload(self, model_dir: Union[str, Path, None] = None) -> None:
        """Reload all bundles, optionally from a different directory"""
        if model_dir is not None:
            self.model_dir = Path(model_dir)
        self.models.clear()
        self._load_models()


def get_model_registry() -> ModelRegistry:
    return ModelRegistry()
