"""Multi-modal face stylization: encoder-decoder generative pipeline with
random, text-guided and image-guided style control."""

from .config import (ModelProfile, StageConfig, get_profile, load_run_config,
                     stage_defaults)
from .model import StylizerModel, clone_model

__version__ = "0.1.0"

__all__ = [
    "ModelProfile", "StageConfig", "StylizerModel", "clone_model",
    "get_profile", "load_run_config", "stage_defaults", "__version__",
]
