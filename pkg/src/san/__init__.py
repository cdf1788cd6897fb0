"""Saliency-guided image-sentence matching on a from-scratch numpy autograd."""

from .errors import SanError
from .model import ABLATION_GRID, BASELINE, FULL, ModelConfig, Variant
from .training import TrainConfig

__all__ = ["ABLATION_GRID", "BASELINE", "FULL", "ModelConfig", "SanError", "TrainConfig", "Variant"]
__version__ = "0.1.0"
