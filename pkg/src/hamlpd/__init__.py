"""Multispectral (RGB + thermal) pedestrian detection robust to sensor blackout."""
from .attention import HybridAttention, hybrid_attention
from .blackout import Scenario, scenario_masks
from .model import HAMLPD, ModelConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "HAMLPD",
    "HybridAttention",
    "ModelConfig",
    "Scenario",
    "hybrid_attention",
    "load_checkpoint",
    "save_checkpoint",
    "scenario_masks",
]
