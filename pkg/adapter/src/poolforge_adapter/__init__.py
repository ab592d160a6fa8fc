"""Masked-language-model adapter for the active-learning engine."""

from .calibrate import calibrated_distributions
from .fusion_torch import PromptFusion
from .runner import AdapterConfig, PromptedMLM, build_model, export_artifacts, run_exchange

__all__ = [
    "AdapterConfig",
    "PromptFusion",
    "PromptedMLM",
    "build_model",
    "calibrated_distributions",
    "export_artifacts",
    "run_exchange",
]
