"""Generalized advantage estimation with trust-region policy and value updates."""

from .advantage import GaeConfig, gae, k_step_advantage, td_residuals, value_targets
from .config import ExperimentConfig, load_config
from .harness import sweep, train
from .trpo import TrustRegionConfig, trpo_step
from .valuefit import ValueFitConfig, fit_value_function

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "GaeConfig", "TrustRegionConfig", "ValueFitConfig", "fit_value_function",
    "gae", "k_step_advantage", "load_config", "sweep", "td_residuals", "train", "trpo_step",
    "value_targets", "__version__",
]
