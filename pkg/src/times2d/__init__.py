"""Multi-period 2D folding and derivative-heatmap time-series forecaster."""

from .autodiff import Tensor, backward, finite_diff_check, no_grad
from .model import ModelConfig, Times2D
from .spectral import PeriodSet, Spectrum, fold_to_2d, rfft_magnitude, top_k_periods, unfold_to_1d
from .training import TrainConfig, train

__all__ = [
    "Tensor",
    "backward",
    "finite_diff_check",
    "no_grad",
    "ModelConfig",
    "Times2D",
    "PeriodSet",
    "Spectrum",
    "fold_to_2d",
    "rfft_magnitude",
    "top_k_periods",
    "unfold_to_1d",
    "TrainConfig",
    "train",
]

__version__ = "0.1.0"
