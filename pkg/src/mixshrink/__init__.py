"""Finite mixtures of linear regressions with ridge and Liu-type shrinkage."""

from .engine import Engine, FitConfig, FitResult, Init, Method, StopReason, fit
from .model import Dataset, MixtureParams

__all__ = [
    "Dataset",
    "Engine",
    "FitConfig",
    "FitResult",
    "Init",
    "Method",
    "MixtureParams",
    "StopReason",
    "fit",
]
