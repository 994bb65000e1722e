"""Coding-rate objectives, white-box ReduNet construction and closed-loop transcription."""

__version__ = "0.1.0"

from .coding_rate import (
    Partition,
    RateParams,
    alpha_for,
    class_rates,
    coding_rate,
    pairwise_rate_reduction,
    pairwise_rate_reduction_gradient,
    rate,
    rate_gradient,
    rate_reduction,
    rate_reduction_gradient,
)
from .errors import ConfigError, DegenerateInput, DivergenceError, InvalidMatrix, LDRKError, ShapeError

__all__ = [
    "ConfigError",
    "DegenerateInput",
    "DivergenceError",
    "InvalidMatrix",
    "LDRKError",
    "Partition",
    "RateParams",
    "ShapeError",
    "alpha_for",
    "class_rates",
    "coding_rate",
    "pairwise_rate_reduction",
    "pairwise_rate_reduction_gradient",
    "rate",
    "rate_gradient",
    "rate_reduction",
    "rate_reduction_gradient",
]
