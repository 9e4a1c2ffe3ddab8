"""Tree-augmented cross-modal encoding for complex-query video retrieval."""

from ._core import (
    ConfigError,
    FormatError,
    Model,
    NumericalError,
    ShapeError,
    TceError,
    generate_synthetic,
    gradcheck,
    rank_scores,
    ranking_loss,
    retrieval_metrics,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "NumericalError",
    "ShapeError",
    "TceError",
    "generate_synthetic",
    "gradcheck",
    "rank_scores",
    "ranking_loss",
    "retrieval_metrics",
]
