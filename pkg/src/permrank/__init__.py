"""Permutation models for collaborative ranking."""

from .core import (
    Dataset,
    DivergenceError,
    FactorPair,
    RankedList,
    ValidationError,
    suffix_log_denominators,
    user_scores,
    validate_ranked_list,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DivergenceError", "FactorPair", "RankedList", "ValidationError",
    "suffix_log_denominators", "user_scores", "validate_ranked_list",
]
