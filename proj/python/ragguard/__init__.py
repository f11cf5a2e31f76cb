"""Retrieval-augmented malicious-intent classifier."""

from ._core import (
    Conflict,
    EncoderConfig,
    Error,
    Guard,
    InvalidArgument,
    KnowledgeBase,
    LoadError,
    Metric,
    attack_reward,
    confidence,
    embed,
    evaluate,
    run_cli,
    similarity,
    tokenize,
)

__all__ = [
    "Conflict",
    "EncoderConfig",
    "Error",
    "Guard",
    "InvalidArgument",
    "KnowledgeBase",
    "LoadError",
    "Metric",
    "attack_reward",
    "confidence",
    "embed",
    "evaluate",
    "run_cli",
    "similarity",
    "tokenize",
]
