"""
Baselines

Post-hoc retention policies (StreamingLLM, H2O, random) evaluated with
chunked prefill on a dense model.
"""

from .chunked_prefill import chunked_prefill_eval, density_from_log, evaluate_policies, retained_density, write_results
from .models import BaselineResult, EvictionEvent, EvictionPolicy, PolicyKind, PrefillResult
from .policies import (
    H2OPolicy,
    KeepAllPolicy,
    RandomPolicy,
    RetentionPolicy,
    StreamingLLMPolicy,
    h2o_keep,
    h2o_scores,
    make_policy,
)

__all__ = [
    "EvictionPolicy",
    "PolicyKind",
    "EvictionEvent",
    "PrefillResult",
    "BaselineResult",
    "RetentionPolicy",
    "KeepAllPolicy",
    "StreamingLLMPolicy",
    "H2OPolicy",
    "RandomPolicy",
    "make_policy",
    "h2o_scores",
    "h2o_keep",
    "chunked_prefill_eval",
    "retained_density",
    "density_from_log",
    "evaluate_policies",
    "write_results",
]
