"""
Gating

Utility predictor and the gate modes (soft, hard, annealed, Bernoulli with
straight-through gradients) plus the auxiliary density loss.
"""

from .gates import (
    aux_density_loss,
    annealed_gate,
    bernoulli_ste_gate,
    clipped_probabilities,
    gate_bias,
    gate_density,
    hard_bias,
    hard_gate,
    mean_utility,
    soft_gate_bias,
)
from .models import GateConfig, GateField, GateMode, PredictorKind
from .predictor import UtilityPredictor, predict_utilities

__all__ = [
    "GateConfig",
    "GateField",
    "GateMode",
    "PredictorKind",
    "UtilityPredictor",
    "predict_utilities",
    "soft_gate_bias",
    "hard_gate",
    "hard_bias",
    "annealed_gate",
    "bernoulli_ste_gate",
    "clipped_probabilities",
    "gate_bias",
    "aux_density_loss",
    "mean_utility",
    "gate_density",
]
