"""
Training

Learning-rate schedule, phase logic and the training loop for the dense,
soft-gated, threshold-aware hard-gated, Bernoulli, from-scratch and
frozen-LLM protocol modes.
"""

from .evaluation import evaluate_nll, hard_gate_config, shift_batch
from .models import Phase, TrainConfig, TrainLog, TrainMode, TrainRecord
from .optimizer import AdamW, ParamGroup
from .schedule import gate_for_phase, lr_at, phase_of
from .trainer import DataSource, build_optimizer, dense_layout, prepare_model, train

__all__ = [
    "TrainConfig",
    "TrainMode",
    "TrainLog",
    "TrainRecord",
    "Phase",
    "AdamW",
    "ParamGroup",
    "lr_at",
    "phase_of",
    "gate_for_phase",
    "train",
    "DataSource",
    "build_optimizer",
    "dense_layout",
    "prepare_model",
    "evaluate_nll",
    "hard_gate_config",
    "shift_batch",
]
