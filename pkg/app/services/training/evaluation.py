from typing import Optional

import numpy as np

from app.services.gating import GateConfig, GateField, GateMode
from app.services.model import Transformer, next_token_loss
from app.services.tensor_core import Rng, no_grad


def shift_batch(tokens: np.ndarray, loss_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(inputs, targets, target mask) for next-token prediction; the mask marks supervised target tokens."""
    tokens = np.asarray(tokens, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    return tokens[:, :-1], tokens[:, 1:], loss_mask[:, 1:]


def evaluate_nll(
    model: Transformer,
    tokens: np.ndarray,
    loss_mask: np.ndarray,
    gate: Optional[GateConfig] = None,
    rng: Optional[Rng] = None,
) -> tuple[float, list[Optional[GateField]]]:
    """Masked next-token NLL without building a tape, plus the gate fields of that forward."""
    inputs, targets, mask = shift_batch(tokens, loss_mask)
    with no_grad():
        logits, fields = model.forward(inputs, gate, rng)
        loss = next_token_loss(logits, targets, mask)
    return loss.item(), fields


def hard_gate_config(gate: GateConfig, tau: Optional[float] = None) -> GateConfig:
    return gate.model_copy(update={"mode": GateMode.HARD, "tau": gate.tau if tau is None else tau})
