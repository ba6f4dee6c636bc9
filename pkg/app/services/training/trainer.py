import math
from typing import Callable, Optional

import numpy as np

from app.common.errors import TrainingDivergedError
from app.common.logging.custom_logger import LogContext
from app.common.logging.logging_config import get_logger
from app.services.gating import GateConfig, aux_density_loss, gate_density, mean_utility
from app.services.model import AttentionKind, Checkpoint, Transformer, next_token_loss
from app.services.tensor_core import Rng, Tensor
from app.services.training.evaluation import shift_batch
from app.services.training.models import Phase, TrainConfig, TrainLog, TrainMode, TrainRecord
from app.services.training.optimizer import AdamW, ParamGroup
from app.services.training.schedule import gate_for_phase, lr_at, phase_of

logger = get_logger(__name__)

# rng -> (tokens [B, T], loss_mask [B, T]); the mask marks supervised target tokens
DataSource = Callable[[Rng], tuple[np.ndarray, np.ndarray]]


def dense_layout(model: Transformer) -> None:
    """Swap every Self-Pruned KV layer and head for global attention."""
    config = model.config
    attention = [AttentionKind.GLOBAL if k is AttentionKind.SELF_PRUNED else k for k in config.attention]
    overrides = {
        key: AttentionKind.GLOBAL if kind is AttentionKind.SELF_PRUNED else kind
        for key, kind in config.head_overrides.items()
    }
    model.set_attention(attention, overrides)


def build_optimizer(model: Transformer, cfg: TrainConfig, gate: GateConfig) -> AdamW:
    groups = [
        ParamGroup(model.backbone_parameters(), lr_mult=1.0, weight_decay=cfg.weight_decay),
        ParamGroup(model.predictor_parameters(), lr_mult=gate.predictor_lr_mult, weight_decay=gate.predictor_weight_decay),
    ]
    return AdamW(groups, betas=cfg.betas, eps=cfg.eps, grad_clip=cfg.grad_clip)


def prepare_model(model: Transformer, cfg: TrainConfig) -> None:
    match cfg.mode:
        case TrainMode.DENSE:
            dense_layout(model)
        case TrainMode.FROZEN_LLM:
            model.freeze_backbone()


def train(
    model: Transformer,
    data_source: DataSource,
    cfg: TrainConfig,
    gate: GateConfig,
    rng: Rng,
    optimizer: Optional[AdamW] = None,
) -> tuple[Checkpoint, TrainLog]:
    """
    Run `cfg.total_steps` optimizer steps of the configured protocol mode.

    Two-phase modes (tahg, from-scratch) freeze the utility predictors at the
    phase-2 boundary and then anneal from soft to hard gates. A non-finite
    loss aborts with TrainingDivergedError carrying the step's record.
    """
    prepare_model(model, cfg)
    model.gate = gate
    optimizer = optimizer or build_optimizer(model, cfg, gate)
    log = TrainLog()
    predictors_frozen = False

    logger.info(
        "train_start",
        mode=cfg.mode.value,
        total_steps=cfg.total_steps,
        phase2_boundary=cfg.phase2_boundary,
        anneal_steps=cfg.effective_anneal_steps,
    )
    for step in range(cfg.total_steps):
        phase, alpha = phase_of(step, cfg)
        if phase in (Phase.ANNEALED, Phase.HARD) and not predictors_frozen:
            model.freeze_predictors()
            predictors_frozen = True
        step_gate = gate_for_phase(gate, phase, alpha)
        lr = lr_at(step, cfg)

        tokens, loss_mask = data_source(rng)
        inputs, targets, mask = shift_batch(tokens, loss_mask)
        logits, fields = model.forward(inputs, step_gate, rng)
        nll = next_token_loss(logits, targets, mask)
        aux = aux_density_loss(fields, gate.aux_weight)
        loss: Tensor = nll + aux

        record = TrainRecord(
            step=step,
            lr=lr,
            loss=loss.item(),
            aux=aux.item(),
            mean_u=mean_utility(fields),
            rho=gate_density(fields, gate.tau),
            phase=phase,
            alpha=alpha,
        )
        if not math.isfinite(record.loss):
            logger.error(
                "train_diverged",
                log_data=LogContext("train", "non-finite loss", data=record.model_dump(mode="json")),
            )
            raise TrainingDivergedError(f"non-finite loss at step {step}", record)

        model.zero_grad()
        if loss.requires_grad:
            loss.backward()
        grad_norm = optimizer.step(lr)
        log.append(record)

        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            logger.info(
                "train_step",
                step=step,
                lr=record.lr,
                loss=record.loss,
                mean_u=record.mean_u,
                rho=record.rho,
                phase=phase.value,
                grad_norm=grad_norm,
            )

    checkpoint = Checkpoint.from_model(
        model,
        step=cfg.total_steps,
        rng_state=rng.state,
        optimizer_moments=optimizer.moments(),
        mode=cfg.mode.value,
        adam_t=optimizer.t,
    )
    return checkpoint, log
