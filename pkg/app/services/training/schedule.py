import math

from app.services.gating import GateConfig, GateMode
from app.services.training.models import Phase, TrainConfig, TrainMode


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup, constant peak, then cosine down to final_lr_fraction * peak at the last step."""
    peak = cfg.peak_lr
    if step < cfg.warmup_steps:
        return peak * step / cfg.warmup_steps
    if step < cfg.decay_start_step:
        return peak
    final = cfg.final_lr_fraction * peak
    span = cfg.total_steps - 1 - cfg.decay_start_step
    if span <= 0:
        return peak if step == cfg.decay_start_step else final
    progress = min((step - cfg.decay_start_step) / span, 1.0)
    return final + 0.5 * (peak - final) * (1.0 + math.cos(math.pi * progress))


def phase_of(step: int, cfg: TrainConfig) -> tuple[Phase, float]:
    match cfg.mode:
        case TrainMode.DENSE:
            return Phase.DENSE, 0.0
        case TrainMode.BERNOULLI_STE:
            return Phase.BERNOULLI, 0.0
        case TrainMode.SOFT_CPT | TrainMode.FROZEN_LLM:
            return Phase.SOFT, 0.0

    # two-phase modes
    boundary = cfg.phase2_boundary
    if step < boundary:
        return Phase.SOFT, 0.0
    anneal = cfg.effective_anneal_steps
    alpha = 1.0 if anneal == 0 else min(max((step - boundary) / anneal, 0.0), 1.0)
    if alpha >= 1.0:
        return Phase.HARD, 1.0
    return Phase.ANNEALED, alpha


def gate_for_phase(gate: GateConfig, phase: Phase, alpha: float) -> GateConfig:
    mode = {
        Phase.DENSE: GateMode.SOFT,
        Phase.SOFT: GateMode.SOFT,
        Phase.ANNEALED: GateMode.ANNEALED,
        Phase.HARD: GateMode.HARD,
        Phase.BERNOULLI: GateMode.BERNOULLI_STE,
    }[phase]
    return gate.model_copy(update={"mode": mode, "alpha": alpha})
