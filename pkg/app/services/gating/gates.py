"""Gate-mode transformations turning utilities into additive attention biases."""

from typing import Optional, Sequence

import numpy as np

from app.common.errors import ConfigurationError, ContractViolation
from app.services.gating.models import GateConfig, GateField, GateMode
from app.services.tensor_core import Rng, Tensor, ops

NEG_INF = np.float32(-np.inf)


def soft_gate_bias(field: GateField) -> Tensor:
    return ops.log(field.u)


def hard_gate(field: GateField, tau: float) -> GateField:
    """z = 1[u >= tau]; ties are kept."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    z = field.u.data >= np.float32(tau)
    return GateField(u=field.u, z=z, active=field.active)


def hard_bias(z: np.ndarray) -> Tensor:
    return Tensor(np.where(z, np.float32(0.0), NEG_INF))


def annealed_gate(field: GateField, tau: float, alpha: float) -> Tensor:
    """(1 - alpha) * u + alpha * 1[u >= tau]; the indicator carries no gradient."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    indicator = Tensor((field.u.data >= np.float32(tau)).astype(np.float32) * np.float32(alpha))
    return ops.add(ops.scale(field.u, 1.0 - alpha), indicator)


def clipped_probabilities(u: np.ndarray, p_min: float) -> np.ndarray:
    if not 0.0 <= p_min < 0.5:
        raise ConfigurationError(f"p_min must lie in [0, 0.5), got {p_min}")
    return np.clip(u, p_min, 1.0 - p_min)


def bernoulli_ste_gate(field: GateField, p_min: float, rng: Rng) -> tuple[Tensor, np.ndarray]:
    """
    Sample z ~ Bernoulli(clip(u, p_min, 1 - p_min)).

    The forward bias is the hard 0 / -inf mask of z; the backward pass routes the
    gradient through log(u + eps) as if that had been the bias.
    """
    z = rng.bernoulli(clipped_probabilities(field.u.data, p_min))
    bias = ops.straight_through(hard_bias(z).data, ops.log(field.u))
    return bias, z


def gate_bias(field: GateField, gate: GateConfig, rng: Optional[Rng] = None) -> tuple[Tensor, Optional[np.ndarray]]:
    """Bias per (b, kv head, position) for the configured gate mode, sinks forced open."""
    z: Optional[np.ndarray] = None
    match gate.mode:
        case GateMode.SOFT:
            bias = soft_gate_bias(field)
        case GateMode.HARD:
            z = hard_gate(field, gate.tau).z
            bias = hard_bias(z)
        case GateMode.ANNEALED:
            bias = ops.log(annealed_gate(field, gate.tau, gate.alpha))
        case GateMode.BERNOULLI_STE:
            if rng is None:
                raise ContractViolation("Bernoulli gating needs an Rng handle")
            bias, z = bernoulli_ste_gate(field, gate.p_min, rng)

    if gate.n_sinks > 0:
        sink = np.arange(field.length) < gate.n_sinks
        bias = ops.mask_fill(bias, keep=~sink[None, None, :], fill=0.0)
        if z is not None:
            z = z | sink[None, None, :]
    return bias, z


def aux_density_loss(fields: Sequence[GateField], lambda_aux: float) -> Tensor:
    """-lambda * mean(u) over every gated layer, head and position."""
    if lambda_aux < 0:
        raise ConfigurationError("aux weight must be non-negative")
    fields = [f for f in fields if f is not None]
    if lambda_aux == 0.0 or not fields:
        return Tensor(np.float32(0.0))

    total = None
    count = 0
    for f in fields:
        mask = np.broadcast_to(f.active[None, :, None], f.u.shape).astype(np.float32)
        part = ops.sum(ops.mul(f.u, Tensor(mask)))
        total = part if total is None else ops.add(total, part)
        count += int(mask.sum())
    return ops.scale(total, -lambda_aux / count)


def mean_utility(fields: Sequence[GateField]) -> Optional[float]:
    values = [f.u.data[:, f.active, :] for f in fields if f is not None and f.active.any()]
    if not values:
        return None
    return float(np.concatenate([v.reshape(-1) for v in values]).astype(np.float64).mean())


def gate_density(fields: Sequence[GateField], tau: float) -> Optional[float]:
    """Fraction of gated utilities at or above tau across layers, heads and positions."""
    values = [f.u.data[:, f.active, :] for f in fields if f is not None and f.active.any()]
    if not values:
        return None
    flat = np.concatenate([v.reshape(-1) for v in values])
    return float((flat >= np.float32(tau)).mean())
