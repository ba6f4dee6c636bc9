from typing import Optional

import numpy as np

from app.common.errors import ConfigurationError, InputError
from app.services.analysis.models import DensityReport, HeadSelection, NasStrategy
from app.services.model import AttentionKind, ModelConfig
from app.services.tensor_core import Rng


def coverage(selection: HeadSelection, report: DensityReport) -> float:
    """Share of the reference model's retained keys that fall on the selected heads."""
    mass = report.mass()
    total = mass.sum()
    if total <= 0:
        raise InputError("density report retains no keys; coverage is undefined")
    return float(sum(mass[layer, head] for layer, head in selection.heads) / total)


def pattern_layers(strategy: NasStrategy, n_layers: int) -> list[int]:
    """Global layers of the 3:1 pattern, last layer first, then ascending."""
    offset = 0 if strategy is NasStrategy.A_3TO1_EARLY else 3
    layers = [i for i in range(n_layers) if i % 4 == offset and i != n_layers - 1]
    return [n_layers - 1] + layers


def select_heads(
    strategy: NasStrategy,
    budget: int,
    report: Optional[DensityReport],
    n_layers: int,
    n_heads: int,
    rng: Optional[Rng] = None,
) -> HeadSelection:
    strategy = NasStrategy(strategy)
    total = n_layers * n_heads
    if not 0 <= budget <= total:
        raise ConfigurationError(f"budget {budget} outside [0, {total}]")

    match strategy:
        case NasStrategy.A_3TO1_EARLY | NasStrategy.B_3TO1_OFFSET:
            if budget % n_heads:
                raise ConfigurationError(f"layer-pattern strategies need a budget divisible by {n_heads} heads")
            candidates = pattern_layers(strategy, n_layers)
            n_global = budget // n_heads
            if n_global > len(candidates):
                raise ConfigurationError(f"pattern offers {len(candidates)} global layers, budget asks for {n_global}")
            heads = [(layer, head) for layer in candidates[:n_global] for head in range(n_heads)]
        case NasStrategy.C_RANDOM:
            picks = (rng or Rng(0)).choice(total, budget)
            heads = [(int(i) // n_heads, int(i) % n_heads) for i in picks]
        case NasStrategy.D_DENSEST:
            if report is None:
                raise InputError("the densest-heads strategy needs a density report")
            mass = report.mass().reshape(-1)
            order = np.lexsort((np.arange(total), -mass))[:budget]
            heads = [(int(i) // n_heads, int(i) % n_heads) for i in order]
    return HeadSelection(heads=heads, strategy=strategy, budget=budget)


def apply_head_selection(config: ModelConfig, selection: HeadSelection) -> ModelConfig:
    """Hybrid layout: selected heads global, every other head sliding-window only."""
    overrides = {f"{layer}:{head}": AttentionKind.GLOBAL for layer, head in selection.heads}
    return config.with_attention(AttentionKind.SLIDING_WINDOW, overrides)
