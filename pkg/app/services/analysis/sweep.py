from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.common.errors import ConfigurationError, ContractViolation
from app.common.logging.logging_config import get_logger
from app.services.analysis.density import density, gated_heads, z_from_fields
from app.services.gating import GateConfig
from app.services.model import Transformer
from app.services.training.evaluation import evaluate_nll, hard_gate_config, shift_batch

logger = get_logger(__name__)


def normalise_taus(taus: Sequence[float]) -> list[float]:
    taus = [float(t) for t in taus]
    bad = [t for t in taus if not 0.0 <= t <= 1.0]
    if bad:
        raise ConfigurationError(f"thresholds must lie in [0, 1], got {bad}")
    ordered = sorted(taus)
    if ordered != taus:
        logger.warning("taus_sorted", given=taus, used=ordered)
    return ordered


def sweep_tau(
    model: Transformer,
    tokens: np.ndarray,
    loss_mask: np.ndarray,
    taus: Sequence[float],
    gate: Optional[GateConfig] = None,
) -> pd.DataFrame:
    """(tau, rho, nll) rows of hard-gated evaluations; rho must not increase with tau."""
    gate = gate or model.gate
    taus = normalise_taus(taus)
    gated = gated_heads(model)
    inputs, _, _ = shift_batch(tokens, loss_mask)

    rows = []
    for tau in taus:
        nll, fields = evaluate_nll(model, tokens, loss_mask, hard_gate_config(gate, tau))
        z = z_from_fields(model, fields, *inputs.shape)
        rho = density(z, window=gate.window, gated=gated).rho
        rows.append({"tau": tau, "rho": rho, "nll": nll})
        logger.info("sweep_point", tau=tau, rho=rho, nll=nll)

    frame = pd.DataFrame(rows, columns=["tau", "rho", "nll"])
    if np.any(np.diff(frame["rho"].to_numpy()) > 0):
        raise ContractViolation("gate density increased with tau; hard gating must be monotone")
    return frame


def write_sweep(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.9g")
    return path
