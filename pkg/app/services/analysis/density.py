from typing import Any, Optional

import numpy as np

from app.common.errors import ShapeError
from app.services.analysis.models import DensityReport
from app.services.gating import GateConfig
from app.services.model import AttentionKind, Transformer
from app.services.tensor_core import no_grad
from app.services.training.evaluation import hard_gate_config


def density(
    z_traces: np.ndarray,
    window: int = 0,
    gated: Optional[np.ndarray] = None,
    metadata: Optional[dict[str, Any]] = None,
) -> DensityReport:
    """
    Gate density from binary decisions z [L, K, T] or [L, K, N, T].

    The last `window` positions of each sequence never left the window, so
    they are counted separately and kept out of the density.
    """
    z = np.asarray(z_traces).astype(bool)
    if z.ndim == 3:
        z = z[:, :, None, :]
    if z.ndim != 4:
        raise ShapeError(f"z traces must be [L, K, T] or [L, K, N, T], got shape {z.shape}")
    n_layers, n_heads, n_seq, length = z.shape
    cut = max(length - window, 0)

    retained = z[..., :cut].sum(axis=(2, 3))
    window_retained = z[..., cut:].sum(axis=(2, 3))
    tokens = np.full((n_layers, n_heads), n_seq * cut, dtype=np.int64)
    matrix = np.divide(retained, tokens, out=np.zeros((n_layers, n_heads)), where=tokens > 0)

    gated = np.ones((n_layers, n_heads), dtype=bool) if gated is None else np.asarray(gated, dtype=bool)
    total = int(tokens[gated].sum())
    rho = float(retained[gated].sum() / total) if total else 0.0
    return DensityReport(
        matrix=matrix.tolist(),
        retained=retained.astype(int).tolist(),
        window_retained=window_retained.astype(int).tolist(),
        tokens=tokens.astype(int).tolist(),
        gated=gated.tolist(),
        rho=rho,
        window=window,
        metadata=metadata or {},
    )


def gated_heads(model: Transformer) -> np.ndarray:
    config = model.config
    return np.array([[k is AttentionKind.SELF_PRUNED for k in config.head_kinds(layer)] for layer in range(config.n_layers)])


def z_from_fields(model: Transformer, fields: list, n_seq: int, length: int) -> np.ndarray:
    """
    Hard-gated decisions z [L, K, N, T] from the gate fields of a forward.

    Global heads count as always retained and sliding-window heads as never,
    matching what the decode cache writes for them.
    """
    config = model.config
    z = np.zeros((config.n_layers, config.n_kv_heads, n_seq, length), dtype=bool)
    for layer, field in enumerate(fields):
        for head, kind in enumerate(config.head_kinds(layer)):
            if kind is AttentionKind.GLOBAL:
                z[layer, head] = True
            elif kind is AttentionKind.SELF_PRUNED:
                z[layer, head] = field.z[:, head, :]
    return z


def collect_z(model: Transformer, tokens: np.ndarray, tau: float, gate: Optional[GateConfig] = None) -> np.ndarray:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    with no_grad():
        _, fields = model.forward(tokens, hard_gate_config(gate or model.gate, tau))
    return z_from_fields(model, fields, *tokens.shape)


def density_report(
    model: Transformer,
    tokens: np.ndarray,
    tau: Optional[float] = None,
    gate: Optional[GateConfig] = None,
    metadata: Optional[dict[str, Any]] = None,
) -> DensityReport:
    gate = gate or model.gate
    tau = gate.tau if tau is None else tau
    z = collect_z(model, tokens, tau, gate)
    meta = {"tau": tau, "n_sequences": int(z.shape[2]), "length": int(z.shape[3]), **(metadata or {})}
    return density(z, window=gate.window, gated=gated_heads(model), metadata=meta)
