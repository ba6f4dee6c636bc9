import math
from typing import Optional

import numpy as np

from app.common.errors import ShapeError
from app.services.attention.models import MaskSpec
from app.services.tensor_core import Tensor, ops

NEG_INF = float("-inf")


def build_bias(mask: MaskSpec, gate_bias: Tensor) -> Tensor:
    """
    Combined causal + window + gate bias of shape [B, H_q, T, T].

    In-window pairs get 0, causal pairs outside the window get the key's gate
    bias (broadcast from its kv head to the query group), future keys get -inf.
    """
    if gate_bias.ndim != 3 or gate_bias.shape[2] != mask.length:
        raise ShapeError(f"gate bias must be [B, H_kv, {mask.length}], got {gate_bias.shape}")
    batch, n_kv, length = gate_bias.shape
    if mask.n_q_heads % n_kv:
        raise ShapeError(f"{mask.n_q_heads} query heads cannot be grouped over {n_kv} kv heads")
    group = mask.n_q_heads // n_kv

    in_window, out_of_window = mask.regions()
    causal = in_window | out_of_window
    spread = ops.add(
        ops.reshape(gate_bias, (batch, n_kv, 1, 1, length)),
        Tensor(np.zeros((1, 1, group, length, length), dtype=np.float32)),
    )
    bias = ops.mask_fill(spread, keep=out_of_window, fill=0.0)
    bias = ops.mask_fill(bias, keep=causal, fill=NEG_INF)
    return ops.reshape(bias, (batch, mask.n_q_heads, length, length))


def gated_attention(
    q: Tensor, k: Tensor, v: Tensor, bias: Tensor, return_probs: bool = False
) -> Tensor | tuple[Tensor, Tensor]:
    """
    o = softmax(q k^T / sqrt(D) + bias) v with grouped kv heads.

    q: [B, H_q, Tq, D]; k, v: [B, H_kv, Tk, D]; bias: [B, H_q, Tq, Tk].
    """
    batch, n_q, n_queries, dim = q.shape
    n_kv, n_keys = k.shape[1], k.shape[2]
    if k.shape != v.shape or k.shape[0] != batch or k.shape[3] != dim:
        raise ShapeError(f"incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    if n_q % n_kv:
        raise ShapeError(f"{n_q} query heads cannot be grouped over {n_kv} kv heads")
    if bias.shape != (batch, n_q, n_queries, n_keys):
        raise ShapeError(f"bias must be {(batch, n_q, n_queries, n_keys)}, got {bias.shape}")
    group = n_q // n_kv

    q5 = ops.reshape(q, (batch, n_kv, group, n_queries, dim))
    k5 = ops.reshape(k, (batch, n_kv, 1, n_keys, dim))
    v5 = ops.reshape(v, (batch, n_kv, 1, n_keys, dim))
    scores = ops.scale(ops.matmul(q5, ops.transpose(k5, (0, 1, 2, 4, 3))), 1.0 / math.sqrt(dim))
    probs = ops.softmax_lastdim(scores, ops.reshape(bias, (batch, n_kv, group, n_queries, n_keys)))
    out = ops.reshape(ops.matmul(probs, v5), (batch, n_q, n_queries, dim))
    if return_probs:
        return out, ops.reshape(probs, (batch, n_q, n_queries, n_keys))
    return out


def causal_bias(batch: int, n_q_heads: int, length: int, visible: Optional[np.ndarray] = None) -> Tensor:
    """Constant 0 / -inf bias from a boolean visibility grid (defaults to plain causal)."""
    if visible is None:
        visible = np.tril(np.ones((length, length), dtype=bool))
    grid = np.where(visible, np.float32(0.0), np.float32(NEG_INF))
    return Tensor(np.broadcast_to(grid, (batch, n_q_heads) + grid.shape[-2:]).copy())
