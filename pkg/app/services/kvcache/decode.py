from typing import Optional

import numpy as np

from app.common.errors import ContractViolation, InputError
from app.services.gating import GateConfig, predict_utilities
from app.services.kvcache.cache import PagedKVCache
from app.services.kvcache.models import CacheConfig, GateTraceEntry, MemoryReport
from app.services.model import AttentionKind, Transformer, TransformerBlock
from app.services.tensor_core import Tensor, no_grad, ops


class DecodeState:
    """
    Incremental decoding over a PagedKVCache.

    Gate decisions are taken once, when a token is written: z = u >= tau for
    Self-Pruned KV heads, 1 for global heads, 0 for sliding-window heads, and 1
    for the first `n_sinks` positions.

    Per-token gate records are kept in `trace` only when `record_trace` is set.
    """

    def __init__(
        self,
        model: Transformer,
        cache_config: Optional[CacheConfig] = None,
        tau: Optional[float] = None,
        gate: Optional[GateConfig] = None,
        record_trace: bool = False,
    ):
        self.model = model
        self.record_trace = record_trace
        self.gate = gate or model.gate
        self.tau = self.gate.tau if tau is None else tau
        cfg = model.config
        self.cache = PagedKVCache(cfg.n_layers, cfg.n_kv_heads, cfg.d_head, self.gate.window, cache_config)
        self.trace: list[GateTraceEntry] = []
        self._head_kinds = [cfg.head_kinds(layer) for layer in range(cfg.n_layers)]

    @property
    def position(self) -> int:
        return self.cache.position

    @property
    def heads(self):
        return self.cache.heads

    def gated_streams(self) -> np.ndarray:
        return np.array([[k is AttentionKind.SELF_PRUNED for k in kinds] for kinds in self._head_kinds])

    def append_token(self, layer: int, head: int, k_row: np.ndarray, v_row: np.ndarray, z: bool) -> None:
        self.cache.append(layer, head, k_row, v_row, z)

    def gate_decisions(self, block: TransformerBlock, h: Tensor) -> tuple[np.ndarray, list[Optional[float]]]:
        kinds = self._head_kinds[block.index]
        t = self.position
        u_values: list[Optional[float]] = [None] * len(kinds)
        z = np.array([k is AttentionKind.GLOBAL for k in kinds])
        if any(k is AttentionKind.SELF_PRUNED for k in kinds):
            u = predict_utilities(block.predictor, h).u.data[0, :, 0]
            for head, kind in enumerate(kinds):
                if kind is AttentionKind.SELF_PRUNED:
                    u_values[head] = float(u[head])
                    z[head] = bool(u[head] >= np.float32(self.tau)) or t < self.gate.n_sinks
        return z, u_values

    def _attend(self, layer: int, q: np.ndarray) -> np.ndarray:
        """q [H_q, D] -> o [H_q, D] over window plus retained entries of each kv head."""
        group = self.model.config.group_size
        scale = np.float32(1.0 / np.sqrt(q.shape[-1]))
        out = np.empty_like(q)
        for head, stream in enumerate(self.cache.heads[layer]):
            keys, values, _ = stream.visible()
            rows = slice(head * group, (head + 1) * group)
            scores = (q[rows] @ keys.T) * scale
            probs = ops.softmax_lastdim(Tensor(scores)).data
            out[rows] = probs @ values
        return out

    def step(self, token: int) -> np.ndarray:
        model = self.model
        t = self.position
        if t >= model.config.max_seq_len:
            raise InputError(f"position {t} reaches max_seq_len={model.config.max_seq_len}")
        if not 0 <= int(token) < model.config.vocab_size:
            raise InputError(f"token {token} outside vocabulary of {model.config.vocab_size}")

        self.cache.begin_step()
        with no_grad():
            x = model.embed_tokens(np.array([[int(token)]], dtype=np.int64))
            cos, sin = model.cos[t : t + 1], model.sin[t : t + 1]
            for block in model.blocks:
                h, q, k, v = block.attention_inputs(x, cos, sin)
                z, u_values = self.gate_decisions(block, h)
                for head in range(model.config.n_kv_heads):
                    self.append_token(block.index, head, k.data[0, head, 0], v.data[0, head, 0], bool(z[head]))
                    if self.record_trace:
                        self.trace.append(GateTraceEntry(block.index, head, t, u_values[head], bool(z[head])))
                o = self._attend(block.index, q.data[0, :, 0, :])
                x = block.feed_forward(block.attention_output(x, Tensor(o[None, :, None, :])))
            logits = model.unembed(x).data[0, 0]
        self.cache.end_step()
        return logits


def append_token(state: DecodeState, layer: int, head: int, k_row: np.ndarray, v_row: np.ndarray, z: bool) -> None:
    state.append_token(layer, head, k_row, v_row, z)


def decode_step(state: DecodeState, token: int) -> np.ndarray:
    """Consume one token and return the next-token logits [vocab]."""
    return state.step(token)


def decode_sequence(state: DecodeState, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise ContractViolation("nothing to decode")
    return np.stack([state.step(int(tok)) for tok in tokens])


def memory_report(state: DecodeState) -> MemoryReport:
    return state.cache.report(state.gated_streams())
