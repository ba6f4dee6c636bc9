from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from app.common.errors import ConfigurationError, InputError
from app.common.logging.logging_config import get_logger
from app.services.attention import gated_attention
from app.services.baselines.models import BaselineResult, EvictionEvent, EvictionPolicy, PrefillResult
from app.services.baselines.policies import make_policy
from app.services.model import AttentionKind, Transformer
from app.services.tensor_core import Tensor, no_grad

logger = get_logger(__name__)

NEG_INF = np.float32(-np.inf)


def _token_nll(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return -np.take_along_axis(log_probs, targets[:, None], axis=-1)[:, 0]


def chunked_prefill_eval(model: Transformer, tokens: np.ndarray, policy: EvictionPolicy) -> PrefillResult:
    """
    Prefill `tokens` in chunks of `policy.chunk_size`, compressing every
    (layer, kv head) cache after each chunk.

    Queries of a chunk see the retained earlier positions plus the chunk
    itself (causally). Returns the NLL of every next-token prediction and the
    final retained density over positions outside the window and the sinks.
    """
    config = model.config
    for layer in range(config.n_layers):
        if any(kind is not AttentionKind.GLOBAL for kind in config.head_kinds(layer)):
            raise ConfigurationError("post-hoc baselines run on a dense (global attention) model")
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    length = tokens.size
    if length < 2:
        raise InputError("need at least two tokens to score next-token predictions")
    if length > config.max_seq_len:
        raise InputError(f"sequence of {length} tokens exceeds max_seq_len={config.max_seq_len}")

    n_layers, n_kv, d_head, group = config.n_layers, config.n_kv_heads, config.d_head, config.group_size
    keys = np.zeros((n_layers, n_kv, length, d_head), dtype=np.float32)
    values = np.zeros_like(keys)
    retained = np.ones((n_layers, n_kv, length), dtype=bool)
    scores = np.zeros((n_layers, n_kv, length), dtype=np.float64)
    retention = make_policy(policy)
    nll = np.zeros(length - 1, dtype=np.float64)
    log: list[EvictionEvent] = []

    with no_grad():
        for start in range(0, length, policy.chunk_size):
            end = min(start + policy.chunk_size, length)
            n_new = end - start
            x = model.embed_tokens(tokens[None, start:end])
            cos, sin = model.cos[start:end], model.sin[start:end]
            causal = np.arange(end)[None, :] <= np.arange(start, end)[:, None]
            for block in model.blocks:
                layer = block.index
                _, q, k, v = block.attention_inputs(x, cos, sin)
                keys[layer, :, start:end] = k.data[0]
                values[layer, :, start:end] = v.data[0]
                visible = causal[None] & retained[layer, :, None, :end]
                bias = np.where(visible, np.float32(0.0), NEG_INF)
                bias = np.repeat(bias, group, axis=0)[None]
                o, probs = gated_attention(
                    q,
                    Tensor(keys[None, layer, :, :end]),
                    Tensor(values[None, layer, :, :end]),
                    Tensor(bias),
                    return_probs=True,
                )
                mass = probs.data[0].reshape(n_kv, group, n_new, end).sum(axis=(1, 2))
                scores[layer, :, :end] += mass
                x = block.feed_forward(block.attention_output(x, o))

            logits = model.unembed(x).data[0]
            predicted = min(end, length - 1) - start
            if predicted > 0:
                nll[start : start + predicted] = _token_nll(logits[:predicted], tokens[start + 1 : start + 1 + predicted])

            for layer in range(n_layers):
                for head in range(n_kv):
                    before = retained[layer, head, :end].copy()
                    after = retention.select_retained(before, end, scores[layer, head], (layer, head))
                    retained[layer, head, :end] = after
                    dropped = np.flatnonzero(before & ~after)
                    if dropped.size:
                        log.append(EvictionEvent(end, layer, head, dropped.tolist()))

    density = retained_density(retained, length, policy.window, policy.n_sinks)
    logger.debug("chunked_prefill_done", policy=policy.label, length=length, density=density)
    return PrefillResult(nll=nll, density=density, eviction_log=log)


def retained_density(retained: np.ndarray, length: int, window: int, n_sinks: int = 0) -> float:
    """
    Fraction of positions outside the final window that are still cached, pooled over streams.

    The first `n_sinks` positions are never evicted and are left out of both counts.
    """
    outside = max(length - window, 0)
    first = min(n_sinks, outside)
    if outside == first:
        return 1.0
    kept = retained[..., first:outside].sum()
    return float(kept / ((outside - first) * int(np.prod(retained.shape[:-1]))))


def density_from_log(log: Sequence[EvictionEvent], n_streams: int, length: int, window: int, n_sinks: int = 0) -> float:
    outside = max(length - window, 0)
    first = min(n_sinks, outside)
    if outside == first:
        return 1.0
    evicted = sum(sum(1 for p in event.evicted if first <= p < outside) for event in log)
    return 1.0 - evicted / ((outside - first) * n_streams)


def evaluate_policies(
    model: Transformer, sequences: Sequence[np.ndarray], policies: Sequence[EvictionPolicy]
) -> list[BaselineResult]:
    """One result per (policy, sequence), with NLL deltas against keep-everything prefill."""
    dense = [chunked_prefill_eval(model, seq, EvictionPolicy(chunk_size=policies[0].chunk_size)).mean_nll for seq in sequences]
    results = []
    for policy in policies:
        for seq, dense_nll in zip(sequences, dense):
            outcome = chunked_prefill_eval(model, seq, policy)
            results.append(
                BaselineResult(
                    policy=policy.label,
                    density=outcome.density,
                    nll=outcome.mean_nll,
                    delta_nll_vs_dense=outcome.mean_nll - dense_nll,
                )
            )
    return results


def write_results(results: Sequence[BaselineResult], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.model_dump() for r in results], columns=list(BaselineResult.model_fields))
    frame.to_json(path, orient="records", lines=True, double_precision=9)
    return path
