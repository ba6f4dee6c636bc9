from typing import Optional

import numpy as np

from app.common.errors import InputError, ShapeError
from app.common.logging.logging_config import get_logger
from app.services.attention import MaskSpec, build_bias, gated_attention
from app.services.gating import GateConfig, GateField, PredictorKind, UtilityPredictor, gate_bias, predict_utilities
from app.services.model.models import AttentionKind, ModelConfig
from app.services.tensor_core import Rng, Tensor, ops

logger = get_logger(__name__)

NEG_INF = float("-inf")


def rope_tables(config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    half = config.d_head // 2
    inv_freq = config.rope_base ** (-np.arange(half, dtype=np.float64) * 2.0 / config.d_head)
    angles = np.arange(config.max_seq_len, dtype=np.float64)[:, None] * inv_freq[None, :]
    angles = np.concatenate((angles, angles), axis=-1)
    return np.cos(angles).astype(np.float32), np.sin(angles).astype(np.float32)


class TransformerBlock:
    """Pre-norm block: gated attention then a SiLU feed-forward, both residual."""

    def __init__(self, index: int, config: ModelConfig, gate: GateConfig, rng: Rng):
        self.index = index
        self.config = config
        d_q = config.n_q_heads * config.d_head
        d_kv = config.n_kv_heads * config.d_head

        def weight(shape) -> Tensor:
            return Tensor(rng.normal(shape, std=config.init_std), requires_grad=True)

        self.params: dict[str, Tensor] = {
            "attn_norm": Tensor(np.ones(config.d_model), requires_grad=True),
            "wq": weight((config.d_model, d_q)),
            "wk": weight((config.d_model, d_kv)),
            "wv": weight((config.d_model, d_kv)),
            "wo": weight((d_q, config.d_model)),
            "ffn_norm": Tensor(np.ones(config.d_model), requires_grad=True),
            "w_in": weight((config.d_model, config.d_ffn)),
            "w_out": weight((config.d_ffn, config.d_model)),
        }
        self.predictor = UtilityPredictor(
            config.d_model, config.n_kv_heads, rng, init_bias=gate.init_bias, kind=gate.predictor_kind
        )

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = list(self.params.items())
        named += [(f"predictor.{name}", tensor) for name, tensor in self.predictor.parameters()]
        return named

    def head_masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        kinds = self.config.head_kinds(self.index)
        gated = np.array([k is AttentionKind.SELF_PRUNED for k in kinds])
        dense = np.array([k is AttentionKind.GLOBAL for k in kinds])
        local = np.array([k is AttentionKind.SLIDING_WINDOW for k in kinds])
        return gated, dense, local

    def _split_heads(self, x: Tensor, n_heads: int) -> Tensor:
        batch, length, _ = x.shape
        return ops.transpose(ops.reshape(x, (batch, length, n_heads, self.config.d_head)), (0, 2, 1, 3))

    def attention_inputs(self, x: Tensor, cos: np.ndarray, sin: np.ndarray) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Normalised hidden state h plus rotated q, k and v, heads-first."""
        h = ops.mul(ops.rms_norm(x, self.config.norm_eps), self.params["attn_norm"])
        q = ops.rope(self._split_heads(ops.matmul(h, self.params["wq"]), self.config.n_q_heads), cos, sin)
        k = ops.rope(self._split_heads(ops.matmul(h, self.params["wk"]), self.config.n_kv_heads), cos, sin)
        v = self._split_heads(ops.matmul(h, self.params["wv"]), self.config.n_kv_heads)
        return h, q, k, v

    def attention_output(self, x: Tensor, o: Tensor) -> Tensor:
        batch, _, length, _ = o.shape
        merged = ops.reshape(ops.transpose(o, (0, 2, 1, 3)), (batch, length, self.config.n_q_heads * self.config.d_head))
        return ops.add(x, ops.matmul(merged, self.params["wo"]))

    def feed_forward(self, x: Tensor) -> Tensor:
        h = ops.mul(ops.rms_norm(x, self.config.norm_eps), self.params["ffn_norm"])
        return ops.add(x, ops.matmul(ops.silu(ops.matmul(h, self.params["w_in"])), self.params["w_out"]))

    def kv_gate_bias(self, h: Tensor, gate: GateConfig, rng: Optional[Rng]) -> tuple[Tensor, Optional[GateField]]:
        """Per kv-head gate bias [B, K, T]: learned for SP-KV heads, 0 for global, -inf for local."""
        gated, dense, local = self.head_masks()
        batch, length, _ = h.shape
        field: Optional[GateField] = None
        if gated.any():
            field = predict_utilities(self.predictor, h)
            bias, z = gate_bias(field, gate, rng)
            field = GateField(u=field.u, z=z, active=gated)
        else:
            bias = Tensor(np.zeros((batch, self.config.n_kv_heads, length), dtype=np.float32))
        if dense.any():
            bias = ops.mask_fill(bias, keep=~dense[None, :, None], fill=0.0)
        if local.any():
            bias = ops.mask_fill(bias, keep=~local[None, :, None], fill=NEG_INF)
        return bias, field

    def __call__(
        self, x: Tensor, cos: np.ndarray, sin: np.ndarray, gate: GateConfig, rng: Optional[Rng] = None
    ) -> tuple[Tensor, Optional[GateField]]:
        h, q, k, v = self.attention_inputs(x, cos, sin)
        kv_bias, field = self.kv_gate_bias(h, gate, rng)
        mask = MaskSpec(length=x.shape[1], window=gate.window, n_q_heads=self.config.n_q_heads, source=gate.mode)
        o = gated_attention(q, k, v, build_bias(mask, kv_bias))
        return self.feed_forward(self.attention_output(x, o)), field


class Transformer:
    """
    Toy decoder-only transformer with GQA, RoPE, RMSNorm and tied embeddings.

    Parameter order (used by checkpoints): embed, then for each layer the block
    weights attn_norm, wq, wk, wv, wo, ffn_norm, w_in, w_out followed by the
    predictor weights, then final_norm.
    """

    def __init__(self, config: ModelConfig, gate: Optional[GateConfig] = None, rng: Optional[Rng] = None):
        self.config = config
        self.gate = gate or GateConfig()
        rng = rng or Rng(0)
        self.embed = Tensor(rng.normal((config.vocab_size, config.d_model), std=config.init_std), requires_grad=True)
        self.blocks = [TransformerBlock(i, config, self.gate, rng) for i in range(config.n_layers)]
        self.final_norm = Tensor(np.ones(config.d_model), requires_grad=True)
        self.cos, self.sin = rope_tables(config)

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = [("embed", self.embed)]
        for block in self.blocks:
            named += [(f"layers.{block.index}.{name}", tensor) for name, tensor in block.parameters()]
        named.append(("final_norm", self.final_norm))
        return named

    def predictor_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, t) for name, t in self.parameters() if ".predictor." in name]

    def backbone_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, t) for name, t in self.parameters() if ".predictor." not in name]

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, tensor in self.parameters():
            if name not in values:
                raise ShapeError(f"missing parameter {name!r}")
            array = np.asarray(values[name], dtype=np.float32)
            if array.shape != tensor.shape:
                raise ShapeError(f"parameter {name!r} has shape {array.shape}, expected {tensor.shape}")
            tensor.data = array.copy()

    def zero_grad(self) -> None:
        for _, tensor in self.parameters():
            tensor.grad = None

    def set_attention(self, attention, head_overrides: Optional[dict[str, AttentionKind]] = None) -> None:
        self.config = self.config.with_attention(attention, head_overrides)
        for block in self.blocks:
            block.config = self.config

    def reset_predictors(self, init_bias: float, rng: Rng, kind: Optional[PredictorKind] = None) -> None:
        """Fresh predictors at the branch point; `kind` swaps the predictor architecture."""
        for block in self.blocks:
            if kind is not None and PredictorKind(kind) is not block.predictor.kind:
                block.predictor = UtilityPredictor(
                    self.config.d_model, self.config.n_kv_heads, rng, init_bias=init_bias, kind=kind
                )
            else:
                block.predictor.reset(rng, init_bias)

    def freeze_predictors(self) -> None:
        for block in self.blocks:
            block.predictor.freeze()
        logger.info("predictors_frozen", n_layers=len(self.blocks))

    def freeze_backbone(self) -> None:
        for _, tensor in self.backbone_parameters():
            tensor.requires_grad = False
            tensor.grad = None

    def embed_tokens(self, tokens: np.ndarray) -> Tensor:
        return ops.embedding(self.embed, tokens)

    def unembed(self, x: Tensor) -> Tensor:
        x = ops.mul(ops.rms_norm(x, self.config.norm_eps), self.final_norm)
        return ops.matmul(x, ops.transpose(self.embed, (1, 0)))

    def forward(
        self, tokens: np.ndarray, gate: Optional[GateConfig] = None, rng: Optional[Rng] = None
    ) -> tuple[Tensor, list[Optional[GateField]]]:
        return forward(self, tokens, gate, rng)


def forward(
    model: Transformer, tokens: np.ndarray, gate: Optional[GateConfig] = None, rng: Optional[Rng] = None
) -> tuple[Tensor, list[Optional[GateField]]]:
    """Logits [B, T, vocab] and the per-layer gate fields (None for ungated layers)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    length = tokens.shape[1]
    if length > model.config.max_seq_len:
        raise InputError(f"sequence of {length} tokens exceeds max_seq_len={model.config.max_seq_len}")
    gate = gate or model.gate

    x = model.embed_tokens(tokens)
    cos, sin = model.cos[:length], model.sin[:length]
    fields: list[Optional[GateField]] = []
    for block in model.blocks:
        x, field = block(x, cos, sin, gate, rng)
        fields.append(field)
    return model.unembed(x), fields


def next_token_loss(logits: Tensor, targets: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over the supervised positions selected by loss_mask."""
    return ops.masked_cross_entropy(logits, targets, loss_mask)
