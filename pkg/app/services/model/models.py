from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class AttentionKind(str, Enum):
    GLOBAL = "global"
    SLIDING_WINDOW = "sliding_window"
    SELF_PRUNED = "self_pruned_kv"


class ModelConfig(BaseModel):
    """
    Decoder-only transformer shape and attention layout.

    `attention` holds one kind per layer (a single value is expanded to every
    layer). `head_overrides` maps "layer:kv_head" to a kind for hybrid layouts.
    """

    model_config = ConfigDict(extra="forbid")

    n_layers: int = Field(4, ge=1)
    d_model: int = Field(128, ge=1)
    n_q_heads: int = Field(8, ge=1)
    n_kv_heads: int = Field(2, ge=1)
    d_head: int = Field(16, ge=2)
    d_ffn: int = Field(512, ge=1)
    vocab_size: int = Field(128, ge=2)
    max_seq_len: int = Field(256, ge=1)
    attention: list[AttentionKind] = Field(default_factory=lambda: [AttentionKind.SELF_PRUNED])
    head_overrides: dict[str, AttentionKind] = Field(default_factory=dict)
    rope_base: float = 10000.0
    norm_eps: float = 1e-6
    init_std: float = 0.02

    @field_validator("attention", mode="before")
    @classmethod
    def _listify(cls, value):
        if isinstance(value, (str, AttentionKind)):
            return [value]
        return value

    @model_validator(mode="after")
    def _check_layout(self) -> "ModelConfig":
        if self.n_q_heads % self.n_kv_heads:
            raise ValueError("n_q_heads must be divisible by n_kv_heads")
        if self.d_model != self.n_q_heads * self.d_head:
            raise ValueError("d_model must equal n_q_heads * d_head")
        if self.d_head % 2:
            raise ValueError("d_head must be even for rotary embeddings")
        if len(self.attention) == 1 and self.n_layers > 1:
            self.attention = self.attention * self.n_layers
        if len(self.attention) != self.n_layers:
            raise ValueError(f"attention lists {len(self.attention)} kinds for {self.n_layers} layers")
        for key in self.head_overrides:
            layer, head = _parse_head_key(key)
            if not (0 <= layer < self.n_layers and 0 <= head < self.n_kv_heads):
                raise ValueError(f"head override {key!r} is outside the model")
        return self

    @property
    def group_size(self) -> int:
        return self.n_q_heads // self.n_kv_heads

    def head_kinds(self, layer: int) -> list[AttentionKind]:
        kinds = []
        for head in range(self.n_kv_heads):
            kinds.append(self.head_overrides.get(f"{layer}:{head}", self.attention[layer]))
        return kinds

    def with_attention(
        self, attention: list[AttentionKind] | AttentionKind, head_overrides: Optional[dict[str, AttentionKind]] = None
    ) -> "ModelConfig":
        data = self.model_dump()
        data["attention"] = attention if isinstance(attention, list) else [attention] * self.n_layers
        data["head_overrides"] = head_overrides or {}
        return ModelConfig.model_validate(data)


def _parse_head_key(key: str) -> tuple[int, int]:
    try:
        layer, head = key.split(":")
        return int(layer), int(head)
    except ValueError as e:
        raise ValueError(f"head override keys look like 'layer:head', got {key!r}") from e


def hybrid_layout(
    n_layers: int,
    local_kind: AttentionKind = AttentionKind.SLIDING_WINDOW,
    global_kind: AttentionKind = AttentionKind.GLOBAL,
) -> list[AttentionKind]:
    """3 local : 1 global layer pattern, with the last layer always global."""
    return [global_kind if (i + 1) % 4 == 0 or i == n_layers - 1 else local_kind for i in range(n_layers)]
