from .checkpoint import Checkpoint
from .models import AttentionKind, ModelConfig, hybrid_layout
from .transformer import Transformer, TransformerBlock, forward, next_token_loss, rope_tables

__all__ = [
    "AttentionKind",
    "ModelConfig",
    "hybrid_layout",
    "Transformer",
    "TransformerBlock",
    "forward",
    "next_token_loss",
    "rope_tables",
    "Checkpoint",
]
