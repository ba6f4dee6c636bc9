from .attention import build_bias, causal_bias, gated_attention
from .models import MaskSpec, window_regions

__all__ = ["MaskSpec", "window_regions", "build_bias", "gated_attention", "causal_bias"]
