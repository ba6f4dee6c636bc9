"""
KV cache

Decode-time paged per-head cache: circular sliding window, write-time gate
decisions, long-term pages for retained tokens, and gate-trace replay.
"""

from .cache import PagedKVCache
from .decode import DecodeState, append_token, decode_sequence, decode_step, memory_report
from .gate_trace import export_trace, load_trace, replay_trace, trace_to_z
from .head_cache import HeadCache
from .models import CacheConfig, GateTraceEntry, MemoryReport
from .page_pool import PagePool

__all__ = [
    "CacheConfig",
    "MemoryReport",
    "GateTraceEntry",
    "PagePool",
    "HeadCache",
    "PagedKVCache",
    "DecodeState",
    "append_token",
    "decode_step",
    "decode_sequence",
    "memory_report",
    "export_trace",
    "load_trace",
    "replay_trace",
    "trace_to_z",
]
