import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from app.common.errors import InputError
from app.services.kvcache.cache import PagedKVCache
from app.services.kvcache.models import CacheConfig, GateTraceEntry, MemoryReport


def export_trace(entries: Iterable[GateTraceEntry], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for e in entries:
            u = None if e.u is None else float(f"{e.u:.9g}")
            fh.write(json.dumps({"layer": e.layer, "head": e.head, "position": e.position, "u": u, "z": int(e.z)}) + "\n")
    return path


def load_trace(path: str | Path) -> list[GateTraceEntry]:
    entries = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            entries.append(GateTraceEntry(int(row["layer"]), int(row["head"]), int(row["position"]), row["u"], bool(row["z"])))
        except (KeyError, ValueError, TypeError) as e:
            raise InputError(f"{path}:{line_no}: malformed gate-trace record") from e
    return entries


def trace_to_z(entries: Iterable[GateTraceEntry]) -> np.ndarray:
    """Dense z [n_layers, n_kv_heads, T] from trace entries."""
    entries = list(entries)
    if not entries:
        raise InputError("empty gate trace")
    n_layers = max(e.layer for e in entries) + 1
    n_heads = max(e.head for e in entries) + 1
    length = max(e.position for e in entries) + 1
    z = np.zeros((n_layers, n_heads, length), dtype=bool)
    for e in entries:
        z[e.layer, e.head, e.position] = e.z
    return z


def replay_trace(
    entries: Iterable[GateTraceEntry],
    window: int,
    d_head: int = 1,
    config: Optional[CacheConfig] = None,
    gated: Optional[np.ndarray] = None,
) -> tuple[PagedKVCache, MemoryReport]:
    """Feed a gate trace through a model-free cache (zero key/value rows) and report its memory."""
    z = trace_to_z(entries)
    n_layers, n_heads, length = z.shape
    cache = PagedKVCache(n_layers, n_heads, d_head, window, config)
    row = np.zeros(d_head, dtype=np.float32)
    for _ in range(length):
        cache.begin_step()
        for layer in range(n_layers):
            for head in range(n_heads):
                cache.append(layer, head, row, row, bool(z[layer, head, cache.position]))
        cache.end_step()
    return cache, cache.report(gated)
