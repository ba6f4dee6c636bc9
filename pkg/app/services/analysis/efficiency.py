import numpy as np

from app.services.analysis.models import BlockSkipStats, DensityReport, FlopsModel


def flops_per_token(model: FlopsModel, sparse: bool = False) -> float:
    """Forward FLOPs per token: 2N plus attention, the latter scaled by density when sparse."""
    attention = 2.0 * model.n_layers * model.n_ctx * model.d_attn
    if sparse:
        return 2.0 * model.n_params + model.density * attention
    return 2.0 * model.n_params + attention


def block_skip_stats(z_traces: np.ndarray, window: int, block: int = 64, query_tile: int | None = None) -> BlockSkipStats:
    """
    Count (query tile, key block) pairs a block-sparse kernel could skip.

    Candidates are causal key blocks lying entirely outside the window of
    every query in the tile; a candidate is skippable when all its gates are 0.
    """
    z = np.asarray(z_traces).astype(bool)
    length = z.shape[-1]
    rows = z.reshape(-1, length)
    query_tile = query_tile or block

    block_starts = np.arange(0, length, block)
    # any gate open per (stream, key block)
    open_blocks = np.logical_or.reduceat(rows, block_starts, axis=1) if length else np.zeros((rows.shape[0], 0), bool)
    block_ends = np.minimum(block_starts + block, length)

    skippable = 0
    candidates = 0
    for q_start in range(0, length, query_tile):
        outside = q_start - (block_ends - 1) >= window
        n_out = int(outside.sum())
        candidates += n_out * rows.shape[0]
        skippable += int((~open_blocks[:, outside]).sum())
    return BlockSkipStats(skippable=skippable, candidates=candidates)


def traffic_ratio(rho: float, seq_len: int, window: int) -> float:
    """Decode read bytes relative to dense for one head: (w + rho * (T - w)) / T."""
    if seq_len <= 0:
        return 1.0
    return (min(window, seq_len) + rho * max(seq_len - window, 0)) / seq_len


def memory_traffic_model(report: DensityReport, seq_len: int, window: int) -> float:
    """Mean per-head traffic ratio over every (layer, kv head) of the report."""
    matrix = report.density_matrix()
    return float(np.mean([traffic_ratio(float(d), seq_len, window) for d in matrix.reshape(-1)]))
