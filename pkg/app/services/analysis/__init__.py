"""
Analysis

Gate density reports, head-selection strategies and coverage, FLOPs /
block-skip / memory-traffic accounting, the power-law fit and threshold sweeps.
"""

from .density import collect_z, density, density_report, gated_heads, z_from_fields
from .efficiency import block_skip_stats, flops_per_token, memory_traffic_model, traffic_ratio
from .models import BlockSkipStats, DensityReport, FlopsModel, HeadSelection, NasStrategy, PowerLawFit
from .nas import apply_head_selection, coverage, pattern_layers, select_heads
from .scaling import fit_power_law, load_points
from .sweep import normalise_taus, sweep_tau, write_sweep

__all__ = [
    "DensityReport",
    "HeadSelection",
    "NasStrategy",
    "FlopsModel",
    "BlockSkipStats",
    "PowerLawFit",
    "density",
    "density_report",
    "collect_z",
    "gated_heads",
    "z_from_fields",
    "coverage",
    "select_heads",
    "pattern_layers",
    "apply_head_selection",
    "flops_per_token",
    "block_skip_stats",
    "memory_traffic_model",
    "traffic_ratio",
    "fit_power_law",
    "load_points",
    "sweep_tau",
    "normalise_taus",
    "write_sweep",
]
