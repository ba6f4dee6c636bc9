from pathlib import Path

import numpy as np
import pandas as pd

from app.common.errors import InputError
from app.services.analysis.models import PowerLawFit


def _log_linear(log_c: np.ndarray, nll: np.ndarray, l_inf: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    For each candidate l_inf regress log(nll - l_inf) on log C.

    Returns (log A, alpha, rss) per candidate; candidates with any
    non-positive gap get rss = inf.
    """
    gap = nll[None, :] - l_inf[:, None]
    valid = np.all(gap > 0, axis=1)
    y = np.log(np.where(gap > 0, gap, 1.0))
    x = log_c - log_c.mean()
    slope = (y * x[None, :]).sum(axis=1) / (x @ x)
    intercept = y.mean(axis=1) - slope * log_c.mean()
    residual = y - (intercept[:, None] + slope[:, None] * log_c[None, :])
    rss = np.where(valid, (residual**2).sum(axis=1), np.inf)
    return intercept, -slope, rss


def fit_power_law(
    compute: np.ndarray, nll: np.ndarray, grid_size: int = 1000, refinements: int = 4
) -> PowerLawFit:
    """
    Fit L(C) = l_inf + A * C^(-alpha).

    l_inf is grid-searched over (0, min NLL); each candidate is solved by
    linear least squares in log space and the best candidate's neighbourhood is
    re-gridded `refinements` times. R² is reported in NLL space.
    """
    compute = np.asarray(compute, dtype=np.float64)
    nll = np.asarray(nll, dtype=np.float64)
    if compute.shape != nll.shape or compute.ndim != 1:
        raise InputError("compute and nll must be 1-D arrays of equal length")
    if compute.size < 4:
        raise InputError(f"power-law fit needs at least 4 points, got {compute.size}")
    if np.any(np.diff(compute) <= 0) or np.any(compute <= 0):
        raise InputError("compute values must be positive and strictly increasing")

    log_c = np.log(compute)
    low, high = 0.0, float(nll.min())
    best = None
    for _ in range(refinements + 1):
        grid = np.linspace(low, high, grid_size + 2)[1:-1]
        log_a, alpha, rss = _log_linear(log_c, nll, grid)
        i = int(np.argmin(rss))
        if not np.isfinite(rss[i]):
            break
        if best is None or rss[i] <= best[3]:
            best = (grid[i], float(np.exp(log_a[i])), float(alpha[i]), float(rss[i]))
        step = grid[1] - grid[0] if grid.size > 1 else (high - low)
        low, high = max(grid[i] - step, 0.0), min(grid[i] + step, float(nll.min()))

    if best is None:
        raise InputError("no candidate l_inf leaves every point above the asymptote")
    l_inf, a, alpha, rss = best
    predicted = l_inf + a * np.power(compute, -alpha)
    ss_res = float(((nll - predicted) ** 2).sum())
    ss_tot = float(((nll - nll.mean()) ** 2).sum())
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-12 else 0.0)
    return PowerLawFit(l_inf=float(l_inf), a=a, alpha=alpha, rss=rss, r_squared=r_squared)


def load_points(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """(compute, nll) columns from a CSV with `flops` and `nll` headers, sorted by compute."""
    frame = pd.read_csv(path)
    missing = {"flops", "nll"} - set(frame.columns)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    frame = frame.sort_values("flops")
    return frame["flops"].to_numpy(dtype=np.float64), frame["nll"].to_numpy(dtype=np.float64)
