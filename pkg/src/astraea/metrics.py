"""Grid comparison metrics."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, ShapeError


def compute_mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff))


def compute_psnr(a: np.ndarray, b: np.ndarray, peak: float | None = None) -> float:
    """PSNR in dB. ``peak`` defaults to the max-abs value of the reference ``a``.

    Identical grids give ``inf``.
    """
    if peak is None:
        peak = float(np.max(np.abs(a)))
    if peak <= 0:
        raise DomainError("peak must be > 0")
    mse = compute_mse(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_from_mse(mse: float, peak: float) -> float:
    if peak <= 0:
        raise DomainError("peak must be > 0")
    return math.inf if mse == 0.0 else 10.0 * math.log10(peak * peak / mse)
