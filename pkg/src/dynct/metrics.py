"""Image quality metrics."""

from __future__ import annotations

import math

import numpy as np

from .core import CasoratiImage


def _values(x):
    return x.values if isinstance(x, CasoratiImage) else np.asarray(x, dtype=np.float64)


def psnr(x, ref, peak: float | None = None, per_frame: bool = False) -> float:
    """Peak signal-to-noise ratio in dB over the whole space-time volume.

    ``peak`` defaults to the maximum of ``ref``. Identical inputs give
    ``math.inf``. With ``per_frame`` the PSNR of each frame is averaged
    instead (frames as the leading axis).
    """
    a, b = _values(x), _values(ref)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak is None:
        peak = float(b.max())
    if not peak > 0:
        raise ValueError("peak must be positive")
    if per_frame:
        return float(np.mean([psnr(fa, fb, peak) for fa, fb in zip(a, b)]))
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def frame_psnr(x, ref, peak: float | None = None) -> np.ndarray:
    """PSNR of each frame (leading axis) with a common peak."""
    a, b = _values(x), _values(ref)
    if peak is None:
        peak = float(b.max())
    return np.array([psnr(fa, fb, peak) for fa, fb in zip(a, b)])


def temporal_std(x) -> float:
    """Per-pixel standard deviation over time, averaged over pixels."""
    return float(np.mean(np.std(_values(x), axis=0)))
