"""Foreground/background domainness statistics over the central crop."""

from __future__ import annotations

import numpy as np

from .errors import DataError

DEFAULT_CROP = 227


def fg_bg_stats(scores: np.ndarray, mask: np.ndarray, crop: int = DEFAULT_CROP):
    """Mean domainness inside and outside the mask within the centered crop.

    Returns (mean_in, mean_out, n_in, n_out). Raises when the crop window
    is single-region (all foreground or all background).
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask)
    if scores.shape != mask.shape:
        raise DataError(f"map shape {scores.shape} does not match mask shape {mask.shape}")
    h, w = scores.shape
    if crop > min(h, w):
        raise DataError(f"crop {crop} exceeds map size {h}x{w}")
    if crop < 1:
        raise DataError(f"crop must be >= 1, got {crop}")
    r0 = (h - crop) // 2
    c0 = (w - crop) // 2
    win = scores[r0:r0 + crop, c0:c0 + crop]
    wmask = mask[r0:r0 + crop, c0:c0 + crop] != 0
    n_in = int(wmask.sum())
    n_out = int(crop * crop - n_in)
    if n_in == 0 or n_out == 0:
        raise DataError("empty region: crop window is entirely one side of the mask")
    mean_in = float(win[wmask].mean())
    mean_out = float(win[~wmask].mean())
    return mean_in, mean_out, n_in, n_out


def aggregate_stats(per_image: list[tuple[float, float]]) -> tuple[float, float]:
    """Unweighted averages of per-image (mean_in, mean_out) pairs."""
    if not per_image:
        raise DataError("cannot aggregate an empty list of per-image stats")
    arr = np.asarray(per_image, dtype=np.float64)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())
