"""PNG views of domainness maps: grayscale heatmaps and gray-out overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .images import save_image

GRAY = 0.5
BLEND = 0.5


def heatmap_png(scores: np.ndarray, path: str | Path) -> None:
    """8-bit grayscale rendering of a map (0 -> black, 1 -> white)."""
    s = np.asarray(scores, dtype=np.float64)
    save_image(np.repeat(s[:, :, None], 3, axis=2), path)


def overlay_png(img: np.ndarray, scores: np.ndarray, path: str | Path,
                threshold: float = 0.5) -> None:
    """Image with low-domainness regions pushed toward mid-gray."""
    img = np.asarray(img, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    low = s < threshold
    out = img.copy()
    out[low] = (1.0 - BLEND) * img[low] + BLEND * GRAY
    save_image(out, path)
