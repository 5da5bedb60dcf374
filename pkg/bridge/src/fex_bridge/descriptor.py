"""224-dim grid descriptor: per-cell color moments plus gradient-orientation
histograms on a 4x4 cell grid.

Layout: for each cell in row-major order, [meanR, stdR, meanG, stdG, meanB,
stdB] (96 values), then for each cell an 8-bin magnitude-weighted histogram
of luminance gradient orientation over [0, pi), L1-normalized per cell
(128 values). Input pixels are treated as float32 (the FEX0 wire type).
"""

from __future__ import annotations

import numpy as np

DIM = 224
GRID = 4
BINS = 8
MIN_SIDE = 8


def describe(img: np.ndarray) -> np.ndarray:
    """Descriptor of an (H, W, 3) image in [0, 1]; float32 output of length 224."""
    img = np.asarray(img, dtype=np.float32).astype(np.float64)
    h, w = img.shape[:2]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"image too small: {h}x{w}")
    lum = 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx)
    theta = np.where(theta < 0.0, theta + np.pi, theta)
    bins = np.floor(theta * (BINS / np.pi)).astype(np.int64)
    np.clip(bins, 0, BINS - 1, out=bins)

    ch, cw = h // GRID, w // GRID
    moments = []
    hists = []
    for i in range(GRID):
        r0, r1 = i * ch, (i + 1) * ch if i < GRID - 1 else h
        for j in range(GRID):
            c0, c1 = j * cw, (j + 1) * cw if j < GRID - 1 else w
            for ch_idx in range(3):
                cell = img[r0:r1, c0:c1, ch_idx]
                moments.append(cell.mean())
                moments.append(cell.std())
            hist = np.bincount(
                bins[r0:r1, c0:c1].ravel(),
                weights=mag[r0:r1, c0:c1].ravel(),
                minlength=BINS,
            )
            total = hist.sum()
            hists.append(hist / total if total > 0.0 else np.zeros(BINS))
    return np.concatenate([np.asarray(moments), np.concatenate(hists)]).astype(np.float32)
