"""Image and mask I/O plus the canonical resize.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1].
Masks are uint8 arrays of shape (H, W) with values in {0, 1}.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

CANONICAL_SIDE = 256


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB or grayscale PNG as float64 (H, W, 3) in [0, 1].

    Grayscale inputs are replicated to 3 channels.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DataError(f"not a PNG file: {path} (format={im.format})")
            if im.mode not in ("RGB", "L"):
                raise DataError(
                    f"unsupported PNG color type/bit depth for {path}: mode={im.mode} "
                    "(8-bit RGB or grayscale required)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    data = arr.astype(np.float64) / 255.0
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    return data


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Write a float image in [0, 1] as an 8-bit PNG (RGB or grayscale)."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Load a segmentation mask PNG as uint8 {0, 1} (foreground = 1)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"mask file not found: {path}")
    with Image.open(path) as im:
        if im.mode not in ("L", "1", "RGB"):
            raise DataError(f"unsupported mask mode for {path}: {im.mode}")
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return (arr > 127).astype(np.uint8)


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255)).save(path, format="PNG")


def _axis_lerp(values: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Linear interpolation along one axis, half-pixel-center convention."""
    n_in = values.shape[axis]
    # output center i maps to source coordinate (i + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    shape = [1] * values.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return (1.0 - frac) * np.take(values, lo, axis=axis) + frac * np.take(values, hi, axis=axis)


def resize_canonical(img: np.ndarray, side: int = CANONICAL_SIDE) -> np.ndarray:
    """Bilinear resize to side x side (pixel centers at (i + 0.5) / N).

    A square image resized to its own side is returned bit-identically.
    """
    if side < 1:
        raise DataError(f"resize side must be >= 1, got {side}")
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] == side and img.shape[1] == side:
        return img.copy()
    out = _axis_lerp(img, side, axis=0)
    out = _axis_lerp(out, side, axis=1)
    return out
