"""Domainness-level descriptors: patch sampling, tercile split, max pooling.

Each image yields three descriptors (levels L, M, H). Per scale in
(32, 64, 128): sample 100 patches uniformly, score each by its mean map
value, split the 100 scores into rank terciles, and max-pool the patch
features within each tercile. A level's descriptor stacks its pooled
vectors across the three scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .extractor import extract

LEVELS = ("L", "M", "H")
DEFAULT_SCALES = (32, 64, 128)
DEFAULT_PATCHES = 100


@dataclass
class LevelDescriptor:
    level: str
    values: np.ndarray  # (len(scales) * dim,) float32


def scale_seed(master_seed: int, image_index: int, scale_index: int) -> np.random.Generator:
    """Independent per-(image, scale) stream derived from the master seed."""
    ss = np.random.SeedSequence(entropy=(int(master_seed), int(image_index), int(scale_index)))
    return np.random.Generator(np.random.PCG64(ss))


def sample_patches(img_dims: tuple[int, int], scale: int, n: int = DEFAULT_PATCHES,
                   rng: np.random.Generator | None = None, seed: int | None = None) -> list[tuple[int, int]]:
    """n top-left corners drawn uniformly (with replacement) over valid positions."""
    h, w = img_dims
    if scale > min(h, w):
        raise DataError(f"patch scale {scale} exceeds image size {h}x{w}")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    rows = rng.integers(0, h - scale + 1, size=n)
    cols = rng.integers(0, w - scale + 1, size=n)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def patch_domainness(scores: np.ndarray, pos: tuple[int, int], scale: int) -> float:
    """Mean map value over the patch square."""
    scores = np.asarray(scores, dtype=np.float64)
    h, w = scores.shape
    r, c = pos
    if r < 0 or c < 0 or r + scale > h or c + scale > w:
        raise DataError(f"patch at {pos} size {scale} out of bounds for {h}x{w} map")
    return float(scores[r:r + scale, c:c + scale].mean())


def tercile_split(values: list[float] | np.ndarray) -> list[str]:
    """Rank-based tercile assignment ('L'/'M'/'H') per index.

    Indices sort by (value, original index); the lowest ceil(n/3) go to L,
    the next block to M, the rest to H. The M block is capped so H is never
    empty; every level is non-empty for n >= 3.
    """
    vals = np.asarray(values, dtype=np.float64)
    n = vals.size
    if n < 3:
        raise DataError(f"tercile split needs >= 3 values, got {n}")
    order = sorted(range(n), key=lambda i: (vals[i], i))
    n_low = -(-n // 3)
    n_mid = min(-(-n // 3), n - n_low - 1)
    out = [""] * n
    for rank, idx in enumerate(order):
        if rank < n_low:
            out[idx] = "L"
        elif rank < n_low + n_mid:
            out[idx] = "M"
        else:
            out[idx] = "H"
    return out


def pooled_level(patches: list[np.ndarray], extractor) -> np.ndarray:
    """Element-wise maximum of the patch features (float32)."""
    if not patches:
        raise DataError("cannot pool an empty patch list")
    pooled = extract(extractor, patches[0]).copy()
    for p in patches[1:]:
        np.maximum(pooled, extract(extractor, p), out=pooled)
    return pooled


def build_level_descriptors(img: np.ndarray, scores: np.ndarray, extractor,
                            master_seed: int, image_index: int = 0,
                            scales: tuple[int, ...] = DEFAULT_SCALES,
                            n_patches: int = DEFAULT_PATCHES) -> dict[str, LevelDescriptor]:
    """L/M/H descriptors for one image; deterministic given (image, map, seed)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    per_level: dict[str, list[np.ndarray]] = {lv: [] for lv in LEVELS}
    for s_idx, scale in enumerate(scales):
        rng = scale_seed(master_seed, image_index, s_idx)
        positions = sample_patches((h, w), scale, n=n_patches, rng=rng)
        dvals = [patch_domainness(scores, pos, scale) for pos in positions]
        assignment = tercile_split(dvals)
        groups: dict[str, list[np.ndarray]] = {lv: [] for lv in LEVELS}
        for pos, lv in zip(positions, assignment):
            r, c = pos
            groups[lv].append(img[r:r + scale, c:c + scale, :])
        for lv in LEVELS:
            per_level[lv].append(pooled_level(groups[lv], extractor))
    return {
        lv: LevelDescriptor(level=lv, values=np.concatenate(per_level[lv]).astype(np.float32))
        for lv in LEVELS
    }
