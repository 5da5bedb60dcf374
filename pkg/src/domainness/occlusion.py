"""Domainness maps: dense occlusion grid, feature discrepancy, overlap averaging.

For the built-in extractor the per-position discrepancy is computed
incrementally: an occluder can only change the cells it touches (plus a
one-pixel halo for the gradient histograms), and the per-cell helpers are
pure functions of cell content, so recomputing just those cells yields the
same float32 coordinates a full re-extraction would.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classifier import LinearModel, domain_weighting
from .errors import DataError, ProtocolError
from .extractor import (
    BuiltinExtractor,
    cell_bounds,
    cell_moments,
    extract,
    hist_from_fields,
    luminance,
    orientation_fields,
)

DEFAULT_PATCH = 16
DEFAULT_STRIDE = 8


@dataclass(frozen=True)
class OcclusionGrid:
    patch: int
    stride: int
    positions: list[tuple[int, int]]


@dataclass
class MapConfig:
    patch: int = DEFAULT_PATCH
    stride: int = DEFAULT_STRIDE
    fill: tuple[float, float, float] = (0.5, 0.5, 0.5)
    weighting: str = "abs-w"  # "none" | "abs-w"
    degenerate_policy: str = "zero-map"

    def validate(self, h: int, w: int) -> None:
        if not 1 <= self.patch <= min(h, w):
            raise DataError(f"patch {self.patch} out of range for {h}x{w} image")
        if not 1 <= self.stride <= self.patch:
            raise DataError(f"stride {self.stride} must be in [1, patch={self.patch}]")
        if self.weighting not in ("none", "abs-w"):
            raise DataError(f"unknown weighting mode {self.weighting!r}")
        if self.degenerate_policy != "zero-map":
            raise DataError(f"unknown degenerate policy {self.degenerate_policy!r}")


def make_grid(h: int, w: int, patch: int = DEFAULT_PATCH, stride: int = DEFAULT_STRIDE) -> OcclusionGrid:
    """Dense grid of top-left corners: multiples of stride, occluder fully inside."""
    if patch > min(h, w):
        raise DataError(f"patch {patch} exceeds image side ({h}x{w})")
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    positions = [
        (r, c)
        for r in range(0, h - patch + 1, stride)
        for c in range(0, w - patch + 1, stride)
    ]
    return OcclusionGrid(patch=patch, stride=stride, positions=positions)


def occlude(img: np.ndarray, pos: tuple[int, int], patch: int,
            fill: tuple[float, float, float]) -> np.ndarray:
    """Copy of img with the patch square at pos set to the per-channel fill."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    r, c = pos
    if r < 0 or c < 0 or r + patch > h or c + patch > w:
        raise DataError(f"occluder at {pos} size {patch} out of bounds for {h}x{w}")
    out = img.copy()
    out[r:r + patch, c:c + patch, :] = np.asarray(fill, dtype=np.float64)
    return out


def discrepancy(f_orig: np.ndarray, f_occ: np.ndarray, u: np.ndarray | None = None) -> float:
    """Weighted L2 norm of the feature difference."""
    a = np.asarray(f_orig, dtype=np.float64)
    b = np.asarray(f_occ, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"feature shapes differ: {a.shape} vs {b.shape}")
    delta = a - b
    if u is not None:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != a.shape:
            raise DataError(f"weighting shape {u.shape} does not match features {a.shape}")
        delta = u * delta
    return float(np.sqrt(np.dot(delta, delta)))


def _weight_vector(model: LinearModel | None, dim: int, mode: str) -> np.ndarray:
    if mode == "none":
        return np.ones(dim, dtype=np.float64)
    if model is None:
        raise DataError("weighting 'abs-w' needs a trained domain model")
    if model.dim != dim:
        raise DataError(f"model dim {model.dim} does not match extractor dim {dim}")
    return domain_weighting(model)


def _overlapping_cells(bounds, r0: int, r1: int, c0: int, c1: int) -> list[int]:
    return [
        k for k, (a0, a1, b0, b1) in enumerate(bounds)
        if a0 < r1 and r0 < a1 and b0 < c1 and c0 < b1
    ]


class _BuiltinMapWorker:
    """Computes per-position discrepancies with private mutable buffers.

    Keeps the image, its luminance, and the gradient orientation fields
    up to date under occlude/restore; only cells the occluder touches
    (one-pixel halo for histograms) are recomputed, with the same per-cell
    routines the reference values came from, so untouched coordinates
    cancel exactly.
    """

    def __init__(self, work: np.ndarray, lum: np.ndarray,
                 gbin: np.ndarray, gmag: np.ndarray, bounds,
                 orig_m32: np.ndarray, orig_h32: np.ndarray,
                 u_m: np.ndarray, u_h: np.ndarray,
                 patch: int, fill64: np.ndarray):
        self.work = work.copy()
        self.lum = lum.copy()
        self.gbin = gbin.copy()
        self.gmag = gmag.copy()
        self.bounds = bounds
        self.orig_m = orig_m32.astype(np.float64)  # (16, 6)
        self.orig_h = orig_h32.astype(np.float64)  # (16, 8)
        self.u_m = u_m                             # (16, 6)
        self.u_h = u_h                             # (16, 8)
        self.patch = patch
        self.fill64 = fill64

    def discrepancy_at(self, r: int, c: int) -> float:
        p = self.patch
        h, w = self.lum.shape
        wr0, wr1 = max(r - 1, 0), min(r + p + 1, h)
        wc0, wc1 = max(c - 1, 0), min(c + p + 1, w)
        img_save = self.work[r:r + p, c:c + p, :].copy()
        lum_save = self.lum[r:r + p, c:c + p].copy()
        bin_save = self.gbin[wr0:wr1, wc0:wc1].copy()
        mag_save = self.gmag[wr0:wr1, wc0:wc1].copy()

        self.work[r:r + p, c:c + p, :] = self.fill64
        self.lum[r:r + p, c:c + p] = luminance(self.work[r:r + p, c:c + p, :])
        nb, nm = orientation_fields(self.lum, wr0, wr1, wc0, wc1)
        self.gbin[wr0:wr1, wc0:wc1] = nb
        self.gmag[wr0:wr1, wc0:wc1] = nm

        d2 = 0.0
        for k in _overlapping_cells(self.bounds, r, r + p, c, c + p):
            b = self.bounds[k]
            new_m = cell_moments(self.work, *b).astype(np.float32).astype(np.float64)
            v = self.u_m[k] * (self.orig_m[k] - new_m)
            d2 += float(v @ v)
        for k in _overlapping_cells(self.bounds, wr0, wr1, wc0, wc1):
            r0, r1, c0, c1 = self.bounds[k]
            new_h = hist_from_fields(
                self.gbin[r0:r1, c0:c1], self.gmag[r0:r1, c0:c1]
            ).astype(np.float32).astype(np.float64)
            v = self.u_h[k] * (self.orig_h[k] - new_h)
            d2 += float(v @ v)

        self.work[r:r + p, c:c + p, :] = img_save
        self.lum[r:r + p, c:c + p] = lum_save
        self.gbin[wr0:wr1, wc0:wc1] = bin_save
        self.gmag[wr0:wr1, wc0:wc1] = mag_save
        return float(np.sqrt(d2))


def _builtin_distances(img: np.ndarray, grid: OcclusionGrid, u: np.ndarray,
                       fill: tuple[float, float, float], jobs: int) -> np.ndarray:
    work = np.asarray(img).astype(np.float32).astype(np.float64)
    lum = luminance(work)
    h, w = lum.shape
    gbin, gmag = orientation_fields(lum, 0, h, 0, w)
    bounds = cell_bounds(h, w)
    orig_m = np.stack([cell_moments(work, *b) for b in bounds]).astype(np.float32)
    orig_h = np.stack([
        hist_from_fields(gbin[r0:r1, c0:c1], gmag[r0:r1, c0:c1])
        for r0, r1, c0, c1 in bounds
    ]).astype(np.float32)
    u_m = u[: 16 * 6].reshape(16, 6)
    u_h = u[16 * 6:].reshape(16, 8)
    fill64 = np.asarray(fill, dtype=np.float32).astype(np.float64)

    d = np.zeros(len(grid.positions), dtype=np.float64)

    def run_chunk(lo: int, hi: int) -> None:
        worker = _BuiltinMapWorker(work, lum, gbin, gmag, bounds,
                                   orig_m, orig_h, u_m, u_h, grid.patch, fill64)
        for i in range(lo, hi):
            r, c = grid.positions[i]
            d[i] = worker.discrepancy_at(r, c)

    n = len(grid.positions)
    jobs = max(1, min(jobs, n))
    if jobs == 1:
        run_chunk(0, n)
    else:
        step = (n + jobs - 1) // jobs
        spans = [(lo, min(lo + step, n)) for lo in range(0, n, step)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(lambda s: run_chunk(*s), spans))
    return d


def _generic_distances(img: np.ndarray, extractor, grid: OcclusionGrid, u: np.ndarray,
                       fill: tuple[float, float, float]) -> np.ndarray:
    f_orig = extract(extractor, img)
    d = np.zeros(len(grid.positions), dtype=np.float64)
    for i, pos in enumerate(grid.positions):
        occ = occlude(img, pos, grid.patch, fill)
        try:
            f_occ = extract(extractor, occ)
        except (DataError, ProtocolError) as exc:
            raise type(exc)(f"extractor failed at occluder position {pos}: {exc}") from exc
        d[i] = discrepancy(f_orig, f_occ, u)
    return d


def accumulate_map(h: int, w: int, grid: OcclusionGrid, distances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spread each occluder's discrepancy over its pixels; average overlaps.

    Returns (raw, covered): raw per-pixel means with 0 where uncovered.
    """
    total = np.zeros((h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    p = grid.patch
    for i, (r, c) in enumerate(grid.positions):
        total[r:r + p, c:c + p] += distances[i]
        count[r:r + p, c:c + p] += 1
    covered = count > 0
    raw = np.zeros((h, w), dtype=np.float64)
    np.divide(total, count, out=raw, where=covered)
    return raw, covered


def rescale_map(raw: np.ndarray, covered: np.ndarray) -> np.ndarray:
    """Min-max rescale covered pixels to [0, 1]; all-zero when degenerate."""
    scores = np.zeros_like(raw)
    if covered.any():
        vals = raw[covered]
        mn, mx = float(vals.min()), float(vals.max())
        if mx > mn:
            scores[covered] = (raw[covered] - mn) / (mx - mn)
    return scores


def build_map(img: np.ndarray, extractor, model: LinearModel | None,
              cfg: MapConfig | None = None, jobs: int = 1) -> np.ndarray:
    """Domainness map of one image: float32 (H, W) with covered scores in [0, 1]."""
    cfg = cfg or MapConfig()
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    cfg.validate(h, w)
    u = _weight_vector(model, extractor.dim, cfg.weighting)
    grid = make_grid(h, w, cfg.patch, cfg.stride)
    if isinstance(extractor, BuiltinExtractor):
        distances = _builtin_distances(img, grid, u, cfg.fill, jobs)
    else:
        distances = _generic_distances(img, extractor, grid, u, cfg.fill)
    raw, covered = accumulate_map(h, w, grid, distances)
    return rescale_map(raw, covered).astype(np.float32)
