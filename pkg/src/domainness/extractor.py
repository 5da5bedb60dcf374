"""Image-to-feature mapping.

The built-in descriptor partitions the image into a 4x4 grid of cells and
concatenates, cells in row-major order:

  * 96 moment coordinates: per cell, per channel (R, G, B), the mean and the
    population standard deviation;
  * 128 texture coordinates: per cell, an 8-bin histogram of luminance
    gradient orientation over [0, pi), magnitude-weighted, L1-normalized
    per cell (all-zero when the cell has no gradient energy).

Total dim 224. Input pixels are quantized to float32 on entry so that a
feature vector is a pure function of the float32 pixel stream; this is the
same quantization the FEX0 wire format applies, so an external process fed
the same image computes from identical values.

External extractors run as subprocesses speaking the FEX0 protocol over
stdin/stdout (little-endian u32 integers, little-endian f32 reals):

  handshake  process -> host   "FEX0" + dim
  request    host -> process   "IMG0" + H + W + C + H*W*C reals
  response   process -> host   "VEC0" + dim reals
  shutdown   host -> process   "END0", process exits 0
"""

from __future__ import annotations

import os
import select
import shlex
import struct
import subprocess
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ProtocolError

BUILTIN_DIM = 224
_GRID = 4
_BINS = 8
_MIN_SIDE = 8
_U32 = struct.Struct("<I")

LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class ExtractorDescriptor:
    name: str
    dim: int
    kind: str  # "builtin" | "subprocess"
    command: str | None = None


def luminance(img: np.ndarray) -> np.ndarray:
    """Per-pixel luminance; the explicit expression keeps it bit-reproducible."""
    return LUMA_R * img[:, :, 0] + LUMA_G * img[:, :, 1] + LUMA_B * img[:, :, 2]


def cell_bounds(h: int, w: int) -> list[tuple[int, int, int, int]]:
    """Row-major (r0, r1, c0, c1) bounds of the 4x4 cell grid.

    Remainder pixels go to the last row/column of cells.
    """
    ch, cw = h // _GRID, w // _GRID
    bounds = []
    for i in range(_GRID):
        r0 = i * ch
        r1 = (i + 1) * ch if i < _GRID - 1 else h
        for j in range(_GRID):
            c0 = j * cw
            c1 = (j + 1) * cw if j < _GRID - 1 else w
            bounds.append((r0, r1, c0, c1))
    return bounds


def cell_moments(img: np.ndarray, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
    """Mean and population std per channel for one cell: [mR, sR, mG, sG, mB, sB]."""
    sl = img[r0:r1, c0:c1, :]
    n = sl.shape[0] * sl.shape[1]
    s1 = sl.sum(axis=(0, 1))
    s2 = (sl * sl).sum(axis=(0, 1))
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0)
    out = np.empty(6, dtype=np.float64)
    out[0::2] = mean
    out[1::2] = np.sqrt(var)
    return out


def orientation_fields(lum: np.ndarray, r0: int, r1: int, c0: int, c1: int):
    """(bins, mags) of the luminance gradient for a window of the full image.

    Central differences in the interior, one-sided at image borders; the
    orientation is folded into [0, pi) and binned over 8 sectors. Values are
    identical whether computed full-image or per window, because neighbors
    are read from the full array.
    """
    h, w = lum.shape
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    up = np.maximum(rows - 1, 0)
    down = np.minimum(rows + 1, h - 1)
    left = np.maximum(cols - 1, 0)
    right = np.minimum(cols + 1, w - 1)
    row_div = (down - up).astype(np.float64)[:, None]
    col_div = (right - left).astype(np.float64)[None, :]
    gy = (lum[down, c0:c1] - lum[up, c0:c1]) / row_div
    gx = (lum[r0:r1][:, right] - lum[r0:r1][:, left]) / col_div
    mags = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx)
    theta = np.where(theta < 0.0, theta + np.pi, theta)
    bins = np.floor(theta * (_BINS / np.pi)).astype(np.int64)
    np.clip(bins, 0, _BINS - 1, out=bins)
    return bins, mags


def hist_from_fields(bins: np.ndarray, mags: np.ndarray) -> np.ndarray:
    """L1-normalized 8-bin histogram from orientation-field slices."""
    hist = np.bincount(bins.ravel(), weights=mags.ravel(), minlength=_BINS)
    total = hist.sum()
    if total > 0.0:
        return hist / total
    return np.zeros(_BINS, dtype=np.float64)


def cell_orientation_hist(lum: np.ndarray, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
    """Magnitude-weighted orientation histogram of one cell."""
    bins, mags = orientation_fields(lum, r0, r1, c0, c1)
    return hist_from_fields(bins, mags)


def _cell_id_grid(h: int, w: int) -> np.ndarray:
    ch, cw = h // _GRID, w // _GRID
    rows = np.minimum(np.arange(h) // ch, _GRID - 1)
    cols = np.minimum(np.arange(w) // cw, _GRID - 1)
    return rows[:, None] * _GRID + cols[None, :]


def builtin_extract(img: np.ndarray) -> np.ndarray:
    """224-dim descriptor of an (H, W, 3) image with H, W >= 8. Returns float32."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"builtin extractor needs (H, W, 3) input, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < _MIN_SIDE or w < _MIN_SIDE:
        raise DataError(f"image too small for builtin extractor: {h}x{w} (need >= {_MIN_SIDE})")
    work = img.astype(np.float32).astype(np.float64)
    lum = luminance(work)
    bounds = cell_bounds(h, w)
    moments = np.empty(len(bounds) * 6, dtype=np.float64)
    for k, b in enumerate(bounds):
        moments[6 * k:6 * k + 6] = cell_moments(work, *b)
    bins, mags = orientation_fields(lum, 0, h, 0, w)
    combined = _cell_id_grid(h, w) * _BINS + bins
    hist = np.bincount(combined.ravel(), weights=mags.ravel(),
                       minlength=_GRID * _GRID * _BINS).reshape(_GRID * _GRID, _BINS)
    totals = hist.sum(axis=1)
    hists = np.zeros_like(hist)
    np.divide(hist, totals[:, None], out=hists, where=totals[:, None] > 0.0)
    return np.concatenate([moments, hists.ravel()]).astype(np.float32)


class BuiltinExtractor:
    """In-process deterministic descriptor."""

    descriptor = ExtractorDescriptor(name="builtin", dim=BUILTIN_DIM, kind="builtin")

    @property
    def dim(self) -> int:
        return BUILTIN_DIM

    def extract(self, img: np.ndarray) -> np.ndarray:
        return builtin_extract(img)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SubprocessExtractor:
    """Host side of the FEX0 protocol; strictly serial request/response.

    Pipes run unbuffered and every read/write goes through select() with a
    deadline, so a garbled or stuck peer produces an error, never a hang.
    """

    def __init__(self, command: str, timeout: float = 60.0):
        self.command = command
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise ProtocolError(f"cannot launch extractor {command!r}: {exc}") from exc
        try:
            head = self._read_exact(8, "handshake")
            if head[:4] != b"FEX0":
                raise ProtocolError(f"bad handshake magic {head[:4]!r} from {command!r}")
            self._dim = _U32.unpack(head[4:8])[0]
            if self._dim == 0:
                raise ProtocolError(f"extractor {command!r} announced dim 0")
        except ProtocolError:
            self._kill()
            raise
        self.descriptor = ExtractorDescriptor(
            name=f"subprocess:{command}", dim=self._dim, kind="subprocess", command=command
        )

    @property
    def dim(self) -> int:
        return self._dim

    def _read_exact(self, n: int, what: str) -> bytes:
        fd = self._proc.stdout.fileno()
        out = b""
        while len(out) < n:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                raise ProtocolError(
                    f"extractor timed out after {self.timeout}s reading {what} "
                    f"(wanted {n} bytes, got {len(out)})"
                )
            chunk = os.read(fd, n - len(out))
            if not chunk:
                raise ProtocolError(
                    f"extractor EOF reading {what} (wanted {n} bytes, got {len(out)})"
                )
            out += chunk
        return out

    def _write_all(self, data: bytes, what: str) -> None:
        fd = self._proc.stdin.fileno()
        view = memoryview(data)
        while view:
            _, ready, _ = select.select([], [fd], [], self.timeout)
            if not ready:
                raise ProtocolError(f"extractor timed out after {self.timeout}s writing {what}")
            try:
                n = os.write(fd, view[: 1 << 16])
            except (BrokenPipeError, OSError) as exc:
                raise ProtocolError(f"broken pipe writing {what} to extractor: {exc}") from exc
            view = view[n:]

    def extract(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img)
        if img.ndim != 3:
            raise DataError(f"subprocess extractor needs (H, W, C) input, got shape {img.shape}")
        if self._proc.poll() is not None:
            raise ProtocolError(f"extractor process exited with code {self._proc.returncode}")
        h, w, c = img.shape
        payload = img.astype("<f4").tobytes(order="C")
        self._write_all(b"IMG0" + _U32.pack(h) + _U32.pack(w) + _U32.pack(c) + payload, "image request")
        head = self._read_exact(4, "response magic")
        if head != b"VEC0":
            raise ProtocolError(f"bad response magic {head!r} (expected b'VEC0')")
        raw = self._read_exact(self._dim * 4, f"response vector ({self._dim} reals)")
        return np.frombuffer(raw, dtype="<f4").copy()

    def _kill(self) -> None:
        try:
            self._proc.kill()
            self._proc.wait(timeout=5)
        except Exception:
            pass

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._write_all(b"END0", "shutdown")
                self._proc.stdin.close()
                self._proc.wait(timeout=self.timeout)
            except Exception:
                self._kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def get_extractor(spec: str | None = None, timeout: float = 60.0):
    """Resolve an extractor: None or "builtin" in-process, else a FEX0 command line."""
    if spec is None or spec == "builtin":
        return BuiltinExtractor()
    return SubprocessExtractor(spec, timeout=timeout)


def extract(extractor, img: np.ndarray) -> np.ndarray:
    """Feature vector for one image; dimension fixed by the extractor."""
    vec = extractor.extract(img)
    if vec.shape != (extractor.dim,):
        raise ProtocolError(f"extractor returned shape {vec.shape}, expected ({extractor.dim},)")
    return vec
