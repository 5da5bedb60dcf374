"""Binary artifact files: .dmap maps, .dfea feature caches, .lmod models, .atfm transforms.

All integers are 32-bit unsigned little-endian, all reals 32-bit little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

_U32 = struct.Struct("<I")


def _read_exact(fh, n: int, what: str, path: Path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"{path}: truncated file reading {what} (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_u32(fh, what: str, path: Path) -> int:
    return _U32.unpack(_read_exact(fh, 4, what, path))[0]


def save_map(scores: np.ndarray, path: str | Path) -> None:
    """Write a finalized domainness map as a .dmap file."""
    scores = np.asarray(scores, dtype=np.float32)
    if scores.ndim != 2:
        raise DataError(f"map must be 2-D, got shape {scores.shape}")
    h, w = scores.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"DMAP")
        fh.write(_U32.pack(1))
        fh.write(_U32.pack(h))
        fh.write(_U32.pack(w))
        fh.write(scores.astype("<f4", copy=False).tobytes(order="C"))


def load_map(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic", path)
        if magic != b"DMAP":
            raise DataError(f"{path}: not a DMAP file (magic {magic!r})")
        version = _read_u32(fh, "version", path)
        if version != 1:
            raise DataError(f"{path}: unsupported DMAP version {version}")
        h = _read_u32(fh, "height", path)
        w = _read_u32(fh, "width", path)
        raw = _read_exact(fh, h * w * 4, "scores", path)
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).copy()


def save_features(rows: np.ndarray, path: str | Path) -> None:
    """Write an N x D feature matrix as a .dfea cache file."""
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise DataError(f"feature cache must be 2-D, got shape {rows.shape}")
    n, d = rows.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"DFEA")
        fh.write(_U32.pack(1))
        fh.write(_U32.pack(n))
        fh.write(_U32.pack(d))
        fh.write(rows.astype("<f4", copy=False).tobytes(order="C"))


def load_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic", path)
        if magic != b"DFEA":
            raise DataError(f"{path}: not a DFEA file (magic {magic!r})")
        version = _read_u32(fh, "version", path)
        if version != 1:
            raise DataError(f"{path}: unsupported DFEA version {version}")
        n = _read_u32(fh, "count", path)
        d = _read_u32(fh, "dim", path)
        raw = _read_exact(fh, n * d * 4, "features", path)
    return np.frombuffer(raw, dtype="<f4").reshape(n, d).copy()


def save_model(weights: np.ndarray, biases: np.ndarray, classes: list[str], path: str | Path) -> None:
    """Write a linear model as a .lmod file.

    `weights` is R x D (one row per stored discriminant), `biases` length R.
    Binary models store a single row; one-vs-rest models store one per class.
    """
    weights = np.asarray(weights, dtype=np.float32)
    biases = np.asarray(biases, dtype=np.float32)
    if weights.ndim != 2 or biases.shape != (weights.shape[0],):
        raise DataError("model weights must be R x D with R biases")
    label_block = b"\x00".join(c.encode("utf-8") for c in classes)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"LMOD")
        fh.write(_U32.pack(1))
        fh.write(_U32.pack(weights.shape[1]))
        fh.write(_U32.pack(len(classes)))
        fh.write(_U32.pack(len(label_block)))
        fh.write(label_block)
        for r in range(weights.shape[0]):
            fh.write(weights[r].astype("<f4", copy=False).tobytes(order="C"))
            fh.write(np.float32(biases[r]).astype("<f4").tobytes())


def load_model(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a .lmod file; row count is inferred from the trailing byte count."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic", path)
        if magic != b"LMOD":
            raise DataError(f"{path}: not a LMOD file (magic {magic!r})")
        version = _read_u32(fh, "version", path)
        if version != 1:
            raise DataError(f"{path}: unsupported LMOD version {version}")
        dim = _read_u32(fh, "dim", path)
        n_classes = _read_u32(fh, "class count", path)
        block_len = _read_u32(fh, "label block length", path)
        block = _read_exact(fh, block_len, "label block", path)
        classes = [b.decode("utf-8") for b in block.split(b"\x00")] if block_len else []
        if len(classes) != n_classes:
            raise DataError(f"{path}: label block has {len(classes)} labels, expected {n_classes}")
        rest = fh.read()
    row_bytes = 4 * (dim + 1)
    if row_bytes == 0 or len(rest) % row_bytes != 0:
        raise DataError(f"{path}: weight payload of {len(rest)} bytes is not a multiple of {row_bytes}")
    rows = len(rest) // row_bytes
    flat = np.frombuffer(rest, dtype="<f4").reshape(rows, dim + 1)
    return flat[:, :dim].copy(), flat[:, dim].copy(), classes


_KIND_BYTES = {"identity": 0, "second-order": 1}
_KIND_NAMES = {v: k for k, v in _KIND_BYTES.items()}


def save_transform(kind: str, source_mean: np.ndarray, target_mean: np.ndarray,
                   matrix: np.ndarray, path: str | Path) -> None:
    """Write an alignment transform as an .atfm file."""
    if kind not in _KIND_BYTES:
        raise DataError(f"unknown transform kind {kind!r}")
    matrix = np.asarray(matrix, dtype=np.float32)
    dim = matrix.shape[0]
    if matrix.shape != (dim, dim):
        raise DataError(f"transform matrix must be square, got {matrix.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"ATFM")
        fh.write(_U32.pack(1))
        fh.write(_U32.pack(dim))
        fh.write(bytes([_KIND_BYTES[kind]]))
        fh.write(np.asarray(source_mean, dtype="<f4").tobytes(order="C"))
        fh.write(np.asarray(target_mean, dtype="<f4").tobytes(order="C"))
        fh.write(matrix.astype("<f4", copy=False).tobytes(order="C"))


def load_transform(path: str | Path) -> tuple[str, np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic", path)
        if magic != b"ATFM":
            raise DataError(f"{path}: not an ATFM file (magic {magic!r})")
        version = _read_u32(fh, "version", path)
        if version != 1:
            raise DataError(f"{path}: unsupported ATFM version {version}")
        dim = _read_u32(fh, "dim", path)
        kind_byte = _read_exact(fh, 1, "kind", path)[0]
        if kind_byte not in _KIND_NAMES:
            raise DataError(f"{path}: unknown transform kind byte {kind_byte}")
        src_mean = np.frombuffer(_read_exact(fh, dim * 4, "source mean", path), dtype="<f4").copy()
        tgt_mean = np.frombuffer(_read_exact(fh, dim * 4, "target mean", path), dtype="<f4").copy()
        mat = np.frombuffer(_read_exact(fh, dim * dim * 4, "matrix", path), dtype="<f4").reshape(dim, dim).copy()
    return _KIND_NAMES[kind_byte], src_mean, tgt_mean, mat
