"""Second-order feature alignment: whiten source covariance, recolor to target.

The transform is Ct^(1/2) Cs^(-1/2) built from symmetric eigendecompositions
(descending eigenvalues, first nonzero eigenvector coordinate positive) with
ridge regularization relative to the mean eigenvalue; applied features are
re-centered from the source mean to the target mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from . import formats

DEFAULT_EPS = 1e-3


@dataclass
class AlignmentTransform:
    dim: int
    kind: str  # "identity" | "second-order"
    matrix: np.ndarray       # (dim, dim)
    source_mean: np.ndarray  # (dim,)
    target_mean: np.ndarray  # (dim,)


def identity_transform(dim: int) -> AlignmentTransform:
    return AlignmentTransform(
        dim=dim,
        kind="identity",
        matrix=np.eye(dim),
        source_mean=np.zeros(dim),
        target_mean=np.zeros(dim),
    )


def _canonical_eigh(sym: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with descending eigenvalues and a fixed sign convention."""
    vals, vecs = np.linalg.eigh(sym)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return vals, vecs


def _matrix_power(sym: np.ndarray, power: float, floor: float) -> np.ndarray:
    vals, vecs = _canonical_eigh(sym)
    vals = np.maximum(vals, floor)
    return (vecs * (vals ** power)) @ vecs.T


def _population_cov(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    centered = X - mean
    return centered.T @ centered / X.shape[0], mean


def fit_second_order(source: np.ndarray, target: np.ndarray, eps: float = DEFAULT_EPS) -> AlignmentTransform:
    """Fit the covariance-matching transform from source and target samples.

    `eps` is relative: each covariance gets a ridge of eps times its mean
    eigenvalue (with an absolute floor for all-zero covariances), and the
    eigenvalue clamp uses the same value.
    """
    Xs = np.asarray(source, dtype=np.float64)
    Xt = np.asarray(target, dtype=np.float64)
    if Xs.ndim != 2 or Xt.ndim != 2:
        raise DataError("source and target must be N x D matrices")
    if Xs.shape[1] != Xt.shape[1]:
        raise DataError(f"dim mismatch: source {Xs.shape[1]} vs target {Xt.shape[1]}")
    if Xs.shape[0] < 2 or Xt.shape[0] < 2:
        raise DataError("need at least 2 samples per side")
    if eps <= 0:
        raise DataError(f"eps must be > 0, got {eps}")
    d = Xs.shape[1]
    Cs, mu_s = _population_cov(Xs)
    Ct, mu_t = _population_cov(Xt)
    ridge_s = eps * max(np.trace(Cs) / d, np.finfo(np.float64).tiny)
    ridge_t = eps * max(np.trace(Ct) / d, np.finfo(np.float64).tiny)
    whiten = _matrix_power(Cs + ridge_s * np.eye(d), -0.5, ridge_s)
    recolor = _matrix_power(Ct + ridge_t * np.eye(d), 0.5, ridge_t)
    return AlignmentTransform(
        dim=d,
        kind="second-order",
        matrix=recolor @ whiten,
        source_mean=mu_s,
        target_mean=mu_t,
    )


def apply_transform(transform: AlignmentTransform, f: np.ndarray) -> np.ndarray:
    """matrix . (f - source_mean) + target_mean; identity returns f unchanged."""
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    rows = f[None, :] if single else f
    if rows.shape[1] != transform.dim:
        raise DataError(f"feature dim {rows.shape[1]} does not match transform dim {transform.dim}")
    if transform.kind == "identity":
        out = rows.copy()
    else:
        out = (rows - transform.source_mean) @ transform.matrix.T + transform.target_mean
    return out[0] if single else out


def save(transform: AlignmentTransform, path: str | Path) -> None:
    formats.save_transform(transform.kind, transform.source_mean, transform.target_mean,
                           transform.matrix, path)


def load(path: str | Path) -> AlignmentTransform:
    kind, src_mean, tgt_mean, matrix = formats.load_transform(path)
    return AlignmentTransform(
        dim=matrix.shape[0],
        kind=kind,
        matrix=matrix.astype(np.float64),
        source_mean=src_mean.astype(np.float64),
        target_mean=tgt_mean.astype(np.float64),
    )
