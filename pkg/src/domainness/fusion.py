"""Object classification over levels and whole images, and margin fusion.

The final prediction for an image is argmax over classes of the mean of the
nine level-pair margins plus the whole-image margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaptation import AlignmentTransform, apply_transform, fit_second_order, identity_transform
from .classifier import (
    MulticlassModel,
    TrainConfig,
    margin_matrix,
    train_multiclass,
)
from .errors import DataError
from .levels import LEVELS

N_PAIRS = 9
PAIR_ORDER = [(si, tj) for si in LEVELS for tj in LEVELS]


@dataclass
class MarginMatrix:
    """Per-class margins for one image from one classifier."""
    classes: list[str]
    values: np.ndarray  # (C,)


@dataclass
class LevelSet:
    """Descriptors for one dataset side: level -> (N, D) matrix, plus labels."""
    features: dict[str, np.ndarray]
    labels: list[str]

    def validate(self) -> None:
        n = len(self.labels)
        for lv in LEVELS:
            if lv not in self.features:
                raise DataError(f"missing level {lv} descriptors")
            if self.features[lv].shape[0] != n:
                raise DataError(f"level {lv} has {self.features[lv].shape[0]} rows for {n} labels")


@dataclass
class PairEvaluation:
    classes: list[str]
    accuracy: dict[tuple[str, str], float]
    margins: dict[tuple[str, str], np.ndarray]  # (N_target, C) per pair
    models: dict[tuple[str, str], MulticlassModel] = field(default_factory=dict)
    transforms: dict[tuple[str, str], AlignmentTransform] = field(default_factory=dict)

    def mean_accuracy(self) -> float:
        return float(np.mean([self.accuracy[p] for p in PAIR_ORDER]))


def _accuracy_from_margins(mm: np.ndarray, classes: list[str], labels: list[str]) -> float:
    pred = np.argmax(mm, axis=1)
    truth = np.array([classes.index(t) if t in classes else -1 for t in labels])
    return float(np.mean(pred == truth))


def evaluate_pairs(source: LevelSet, target: LevelSet, cfg: TrainConfig,
                   adapt: str = "none", eps: float = 1e-3) -> PairEvaluation:
    """Train/test the 9 (source level, target level) combinations.

    adapt: "none" trains one classifier per source level and reuses it across
    target levels; "identity" and "second-order" train per pair on
    (identity- or covariance-aligned) source descriptors.
    """
    if adapt not in ("none", "identity", "second-order"):
        raise DataError(f"unknown adaptation mode {adapt!r}")
    source.validate()
    target.validate()
    classes = sorted(set(source.labels))
    result = PairEvaluation(classes=classes, accuracy={}, margins={})

    per_level_models: dict[str, MulticlassModel] = {}
    if adapt == "none":
        for lv in LEVELS:
            per_level_models[lv] = train_multiclass(source.features[lv], source.labels, cfg)

    for si, tj in PAIR_ORDER:
        Xs = source.features[si]
        Xt = target.features[tj]
        if adapt == "none":
            model = per_level_models[si]
        else:
            if adapt == "identity":
                transform = identity_transform(Xs.shape[1])
            else:
                transform = fit_second_order(Xs, Xt, eps=eps)
            result.transforms[(si, tj)] = transform
            model = train_multiclass(apply_transform(transform, Xs), source.labels, cfg)
        result.models[(si, tj)] = model
        mm = margin_matrix(model, Xt)
        result.margins[(si, tj)] = mm
        result.accuracy[(si, tj)] = _accuracy_from_margins(mm, classes, target.labels)
    return result


def fuse(level_margins: list[MarginMatrix], global_margin: MarginMatrix) -> str:
    """Final class: argmax of mean level margin plus global margin."""
    if len(level_margins) != N_PAIRS:
        raise DataError(f"fusion needs {N_PAIRS} level margin matrices, got {len(level_margins)}")
    classes = global_margin.classes
    for m in level_margins:
        if m.classes != classes:
            raise DataError(f"class list mismatch in fusion: {m.classes} vs {classes}")
    stack = np.stack([m.values for m in level_margins])
    score = stack.mean(axis=0) + np.asarray(global_margin.values, dtype=np.float64)
    return classes[int(np.argmax(score))]


def fused_scores(level_margin_mats: list[np.ndarray], global_mat: np.ndarray) -> np.ndarray:
    """(N, C) fused score matrix for a whole target set."""
    if len(level_margin_mats) != N_PAIRS:
        raise DataError(f"fusion needs {N_PAIRS} margin matrices, got {len(level_margin_mats)}")
    stack = np.stack(level_margin_mats)
    return stack.mean(axis=0) + np.asarray(global_mat, dtype=np.float64)


def fused_accuracy(level_margin_mats: list[np.ndarray], global_mat: np.ndarray,
                   classes: list[str], labels: list[str]) -> tuple[float, np.ndarray]:
    scores = fused_scores(level_margin_mats, global_mat)
    return _accuracy_from_margins(scores, classes, labels), scores


def evaluate_fused(global_model: MulticlassModel,
                   src_global: np.ndarray, tgt_global: np.ndarray,
                   tgt_labels: list[str],
                   unadapted: PairEvaluation,
                   adapted: PairEvaluation | None,
                   ft_accuracy: float | None = None) -> dict:
    """Assemble the 13-row accuracy report plus fused per-image scores."""
    classes = global_model.classes
    if unadapted.classes != classes:
        raise DataError("level classifiers and global classifier disagree on classes")
    global_mm = margin_matrix(global_model, tgt_global)
    g_acc = _accuracy_from_margins(global_mm, classes, tgt_labels)

    dl_mats = [unadapted.margins[p] for p in PAIR_ORDER]
    fused_dl_acc, fused_dl = fused_accuracy(dl_mats, global_mm, classes, tgt_labels)

    rows = [
        {"name": "G", "accuracy": g_acc},
        {"name": "G-FT", "accuracy": ft_accuracy,
         "note": None if ft_accuracy is not None else "not applicable without a second global feature set"},
    ]
    for si, tj in PAIR_ORDER:
        rows.append({"name": f"{si}-{tj} level", "accuracy": unadapted.accuracy[(si, tj)]})
    rows.append({"name": "G + DL", "accuracy": fused_dl_acc})

    final_scores = fused_dl
    if adapted is not None:
        adl_mats = [adapted.margins[p] for p in PAIR_ORDER]
        fused_adl_acc, fused_adl = fused_accuracy(adl_mats, global_mm, classes, tgt_labels)
        rows.append({"name": "G + aligned-DL", "accuracy": fused_adl_acc})
        final_scores = fused_adl
    else:
        rows.append({"name": "G + aligned-DL", "accuracy": None, "note": "adaptation stage not run"})

    pred_idx = np.argmax(final_scores, axis=1)
    return {
        "classes": classes,
        "rows": rows,
        "aligned_level_accuracy": (
            {f"{si}-{tj}": adapted.accuracy[(si, tj)] for si, tj in PAIR_ORDER} if adapted else None
        ),
        "fused_scores": final_scores,
        "predictions": [classes[i] for i in pred_idx],
    }
