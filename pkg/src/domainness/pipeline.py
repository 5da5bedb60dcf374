"""Stage orchestration: caching, artifact layout, and the end-to-end run.

Every stage reads its inputs from disk artifacts and writes new ones, so a
rerun with intact caches is a no-op and outputs never depend on whether an
upstream stage was freshly computed or reused. Cache keys are content hashes
of the input files plus the stage parameters.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adaptation, formats
from .analysis import aggregate_stats, fg_bg_stats
from .classifier import (
    TrainConfig,
    binary_accuracy,
    load_binary,
    load_multiclass,
    margin_matrix,
    save_binary,
    save_multiclass,
    train_binary,
    train_multiclass,
)
from .errors import DataError
from .extractor import get_extractor
from .fusion import PAIR_ORDER, LevelSet, PairEvaluation, evaluate_fused, evaluate_pairs
from .images import load_image, load_mask, resize_canonical
from .levels import LEVELS, build_level_descriptors
from .manifest import DatasetManifest, parse_manifest, single_domain
from .occlusion import MapConfig, build_map
from .render import heatmap_png, overlay_png

log = logging.getLogger("domainness")


@dataclass
class Params:
    side: int = 256
    extractor: str | None = None  # None -> builtin; else FEX0 command line
    domain_train_frac: float = 1.0
    l2_lambda: float = 1e-3
    epochs: int = 3000
    # below the 672-dim descriptors' stability threshold; 0.1 oscillates there
    learning_rate: float = 0.01
    tolerance: float = 1e-10
    seed: int = 7
    patch: int = 16
    stride: int = 8
    fill: str = "auto"  # "auto" | "r,g,b"
    weighting: str = "abs-w"
    heatmaps: bool = False
    overlay_threshold: float = 0.5
    crop: int = 227
    scales: tuple[int, ...] = (32, 64, 128)
    n_patches: int = 100
    eps: float = 1e-3
    repeats: int = 1
    ft_src: str | None = None
    ft_tgt: str | None = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            l2_lambda=self.l2_lambda,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            tolerance=self.tolerance,
            seed=self.seed,
        )


@dataclass
class Run:
    out_dir: Path
    src: DatasetManifest
    tgt: DatasetManifest
    params: Params
    jobs: int = 1
    force: bool = False
    _digests: dict = field(default_factory=dict)

    @property
    def src_domain(self) -> str:
        return single_domain(self.src, "source")

    @property
    def tgt_domain(self) -> str:
        return single_domain(self.tgt, "target")

    def side_manifest(self, side: str) -> DatasetManifest:
        return self.src if side == "src" else self.tgt

    def manifest_digest(self, side: str) -> str:
        if side not in self._digests:
            m = self.side_manifest(side)
            h = hashlib.sha256()
            for e in m.entries:
                h.update(e.path.encode())
                h.update(e.domain.encode())
                h.update((e.class_label or "").encode())
                h.update(_file_sha(m.image_path(e)).encode())
                if e.mask:
                    h.update(_file_sha(m.mask_path(e)).encode())
            self._digests[side] = h.hexdigest()
        return self._digests[side]


def _file_sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(name: str, inputs: dict) -> str:
    blob = json.dumps({"stage": name, "inputs": inputs}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _cached(run: Run, key_file: Path, key: str, outputs: list[Path]) -> bool:
    if run.force:
        return False
    if not key_file.is_file():
        return False
    if key_file.read_text().strip() != key:
        return False
    return all(p.is_file() for p in outputs)


def _commit(key_file: Path, key: str) -> None:
    key_file.parent.mkdir(parents=True, exist_ok=True)
    key_file.write_text(key + "\n")


def _stem(entry_path: str) -> str:
    return Path(entry_path).stem


# Per-process worker state: initialized once per pool worker (or once in-process
# for jobs=1); results are pure functions of the task inputs either way.
_STATE: dict = {}


def _run_tasks(jobs: int, init, initargs: tuple, fn, tasks: list) -> list:
    """Map fn over tasks, in order, optionally across worker processes."""
    if not tasks:
        return []
    if jobs <= 1 or len(tasks) == 1:
        init(*initargs)
        try:
            return [fn(t) for t in tasks]
        finally:
            _teardown_state()
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks)),
                             initializer=init, initargs=initargs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (jobs * 4))))


def _teardown_state() -> None:
    ex = _STATE.pop("extractor", None)
    if ex is not None:
        ex.close()
    _STATE.clear()


def _features_init(extractor_spec, side_px):
    _STATE["extractor"] = get_extractor(extractor_spec)
    _STATE["side_px"] = side_px


def _features_task(task):
    i, img_path = task
    img = resize_canonical(load_image(img_path), _STATE["side_px"])
    vec = _STATE["extractor"].extract(img)
    means = [float(img[:, :, c].mean()) for c in range(3)]
    return i, vec, means


def _maps_init(extractor_spec, side_px, model_path, cfg_fields, heatmaps, threshold):
    _STATE["extractor"] = get_extractor(extractor_spec)
    _STATE["side_px"] = side_px
    _STATE["model"] = load_binary(model_path)
    _STATE["cfg"] = MapConfig(**cfg_fields)
    _STATE["heatmaps"] = heatmaps
    _STATE["threshold"] = threshold


def _maps_task(task):
    img_path, dmap_path, heat_path, overlay_path = task
    img = resize_canonical(load_image(img_path), _STATE["side_px"])
    scores = build_map(img, _STATE["extractor"], _STATE["model"], _STATE["cfg"], jobs=1)
    formats.save_map(scores, dmap_path)
    if _STATE["heatmaps"]:
        heatmap_png(scores, heat_path)
        overlay_png(img, scores, overlay_path, threshold=_STATE["threshold"])
    return dmap_path


def _levels_init(extractor_spec, side_px, seed, scales, n_patches):
    _STATE["extractor"] = get_extractor(extractor_spec)
    _STATE["side_px"] = side_px
    _STATE["seed"] = seed
    _STATE["scales"] = tuple(scales)
    _STATE["n_patches"] = n_patches


def _levels_task(task):
    i, img_path, dmap_path = task
    img = resize_canonical(load_image(img_path), _STATE["side_px"])
    scores = formats.load_map(dmap_path)
    desc = build_level_descriptors(
        img, scores, _STATE["extractor"],
        master_seed=_STATE["seed"], image_index=i,
        scales=_STATE["scales"], n_patches=_STATE["n_patches"],
    )
    return i, {lv: desc[lv].values for lv in LEVELS}


# ---------------------------------------------------------------- features

def stage_features(run: Run) -> None:
    """Whole-image features at the canonical size, plus per-image pixel means."""
    out = run.out_dir / "features"
    for side in ("src", "tgt"):
        m = run.side_manifest(side)
        dfea = out / f"{side}.dfea"
        meta = out / f"{side}.meta.json"
        key = _stage_key("features", {
            "manifest": run.manifest_digest(side),
            "side_px": run.params.side,
            "extractor": run.params.extractor or "builtin",
        })
        key_file = out / f"{side}.key"
        if _cached(run, key_file, key, [dfea, meta]):
            log.info("features[%s]: cached", side)
            continue
        log.info("features[%s]: extracting %d images", side, len(m.entries))
        tasks = [(i, str(m.image_path(e))) for i, e in enumerate(m.entries)]
        results = _run_tasks(run.jobs, _features_init,
                             (run.params.extractor, run.params.side), _features_task, tasks)
        rows = [None] * len(m.entries)
        means = [None] * len(m.entries)
        for i, vec, mu in results:
            rows[i] = vec
            means[i] = mu
        formats.save_features(np.stack(rows), dfea)
        meta.write_text(json.dumps({"pixel_means": means}, sort_keys=True))
        _commit(key_file, key)


def _load_side_features(run: Run, side: str) -> np.ndarray:
    return formats.load_features(run.out_dir / "features" / f"{side}.dfea")


# ------------------------------------------------------------ domain model

def _train_split(n_src: int, n_tgt: int, frac: float, seed: int) -> np.ndarray:
    """Boolean train membership over src entries followed by tgt entries."""
    if not 0.0 < frac <= 1.0:
        raise DataError(f"domain_train_frac must be in (0, 1], got {frac}")
    total = n_src + n_tgt
    train = np.ones(total, dtype=bool)
    if frac < 1.0:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xD0, 0))))
        for lo, n in ((0, n_src), (n_src, n_tgt)):
            k = max(1, int(round(frac * n)))
            picked = rng.permutation(n)[:k]
            mask = np.zeros(n, dtype=bool)
            mask[picked] = True
            train[lo:lo + n] = mask
    return train


def stage_train_domain(run: Run) -> None:
    """Binary domain discriminator plus the occluder fill color."""
    out = run.out_dir
    model_path = out / "models" / "domain.lmod"
    fill_path = out / "fill.json"
    report_path = out / "domain_report.json"
    key = _stage_key("train-domain", {
        "src": run.manifest_digest("src"),
        "tgt": run.manifest_digest("tgt"),
        "side_px": run.params.side,
        "extractor": run.params.extractor or "builtin",
        "frac": run.params.domain_train_frac,
        "train": vars(run.params.train_config()),
    })
    key_file = out / "models" / "domain.key"
    if _cached(run, key_file, key, [model_path, fill_path, report_path]):
        log.info("train-domain: cached")
        return
    stage_features(run)
    Xs = _load_side_features(run, "src")
    Xt = _load_side_features(run, "tgt")
    src_domain, tgt_domain = run.src_domain, run.tgt_domain
    if src_domain == tgt_domain:
        raise DataError(f"source and target share the domain label {src_domain!r}")
    X = np.vstack([Xs, Xt])
    # lexicographically smaller domain name is class 0
    classes = sorted([src_domain, tgt_domain])
    y = np.array(
        [float(classes.index(src_domain))] * len(Xs)
        + [float(classes.index(tgt_domain))] * len(Xt)
    )
    train = _train_split(len(Xs), len(Xt), run.params.domain_train_frac, run.params.seed)
    model = train_binary(X[train], y[train], run.params.train_config(), classes=classes)
    save_binary(model, model_path)

    meta_means = []
    for side in ("src", "tgt"):
        meta = json.loads((out / "features" / f"{side}.meta.json").read_text())
        meta_means.extend(meta["pixel_means"])
    means = np.asarray(meta_means, dtype=np.float64)
    fill = means[train].mean(axis=0)
    fill_path.write_text(json.dumps({"fill": [float(v) for v in fill]}, sort_keys=True))

    report = {
        "classes": classes,
        "train_accuracy": binary_accuracy(model, X[train], y[train]),
        "heldout_accuracy": (
            binary_accuracy(model, X[~train], y[~train]) if (~train).any() else None
        ),
        "train_count": int(train.sum()),
        "heldout_count": int((~train).sum()),
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _commit(key_file, key)
    log.info("train-domain: train acc %.3f", report["train_accuracy"])


def load_fill(run: Run) -> tuple[float, float, float]:
    if run.params.fill != "auto":
        try:
            parts = [float(v) for v in run.params.fill.split(",")]
        except ValueError:
            parts = []
        if len(parts) != 3:
            raise DataError(f"--fill wants 'auto' or 'r,g,b', got {run.params.fill!r}")
        return tuple(parts)
    doc = json.loads((run.out_dir / "fill.json").read_text())
    return tuple(doc["fill"])


# ------------------------------------------------------------------- maps

def map_path(run: Run, entry_path: str) -> Path:
    return run.out_dir / "maps" / f"{_stem(entry_path)}.dmap"


def stage_maps(run: Run) -> None:
    """Domainness map per image on both sides."""
    stage_train_domain(run)
    out = run.out_dir / "maps"
    key = _stage_key("maps", {
        "src": run.manifest_digest("src"),
        "tgt": run.manifest_digest("tgt"),
        "model": _file_sha(run.out_dir / "models" / "domain.lmod"),
        "side_px": run.params.side,
        "extractor": run.params.extractor or "builtin",
        "patch": run.params.patch,
        "stride": run.params.stride,
        "fill": load_fill(run),
        "weighting": run.params.weighting,
        "heatmaps": run.params.heatmaps,
        "threshold": run.params.overlay_threshold,
    })
    key_file = out / "stage.key"
    entries = [(s, e) for s in ("src", "tgt") for e in run.side_manifest(s).entries]
    all_paths = [map_path(run, e.path) for _, e in entries]
    if _cached(run, key_file, key, all_paths):
        log.info("maps: cached")
        return
    stale_key = not key_file.is_file() or key_file.read_text().strip() != key
    model = load_binary(run.out_dir / "models" / "domain.lmod")
    fill = load_fill(run)
    cfg = MapConfig(
        patch=run.params.patch,
        stride=run.params.stride,
        fill=fill,
        weighting=run.params.weighting,
    )
    todo = [
        (side, e) for side, e in entries
        if run.force or stale_key or not map_path(run, e.path).is_file()
    ]
    log.info("maps: building %d of %d maps", len(todo), len(entries))
    out.mkdir(parents=True, exist_ok=True)
    if run.params.heatmaps:
        (out / "heatmaps").mkdir(exist_ok=True)
        (out / "overlays").mkdir(exist_ok=True)
    tasks = []
    for side, e in todo:
        m = run.side_manifest(side)
        stem = _stem(e.path)
        tasks.append((
            str(m.image_path(e)),
            str(map_path(run, e.path)),
            str(out / "heatmaps" / f"{stem}.png"),
            str(out / "overlays" / f"{stem}.png"),
        ))
    cfg_fields = dict(patch=cfg.patch, stride=cfg.stride, fill=cfg.fill, weighting=cfg.weighting)
    _run_tasks(run.jobs, _maps_init,
               (run.params.extractor, run.params.side, str(run.out_dir / "models" / "domain.lmod"),
                cfg_fields, run.params.heatmaps, run.params.overlay_threshold),
               _maps_task, tasks)
    _commit(key_file, key)


# ---------------------------------------------------------------- analyze

def stage_analyze(run: Run) -> dict:
    stage_maps(run)
    out_path = run.out_dir / "analysis.json"
    key = _stage_key("analyze", {
        "maps": _file_sha(run.out_dir / "maps" / "stage.key"),
        "src": run.manifest_digest("src"),
        "tgt": run.manifest_digest("tgt"),
        "crop": run.params.crop,
    })
    key_file = run.out_dir / "analysis.key"
    if _cached(run, key_file, key, [out_path]):
        log.info("analyze: cached")
        return json.loads(out_path.read_text())

    per_image = []
    skipped = []
    for side in ("src", "tgt"):
        m = run.side_manifest(side)
        for e in m.entries:
            if not e.mask:
                skipped.append({"path": e.path, "reason": "no mask"})
                continue
            scores = formats.load_map(map_path(run, e.path))
            mask = load_mask(m.mask_path(e))
            if mask.shape != scores.shape:
                raise DataError(
                    f"mask {e.mask} is {mask.shape}, map is {scores.shape}; "
                    f"masks must match the canonical size"
                )
            try:
                mean_in, mean_out, n_in, n_out = fg_bg_stats(scores, mask, crop=run.params.crop)
            except DataError as exc:
                log.warning("analyze: skipping %s (%s)", e.path, exc)
                skipped.append({"path": e.path, "reason": str(exc)})
                continue
            per_image.append({
                "path": e.path, "domain": e.domain,
                "mean_in": mean_in, "mean_out": mean_out,
                "n_in": n_in, "n_out": n_out,
            })
    if not per_image:
        raise DataError("analyze: no image produced foreground/background stats")
    avg_in, avg_out = aggregate_stats([(r["mean_in"], r["mean_out"]) for r in per_image])
    per_domain = {}
    for dom in sorted({r["domain"] for r in per_image}):
        rows = [(r["mean_in"], r["mean_out"]) for r in per_image if r["domain"] == dom]
        d_in, d_out = aggregate_stats(rows)
        per_domain[dom] = {"avg_in": d_in, "avg_out": d_out, "images": len(rows)}
    report = {
        "pair": f"{run.src_domain}->{run.tgt_domain}",
        "crop": run.params.crop,
        "aggregate": {"avg_in": avg_in, "avg_out": avg_out, "images": len(per_image)},
        "per_domain": per_domain,
        "per_image": per_image,
        "skipped": skipped,
    }
    out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _commit(key_file, key)
    log.info("analyze: avg_in %.4f avg_out %.4f over %d images", avg_in, avg_out, len(per_image))
    return report


# ----------------------------------------------------------------- levels

def _levels_index_path(run: Run, side: str) -> Path:
    return run.out_dir / "levels" / f"{side}.index.json"


def stage_levels(run: Run) -> None:
    """L/M/H descriptors per image, cached as .dfea rows plus a JSON index."""
    stage_maps(run)
    out = run.out_dir / "levels"
    for side in ("src", "tgt"):
        m = run.side_manifest(side)
        dfea = out / f"{side}.dfea"
        index_path = _levels_index_path(run, side)
        key = _stage_key("levels", {
            "manifest": run.manifest_digest(side),
            "maps": _file_sha(run.out_dir / "maps" / "stage.key"),
            "side_px": run.params.side,
            "extractor": run.params.extractor or "builtin",
            "seed": run.params.seed,
            "scales": list(run.params.scales),
            "n_patches": run.params.n_patches,
        })
        key_file = out / f"{side}.key"
        if _cached(run, key_file, key, [dfea, index_path]):
            log.info("levels[%s]: cached", side)
            continue
        log.info("levels[%s]: descriptors for %d images", side, len(m.entries))
        tasks = [
            (i, str(m.image_path(e)), str(map_path(run, e.path)))
            for i, e in enumerate(m.entries)
        ]
        results = _run_tasks(run.jobs, _levels_init,
                             (run.params.extractor, run.params.side, run.params.seed,
                              run.params.scales, run.params.n_patches),
                             _levels_task, tasks)
        per_image: list[dict | None] = [None] * len(m.entries)
        for i, desc in results:
            per_image[i] = desc
        rows = []
        index = {"dim": None, "entries": []}
        for e, desc in zip(m.entries, per_image):
            row_ids = {}
            for lv in LEVELS:
                row_ids[lv] = len(rows)
                rows.append(desc[lv])
            index["entries"].append({"path": e.path, "rows": row_ids})
        index["dim"] = int(rows[0].shape[0]) if rows else 0
        formats.save_features(np.stack(rows), dfea)
        index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
        _commit(key_file, key)


def load_level_features(run: Run, side: str) -> dict[str, np.ndarray]:
    rows = formats.load_features(run.out_dir / "levels" / f"{side}.dfea")
    index = json.loads(_levels_index_path(run, side).read_text())
    out = {}
    for lv in LEVELS:
        ids = [rec["rows"][lv] for rec in index["entries"]]
        out[lv] = rows[ids]
    return out


def _labels(m: DatasetManifest, what: str) -> list[str]:
    missing = [e.path for e in m.entries if e.class_label is None]
    if missing:
        raise DataError(f"{what} entries lack class labels (e.g. {missing[0]!r})")
    return [e.class_label for e in m.entries]


# ----------------------------------------------------- object classifiers

def stage_train_object(run: Run) -> None:
    """Global whole-image classifier and the three per-source-level classifiers."""
    stage_levels(run)
    out = run.out_dir / "models"
    outputs = [out / "global.lmod"] + [out / f"level_{lv}.lmod" for lv in LEVELS]
    key = _stage_key("train-object", {
        "features": _file_sha(run.out_dir / "features" / "src.dfea"),
        "levels": _file_sha(run.out_dir / "levels" / "src.dfea"),
        "labels": _labels(run.src, "source"),
        "train": vars(run.params.train_config()),
    })
    key_file = out / "object.key"
    if _cached(run, key_file, key, outputs):
        log.info("train-object: cached")
        return
    labels = _labels(run.src, "source")
    cfg = run.params.train_config()
    save_multiclass(train_multiclass(_load_side_features(run, "src"), labels, cfg), out / "global.lmod")
    src_levels = load_level_features(run, "src")
    for lv in LEVELS:
        save_multiclass(train_multiclass(src_levels[lv], labels, cfg), out / f"level_{lv}.lmod")
    _commit(key_file, key)
    log.info("train-object: trained global + %d level classifiers", len(LEVELS))


def stage_adapt(run: Run) -> None:
    """Fit the 9 alignment transforms and train the adapted pair classifiers."""
    stage_train_object(run)
    out = run.out_dir
    outputs = []
    for si, tj in PAIR_ORDER:
        outputs.append(out / "transforms" / f"{si}_{tj}.atfm")
        outputs.append(out / "models" / f"adapted_{si}_{tj}.lmod")
    key = _stage_key("adapt", {
        "src_levels": _file_sha(out / "levels" / "src.dfea"),
        "tgt_levels": _file_sha(out / "levels" / "tgt.dfea"),
        "labels": _labels(run.src, "source"),
        "eps": run.params.eps,
        "train": vars(run.params.train_config()),
    })
    key_file = out / "transforms" / "stage.key"
    if _cached(run, key_file, key, outputs):
        log.info("adapt: cached")
        return
    labels = _labels(run.src, "source")
    cfg = run.params.train_config()
    src_levels = load_level_features(run, "src")
    tgt_levels = load_level_features(run, "tgt")
    for si, tj in PAIR_ORDER:
        transform = adaptation.fit_second_order(src_levels[si], tgt_levels[tj], eps=run.params.eps)
        adaptation.save(transform, out / "transforms" / f"{si}_{tj}.atfm")
        moved = adaptation.apply_transform(transform, src_levels[si])
        save_multiclass(train_multiclass(moved, labels, cfg), out / "models" / f"adapted_{si}_{tj}.lmod")
        log.info("adapt: fitted pair %s-%s", si, tj)
    _commit(key_file, key)


# --------------------------------------------------------------- evaluate

def _levels_in_memory(run: Run, side: str, seed: int) -> dict[str, np.ndarray]:
    """Level features for an alternate seed, computed without touching caches."""
    m = run.side_manifest(side)
    tasks = [
        (i, str(m.image_path(e)), str(map_path(run, e.path)))
        for i, e in enumerate(m.entries)
    ]
    results = _run_tasks(run.jobs, _levels_init,
                         (run.params.extractor, run.params.side, seed,
                          run.params.scales, run.params.n_patches),
                         _levels_task, tasks)
    per_image = [None] * len(m.entries)
    for i, desc in results:
        per_image[i] = desc
    return {lv: np.stack([d[lv] for d in per_image]) for lv in LEVELS}


def _repeat_rows(run: Run, global_model, src_global, tgt_global,
                 src_labels, tgt_labels, with_adapt: bool, seed: int) -> list[dict]:
    """Row accuracies for one alternate level-sampling seed (in memory)."""
    cfg = run.params.train_config()
    src_set = LevelSet(features=_levels_in_memory(run, "src", seed), labels=src_labels)
    tgt_set = LevelSet(features=_levels_in_memory(run, "tgt", seed), labels=tgt_labels)
    unadapted = evaluate_pairs(src_set, tgt_set, cfg, adapt="none")
    adapted = (evaluate_pairs(src_set, tgt_set, cfg, adapt="second-order",
                              eps=run.params.eps) if with_adapt else None)
    result = evaluate_fused(global_model, src_global, tgt_global, tgt_labels,
                            unadapted, adapted,
                            ft_accuracy=_ft_accuracy(run, tgt_labels))
    return result["rows"]


def _pair_eval_from_disk(run: Run, tgt_levels: dict[str, np.ndarray],
                         tgt_labels: list[str], adapted: bool) -> PairEvaluation:
    models_dir = run.out_dir / "models"
    classes = None
    accuracy = {}
    margins = {}
    for si, tj in PAIR_ORDER:
        name = f"adapted_{si}_{tj}.lmod" if adapted else f"level_{si}.lmod"
        model = load_multiclass(models_dir / name)
        classes = model.classes
        mmat = margin_matrix(model, tgt_levels[tj])
        margins[(si, tj)] = mmat
        pred = np.argmax(mmat, axis=1)
        truth = np.array([model.classes.index(t) if t in model.classes else -1 for t in tgt_labels])
        accuracy[(si, tj)] = float(np.mean(pred == truth))
    return PairEvaluation(classes=classes, accuracy=accuracy, margins=margins)


def _ft_accuracy(run: Run, tgt_labels: list[str]) -> float | None:
    if not (run.params.ft_src and run.params.ft_tgt):
        return None
    ft_src = formats.load_features(Path(run.params.ft_src))
    ft_tgt = formats.load_features(Path(run.params.ft_tgt))
    labels = _labels(run.src, "source")
    if ft_src.shape[0] != len(labels) or ft_tgt.shape[0] != len(tgt_labels):
        raise DataError("ft feature row counts do not match the manifests")
    model = train_multiclass(ft_src, labels, run.params.train_config())
    mmat = margin_matrix(model, ft_tgt)
    pred = np.argmax(mmat, axis=1)
    truth = np.array([model.classes.index(t) if t in model.classes else -1 for t in tgt_labels])
    return float(np.mean(pred == truth))


def stage_evaluate(run: Run, with_adapt: bool = True) -> dict:
    """Accuracy report (13 rows) and per-image prediction CSV."""
    if with_adapt:
        stage_adapt(run)
    else:
        stage_train_object(run)
    out = run.out_dir
    report_path = out / "report.json"
    csv_path = out / "predictions.csv"
    key = _stage_key("evaluate", {
        "object_models": _file_sha(out / "models" / "object.key"),
        "adapt": _file_sha(out / "transforms" / "stage.key") if with_adapt else None,
        "tgt_levels": _file_sha(out / "levels" / "tgt.dfea"),
        "tgt_features": _file_sha(out / "features" / "tgt.dfea"),
        "labels": _labels(run.tgt, "target"),
        "repeats": run.params.repeats,
        "ft": [run.params.ft_src, run.params.ft_tgt],
    })
    key_file = out / "evaluate.key"
    if _cached(run, key_file, key, [report_path, csv_path]):
        log.info("evaluate: cached")
        return json.loads(report_path.read_text())

    tgt_labels = _labels(run.tgt, "target")
    tgt_levels = load_level_features(run, "tgt")
    global_model = load_multiclass(out / "models" / "global.lmod")
    unadapted = _pair_eval_from_disk(run, tgt_levels, tgt_labels, adapted=False)
    adapted = _pair_eval_from_disk(run, tgt_levels, tgt_labels, adapted=True) if with_adapt else None

    src_global = _load_side_features(run, "src")
    tgt_global = _load_side_features(run, "tgt")
    result = evaluate_fused(
        global_model,
        src_global,
        tgt_global,
        tgt_labels,
        unadapted,
        adapted,
        ft_accuracy=_ft_accuracy(run, tgt_labels),
    )
    fused_scores = result.pop("fused_scores")
    predictions = result.pop("predictions")

    repeats = max(1, run.params.repeats)
    if repeats > 1:
        # seed-repetition standard error over the level-sampling seed
        src_labels = _labels(run.src, "source")
        per_seed = [result["rows"]]
        for r in range(1, repeats):
            log.info("evaluate: repeat %d/%d", r + 1, repeats)
            per_seed.append(_repeat_rows(run, global_model, src_global, tgt_global,
                                         src_labels, tgt_labels, with_adapt,
                                         seed=run.params.seed + r))
        merged = []
        for i, row in enumerate(result["rows"]):
            accs = [rows[i]["accuracy"] for rows in per_seed]
            if any(a is None for a in accs):
                merged.append(row)
                continue
            accs = np.asarray(accs, dtype=np.float64)
            merged.append({
                "name": row["name"],
                "accuracy": float(accs.mean()),
                "stderr": float(accs.std() / np.sqrt(len(accs))),
            })
        result["rows"] = merged

    report = {
        "pair": f"{run.src_domain}->{run.tgt_domain}",
        "source_images": len(run.src.entries),
        "target_images": len(run.tgt.entries),
        "repeats": repeats,
        **result,
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "true_class", "predicted_class"]
                        + [f"score_{c}" for c in report["classes"]])
        for e, pred, scores in zip(run.tgt.entries, predictions, fused_scores):
            writer.writerow([e.path, e.class_label, pred] + [repr(float(s)) for s in scores])
    _commit(key_file, key)
    for row in report["rows"]:
        acc = row["accuracy"]
        log.info("evaluate: %-16s %s", row["name"], f"{acc:.3f}" if acc is not None else "n/a")
    return report


def run_pipeline(run: Run) -> dict:
    """All stages for a manifest pair; analysis included when masks exist."""
    stage_features(run)
    stage_train_domain(run)
    stage_maps(run)
    if any(e.mask for e in run.src.entries + run.tgt.entries):
        stage_analyze(run)
    stage_levels(run)
    stage_train_object(run)
    stage_adapt(run)
    return stage_evaluate(run)


def make_run(out_dir: str | Path, src_manifest: str | Path, tgt_manifest: str | Path,
             params: Params, jobs: int = 1, force: bool = False) -> Run:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return Run(
        out_dir=out_dir,
        src=parse_manifest(src_manifest),
        tgt=parse_manifest(tgt_manifest),
        params=params,
        jobs=jobs,
        force=force,
    )
