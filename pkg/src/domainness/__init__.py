"""Localize visual domain shift inside images.

Train a domain discriminator, derive per-image domainness maps by dense
occlusion, stratify patches into low/mid/high-domainness descriptors, and
combine per-level and whole-image classifiers (optionally after second-order
feature alignment) into a final prediction.
"""

from .adaptation import AlignmentTransform, apply_transform, fit_second_order, identity_transform
from .analysis import aggregate_stats, fg_bg_stats
from .classifier import (
    LinearModel,
    MulticlassModel,
    TrainConfig,
    domain_weighting,
    margin,
    margins,
    train_binary,
    train_multiclass,
)
from .errors import DataError, DomainnessError, ProtocolError
from .extractor import BuiltinExtractor, SubprocessExtractor, builtin_extract, extract, get_extractor
from .fusion import LevelSet, MarginMatrix, evaluate_fused, evaluate_pairs, fuse
from .images import load_image, load_mask, resize_canonical, save_image
from .levels import build_level_descriptors, patch_domainness, pooled_level, sample_patches, tercile_split
from .manifest import DatasetManifest, ManifestEntry, parse_manifest, write_manifest
from .occlusion import MapConfig, build_map, discrepancy, make_grid, occlude
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"
