"""Deterministic two-domain synthetic dataset with segmentation masks.

Domain P renders shapes on a near-white horizontal gradient; domain Q varies
by shift mode: "background" swaps the backdrop for mid-gray value noise,
"foreground" hue-rotates and speckles the shapes instead, "both" does both.
Geometry and base colors come from streams shared across domains, so matched
indices depict the same object.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .images import save_image, save_mask
from .manifest import DatasetManifest, ManifestEntry, write_manifest

SHAPES = ("disk", "square", "triangle", "cross", "ring")

# class identity is carried mostly by brightness (stable under hue rotation)
# with hue as a secondary cue; values stay mid-band so every shape keeps a
# visible edge against both the near-white and the mid-gray backdrops
_PALETTE_HSV = {
    "disk": (0.00, 0.50, 0.20),
    "square": (0.60, 0.50, 0.33),
    "triangle": (0.33, 0.50, 0.45),
    "cross": (0.12, 0.50, 0.70),
    "ring": (0.80, 0.50, 0.57),
}

PALETTE = {name: colorsys.hsv_to_rgb(*hsv) for name, hsv in _PALETTE_HSV.items()}

DOMAIN_A = "P"
DOMAIN_B = "Q"

_STREAM_GEOMETRY = 0
_STREAM_BACKGROUND = 1
_STREAM_FG_NOISE = 2


@dataclass
class SynthConfig:
    classes: int = 5
    per_domain: int = 100
    shift: str = "both"  # "background" | "foreground" | "both"
    seed: int = 7
    side: int = 256

    def validate(self) -> None:
        if not 2 <= self.classes <= len(SHAPES):
            raise DataError(f"classes must be in [2, {len(SHAPES)}], got {self.classes}")
        if self.per_domain < 10:
            raise DataError(f"per_domain must be >= 10, got {self.per_domain}")
        if self.shift not in ("background", "foreground", "both"):
            raise DataError(f"unknown shift mode {self.shift!r}")
        if self.side < 64:
            raise DataError(f"side must be >= 64, got {self.side}")


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream, index))))


def _gradient_background(side: int) -> np.ndarray:
    ramp = 0.85 + 0.10 * np.arange(side, dtype=np.float64) / (side - 1)
    return np.repeat(ramp[None, :, None], side, axis=0).repeat(3, axis=2).reshape(side, side, 3)


def _value_noise(side: int, rng: np.random.Generator) -> np.ndarray:
    """Two-octave value noise field scaled to [0.2, 0.6]."""
    field = np.zeros((side, side), dtype=np.float64)
    for wavelength, amplitude in ((96, 1.0), (48, 0.5)):
        n = side // wavelength + 2
        lattice = rng.random((n, n))
        coords = np.arange(side, dtype=np.float64) / wavelength
        i0 = coords.astype(np.int64)
        t = coords - i0
        t = t * t * (3.0 - 2.0 * t)  # smoothstep
        rows0, rows1, rt = i0, i0 + 1, t
        a = lattice[np.ix_(rows0, rows0)]
        b = lattice[np.ix_(rows0, rows1)]
        c = lattice[np.ix_(rows1, rows0)]
        d = lattice[np.ix_(rows1, rows1)]
        wx = rt[None, :]
        wy = rt[:, None]
        octave = (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy
        field += amplitude * octave
    lo, hi = field.min(), field.max()
    if hi > lo:
        field = (field - lo) / (hi - lo)
    return 0.2 + 0.4 * field


def _shape_mask(shape: str, side: int, cx: float, cy: float, size: float) -> np.ndarray:
    ys, xs = np.mgrid[0:side, 0:side]
    x = xs + 0.5 - cx
    y = ys + 0.5 - cy
    half = size / 2.0
    if shape == "disk":
        return x * x + y * y <= half * half
    if shape == "square":
        return (np.abs(x) <= half) & (np.abs(y) <= half)
    if shape == "triangle":
        # isoceles: apex up, base at the bottom
        inside = y <= half
        inside &= y >= -half
        # left/right edges from apex (0, -half) to base corners (+-half, half)
        inside &= x <= half * (y + half) / size
        inside &= x >= -half * (y + half) / size
        return inside
    if shape == "cross":
        bar = size / 3.0
        horiz = (np.abs(y) <= bar / 2.0) & (np.abs(x) <= half)
        vert = (np.abs(x) <= bar / 2.0) & (np.abs(y) <= half)
        return horiz | vert
    if shape == "ring":
        rr = x * x + y * y
        inner = size / 3.0
        return (rr <= half * half) & (rr >= inner * inner)
    raise DataError(f"unknown shape {shape!r}")


def _rotate_hue(rgb: tuple[float, float, float], amount: float) -> tuple[float, float, float]:
    h, s, v = colorsys.rgb_to_hsv(*rgb)
    return colorsys.hsv_to_rgb((h + amount) % 1.0, s, v)


def generate(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Emit images/, masks/ and manifests; returns the combined manifest."""
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    class_names = SHAPES[: cfg.classes]
    noisy_background = cfg.shift in ("background", "both")
    shifted_foreground = cfg.shift in ("foreground", "both")

    entries: list[ManifestEntry] = []
    for domain in (DOMAIN_A, DOMAIN_B):
        for i in range(cfg.per_domain):
            shape = class_names[i % cfg.classes]
            geom = _rng(cfg.seed, _STREAM_GEOMETRY, i)
            cx = geom.uniform(cfg.side / 3.0, 2.0 * cfg.side / 3.0)
            cy = geom.uniform(cfg.side / 3.0, 2.0 * cfg.side / 3.0)
            size = geom.uniform(60.0, 100.0)
            jitter = geom.uniform(-0.05, 0.05, size=3)
            base = np.clip(np.asarray(PALETTE[shape]) + jitter, 0.0, 1.0)

            if domain == DOMAIN_B and noisy_background:
                bg_rng = _rng(cfg.seed, _STREAM_BACKGROUND, i)
                bg = _value_noise(cfg.side, bg_rng)
                img = np.repeat(bg[:, :, None], 3, axis=2)
            else:
                img = _gradient_background(cfg.side)

            color = np.asarray(base, dtype=np.float64)
            if domain == DOMAIN_B and shifted_foreground:
                color = np.asarray(_rotate_hue(tuple(base), 0.3), dtype=np.float64)

            mask = _shape_mask(shape, cfg.side, cx, cy, size)
            img = img.copy()
            img[mask] = color
            if domain == DOMAIN_B and shifted_foreground:
                noise_rng = _rng(cfg.seed, _STREAM_FG_NOISE, i)
                noise = noise_rng.normal(0.0, 0.05, size=(int(mask.sum()), 3))
                img[mask] = np.clip(img[mask] + noise, 0.0, 1.0)

            stem = f"{domain}_{i:04d}"
            save_image(img, out_dir / "images" / f"{stem}.png")
            save_mask(mask.astype(np.uint8), out_dir / "masks" / f"{stem}.png")
            entries.append(
                ManifestEntry(
                    path=f"images/{stem}.png",
                    domain=domain,
                    class_label=shape,
                    mask=f"masks/{stem}.png",
                )
            )

    combined = DatasetManifest(root=out_dir, entries=entries)
    write_manifest(combined, out_dir / "manifest.json")
    for domain in (DOMAIN_A, DOMAIN_B):
        part = DatasetManifest(
            root=out_dir, entries=[e for e in entries if e.domain == domain]
        )
        write_manifest(part, out_dir / f"manifest_{domain}.json")
    return combined
