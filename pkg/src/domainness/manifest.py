"""Dataset manifest: declarative listing of images, domains, classes, masks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

_ENTRY_KEYS = {"path", "domain", "class", "mask"}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    domain: str
    class_label: str | None = None
    mask: str | None = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def domains(self) -> list[str]:
        """Distinct domain labels in first-appearance order."""
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.domain, None)
        return list(seen)

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def mask_path(self, entry: ManifestEntry) -> Path | None:
        return self.root / entry.mask if entry.mask else None


def parse_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest JSON file.

    Entries keep file order; duplicate image paths and unknown fields are
    rejected. The root directory is resolved relative to the manifest file.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"manifest {path}: top level must be an object")
    extra = set(doc) - {"root", "entries"}
    if extra:
        raise DataError(f"manifest {path}: unknown top-level fields {sorted(extra)}")
    if "root" not in doc or "entries" not in doc:
        raise DataError(f"manifest {path}: 'root' and 'entries' are required")
    if not isinstance(doc["root"], str) or not isinstance(doc["entries"], list):
        raise DataError(f"manifest {path}: 'root' must be a string, 'entries' a list")

    root = Path(doc["root"])
    if not root.is_absolute():
        root = path.parent / root

    entries: list[ManifestEntry] = []
    seen_paths: set[str] = set()
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict):
            raise DataError(f"manifest {path}: entry {i} is not an object")
        extra = set(raw) - _ENTRY_KEYS
        if extra:
            raise DataError(f"manifest {path}: entry {i} has unknown fields {sorted(extra)}")
        if "path" not in raw or "domain" not in raw:
            raise DataError(f"manifest {path}: entry {i} needs 'path' and 'domain'")
        img = raw["path"]
        if img in seen_paths:
            raise DataError(f"manifest {path}: duplicate image path {img!r}")
        seen_paths.add(img)
        entries.append(
            ManifestEntry(
                path=img,
                domain=raw["domain"],
                class_label=raw.get("class"),
                mask=raw.get("mask"),
            )
        )
    return DatasetManifest(root=root, entries=entries)


def write_manifest(manifest: DatasetManifest, path: str | Path, root_value: str | None = None) -> None:
    """Write a manifest JSON file (root stored as given, default '.')."""
    doc = {
        "root": root_value if root_value is not None else ".",
        "entries": [
            {
                "path": e.path,
                "domain": e.domain,
                **({"class": e.class_label} if e.class_label is not None else {}),
                **({"mask": e.mask} if e.mask is not None else {}),
            }
            for e in manifest.entries
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def single_domain(manifest: DatasetManifest, role: str) -> str:
    """Return the manifest's unique domain label or raise."""
    doms = manifest.domains()
    if len(doms) != 1:
        raise DataError(f"{role} manifest must contain exactly one domain, found {doms}")
    return doms[0]
