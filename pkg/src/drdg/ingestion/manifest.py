"""Dataset manifests: a JSON document with a domain block and one record per tile.

Paths inside the file are relative to the manifest's directory so a dataset
directory can be moved or used as a test fixture as-is.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from drdg.data_model import (
    DepthTile,
    DomainSpec,
    LabelTile,
    SampleTriple,
    denormalize_image,
    normalize_image,
)
from drdg.errors import ConfigError, DataError, MissingFileError, SchemaError
from drdg.ingestion.raster import read_raster, write_band8, write_float, write_rgb

MANIFEST_SCHEMA = "drdg-manifest/1"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SampleRef:
    tile_id: str
    image: Path
    label: Optional[Path] = None
    depth: Optional[Path] = None
    scene_id: Optional[str] = None
    offset: Optional[Tuple[int, int]] = None
    scene_hw: Optional[Tuple[int, int]] = None
    extra: Dict[str, str] = field(default_factory=dict)

    def load(self, domain: DomainSpec, with_label: bool = True) -> SampleTriple:
        rgb = read_raster(self.image)
        label = LabelTile(read_raster(self.label)) if (self.label is not None and with_label) else None
        depth = DepthTile(read_raster(self.depth)) if self.depth is not None else None
        return SampleTriple(
            image=normalize_image(rgb),
            domain=domain,
            tile_id=self.tile_id,
            label=label,
            depth=depth,
            scene_id=self.scene_id,
            offset=self.offset,
            scene_hw=self.scene_hw,
        )


@dataclass
class DatasetManifest:
    domain: DomainSpec
    split: str
    samples: List[SampleRef]
    seed: int = 0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")

    def __len__(self):
        return len(self.samples)

    def load(self, with_label: bool = True) -> List[SampleTriple]:
        return [s.load(self.domain, with_label) for s in self.samples]

    @property
    def has_labels(self) -> bool:
        return bool(self.samples) and all(s.label is not None for s in self.samples)

    @property
    def has_depth(self) -> bool:
        return bool(self.samples) and all(s.depth is not None for s in self.samples)


def _rel(p: Optional[Path], root: Path) -> Optional[str]:
    if p is None:
        return None
    return Path(os.path.relpath(Path(p).resolve(), root.resolve())).as_posix()


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent
    records = []
    for s in manifest.samples:
        rec = {
            "tile_id": s.tile_id,
            "image": _rel(s.image, root),
            "label": _rel(s.label, root),
            "depth": _rel(s.depth, root),
            "split": manifest.split,
        }
        if s.scene_id is not None:
            rec["scene_id"] = s.scene_id
        if s.offset is not None:
            rec["offset"] = list(s.offset)
        if s.scene_hw is not None:
            rec["scene_hw"] = list(s.scene_hw)
        if s.extra:
            rec["extra"] = {k: _rel(Path(v), root) for k, v in s.extra.items()}
        records.append(rec)
    doc = {
        "schema": MANIFEST_SCHEMA,
        "domain": manifest.domain.to_dict(),
        "split": manifest.split,
        "seed": manifest.seed,
        "samples": records,
    }
    path.write_text(json.dumps(doc, indent=1))
    return path


def read_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
        raise SchemaError(f"manifest {path}: expected schema {MANIFEST_SCHEMA!r}")
    for key in ("domain", "split", "samples"):
        if key not in doc:
            raise SchemaError(f"manifest {path}: missing {key!r}")
    root = path.parent
    try:
        domain = DomainSpec.from_dict(doc["domain"])
    except (TypeError, ConfigError) as e:
        raise SchemaError(f"manifest {path}: bad domain block: {e}") from e

    def resolve(p):
        if p is None:
            return None
        full = root / p
        if check_files and not full.exists():
            raise MissingFileError(f"manifest {path} references missing file {full}")
        return full

    samples = []
    for rec in doc["samples"]:
        try:
            samples.append(
                SampleRef(
                    tile_id=rec["tile_id"],
                    image=resolve(rec["image"]),
                    label=resolve(rec.get("label")),
                    depth=resolve(rec.get("depth")),
                    scene_id=rec.get("scene_id"),
                    offset=tuple(rec["offset"]) if "offset" in rec else None,
                    scene_hw=tuple(rec["scene_hw"]) if "scene_hw" in rec else None,
                    extra={k: resolve(v) for k, v in rec.get("extra", {}).items()},
                )
            )
        except KeyError as e:
            raise SchemaError(f"manifest {path}: sample record missing {e}") from e
    return DatasetManifest(domain, doc["split"], samples, int(doc.get("seed", 0)))


def save_samples(
    samples: Sequence[SampleTriple],
    out_dir: str | Path,
    split: str,
    domain: DomainSpec,
    seed: int = 0,
    manifest_name: Optional[str] = None,
) -> Tuple[DatasetManifest, Path]:
    """Write tiles as lossless rasters under ``out_dir/tiles`` plus a manifest."""
    out_dir = Path(out_dir)
    tiles = out_dir / "tiles"
    tiles.mkdir(parents=True, exist_ok=True)
    refs = []
    for s in samples:
        img = tiles / f"{s.tile_id}_rgb.png"
        write_rgb(img, denormalize_image(s.image))
        lab = dep = None
        if s.label is not None:
            lab = tiles / f"{s.tile_id}_label.png"
            write_band8(lab, s.label.data)
        if s.depth is not None:
            dep = tiles / f"{s.tile_id}_dsm.tif"
            write_float(dep, s.depth.data)
        refs.append(SampleRef(s.tile_id, img, lab, dep, s.scene_id, s.offset, s.scene_hw))
    manifest = DatasetManifest(domain, split, refs, seed)
    path = write_manifest(manifest, out_dir / (manifest_name or f"{split}.json"))
    return manifest, path


def stack_images(samples: Sequence[SampleTriple]) -> np.ndarray:
    return np.stack([s.image.data for s in samples])
