"""Scene tiling, DSM normalization and color-coded label decoding."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from drdg.data_model import (
    DepthTile,
    DomainSpec,
    ImageTile,
    LabelTile,
    SampleTriple,
    normalize_image,
)
from drdg.errors import ConfigError, DataError, ShapeMismatchError
from drdg.ingestion.raster import read_raster


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    rgb_path: Path
    dsm_path: Path
    label_path: Optional[Path] = None
    height: int = 0
    width: int = 0

    @classmethod
    def from_files(cls, scene_id, rgb_path, dsm_path, label_path=None) -> "SceneRecord":
        """Build a record, reading the rasters once to check they agree in size."""
        rgb = read_raster(rgb_path)
        dsm = read_raster(dsm_path)
        if dsm.shape[:2] != rgb.shape[:2]:
            raise ShapeMismatchError(f"{scene_id}.dsm", rgb.shape[:2], dsm.shape[:2])
        if label_path is not None:
            lab = read_raster(label_path)
            if lab.shape[:2] != rgb.shape[:2]:
                raise ShapeMismatchError(f"{scene_id}.label", rgb.shape[:2], lab.shape[:2])
        return cls(scene_id, Path(rgb_path), Path(dsm_path),
                   Path(label_path) if label_path is not None else None,
                   int(rgb.shape[0]), int(rgb.shape[1]))


def find_scenes(scene_dir: str | Path) -> List[SceneRecord]:
    """Collect ``<id>_rgb.png`` / ``<id>_dsm.tif`` / optional ``<id>_label.png`` triples."""
    scene_dir = Path(scene_dir)
    if not scene_dir.is_dir():
        raise DataError(f"scene directory not found: {scene_dir}")
    scenes = []
    for rgb in sorted(scene_dir.glob("*_rgb.png")):
        sid = rgb.name[: -len("_rgb.png")]
        dsm = scene_dir / f"{sid}_dsm.tif"
        if not dsm.exists():
            raise DataError(f"scene {sid} has no DSM at {dsm}")
        lab = scene_dir / f"{sid}_label.png"
        scenes.append(SceneRecord.from_files(sid, rgb, dsm, lab if lab.exists() else None))
    if not scenes:
        raise DataError(f"no *_rgb.png scenes in {scene_dir}")
    return scenes


def compute_depth_stats(scenes: Sequence[SceneRecord]) -> Tuple[float, float]:
    if not scenes:
        raise DataError("compute_depth_stats needs at least one scene")
    lo, hi = np.inf, -np.inf
    for sc in scenes:
        dsm = read_raster(sc.dsm_path)
        lo = min(lo, float(dsm.min()))
        hi = max(hi, float(dsm.max()))
    return lo, hi


def normalize_dsm(raw: np.ndarray, stats: Tuple[float, float]) -> DepthTile:
    lo, hi = float(stats[0]), float(stats[1])
    if lo > hi:
        raise ConfigError(f"depth stats min {lo} exceeds max {hi}")
    raw = np.asarray(raw, dtype=np.float64)
    if hi == lo:
        return DepthTile(np.zeros(raw.shape[:2], dtype=np.float32))
    z = np.clip((raw - lo) / (hi - lo), 0.0, 1.0)
    return DepthTile(z.reshape(raw.shape[:2]))


def tile_anchors(dim: int, tile: int, stride: int, edge_anchor: bool = True) -> List[int]:
    """Top-left offsets along one axis; optionally add a final tile flush with the edge."""
    if dim < tile:
        raise DataError(f"scene dimension {dim} smaller than tile {tile}")
    if stride <= 0:
        raise ConfigError("stride must be positive")
    anchors = list(range(0, dim - tile + 1, stride))
    if edge_anchor and anchors[-1] + tile < dim:
        anchors.append(dim - tile)
    return anchors


def labels_from_color(raster: np.ndarray, color_map: Iterable) -> LabelTile:
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ShapeMismatchError("label raster", ("H", "W", 3), raster.shape)
    keys, vals = [], []
    for rgb, idx in color_map:
        r, g, b = (int(v) for v in rgb)
        keys.append((r << 16) | (g << 8) | b)
        vals.append(int(idx))
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate colors in color map")
    keys = np.asarray(keys, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.int64)
    order = np.argsort(keys)
    keys, vals = keys[order], vals[order]
    code = (raster[..., 0].astype(np.int64) << 16) | (raster[..., 1].astype(np.int64) << 8) | raster[..., 2]
    pos = np.clip(np.searchsorted(keys, code), 0, len(keys) - 1)
    hit = keys[pos] == code
    return LabelTile(np.where(hit, vals[pos], 0))


def paint_labels(labels: np.ndarray, color_map: Iterable) -> np.ndarray:
    """Inverse of :func:`labels_from_color` for in-map indices."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    for rgb, idx in color_map:
        lut[int(idx)] = rgb
    return lut[np.asarray(labels)]


def load_scene_arrays(scene: SceneRecord, domain: DomainSpec):
    rgb = read_raster(scene.rgb_path)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"scene {scene.scene_id}: RGB raster must have 3 bands")
    dsm = read_raster(scene.dsm_path).astype(np.float64)
    if dsm.ndim == 3:
        dsm = dsm[..., 0]
    lab = None
    if scene.label_path is not None:
        raw = read_raster(scene.label_path)
        lab = labels_from_color(raw, domain.color_map).data if raw.ndim == 3 else raw.astype(np.int64)
    for name, a in (("dsm", dsm), ("label", lab)):
        if a is not None and a.shape[:2] != rgb.shape[:2]:
            raise ShapeMismatchError(f"{scene.scene_id}.{name}", rgb.shape[:2], a.shape[:2])
    return rgb, dsm, lab


def clip_tiles(
    scene: SceneRecord,
    domain: DomainSpec,
    stride: Optional[int] = None,
    edge_anchor: bool = True,
    keep_label: bool = True,
) -> List[SampleTriple]:
    """Cut a scene into domain-sized tiles covering every pixel."""
    rgb, dsm, lab = load_scene_arrays(scene, domain)
    th, tw = domain.tile_hw
    h, w = rgb.shape[:2]
    rows = tile_anchors(h, th, stride or th, edge_anchor)
    cols = tile_anchors(w, tw, stride or tw, edge_anchor)
    out = []
    for r in rows:
        for c in cols:
            win = (slice(r, r + th), slice(c, c + tw))
            label = LabelTile(lab[win]) if (lab is not None and keep_label) else None
            out.append(
                SampleTriple(
                    image=normalize_image(rgb[win]),
                    domain=domain,
                    tile_id=f"{scene.scene_id}_r{r:05d}_c{c:05d}",
                    label=label,
                    depth=normalize_dsm(dsm[win], domain.depth_stats),
                    scene_id=scene.scene_id,
                    offset=(r, c),
                    scene_hw=(h, w),
                )
            )
    return out
