"""Dataset construction: tiling, DSM normalization, synthetic scenes, manifests."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from drdg.config import dump_config, from_dict
from drdg.data_model import DomainSpec, validate_sample
from drdg.errors import ConfigError
from drdg.ingestion.manifest import (
    DatasetManifest,
    SampleRef,
    read_manifest,
    save_samples,
    write_manifest,
)
from drdg.ingestion.synthetic import SynthConfig, generate_synthetic_domain, render_scene
from drdg.ingestion.tiling import (
    SceneRecord,
    clip_tiles,
    compute_depth_stats,
    find_scenes,
    labels_from_color,
    normalize_dsm,
    tile_anchors,
)

__all__ = [
    "DatasetManifest",
    "IngestConfig",
    "SampleRef",
    "SceneRecord",
    "SynthConfig",
    "clip_tiles",
    "compute_depth_stats",
    "find_scenes",
    "generate_synthetic_domain",
    "build_synthetic_dataset",
    "ingest_scenes",
    "labels_from_color",
    "normalize_dsm",
    "read_manifest",
    "render_scene",
    "save_samples",
    "tile_anchors",
    "write_manifest",
]


@dataclass
class DomainBlock:
    name: str
    tile_height: int
    tile_width: int
    ground_resolution: float
    class_count: int = 6
    annotated: bool = True
    # None means: compute from the scenes being ingested
    depth_stats: Optional[Tuple[float, float]] = None
    color_map: Optional[List[Tuple[Tuple[int, int, int], int]]] = None


@dataclass
class IngestConfig:
    domain: DomainBlock
    stride: Optional[int] = None
    edge_anchor: bool = True
    # regular grid only for training tiles when False
    train_edge_anchor: bool = True
    splits: Dict[str, List[str]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.splits) - {"val", "test"}
        if unknown:
            raise ConfigError(f"splits may only name 'val' and 'test', got {sorted(unknown)}")
        val, test = set(self.splits.get("val", [])), set(self.splits.get("test", []))
        if val & test:
            raise ConfigError(f"scenes assigned to both val and test: {sorted(val & test)}")


def ingest_scenes(scene_dir: str | Path, cfg: IngestConfig, out_dir: str | Path) -> Dict[str, Path]:
    """Tile every scene in ``scene_dir`` and write one manifest per non-empty split."""
    scenes = find_scenes(scene_dir)
    blk = cfg.domain
    stats = blk.depth_stats if blk.depth_stats is not None else compute_depth_stats(scenes)
    kw = {}
    if blk.color_map is not None:
        kw["color_map"] = tuple((tuple(rgb), idx) for rgb, idx in blk.color_map)
    domain = DomainSpec(blk.name, blk.tile_height, blk.tile_width, blk.ground_resolution,
                        blk.class_count, tuple(stats), blk.annotated, **kw)
    split_of = {sid: sp for sp in ("val", "test") for sid in cfg.splits.get(sp, [])}
    missing = set(split_of) - {s.scene_id for s in scenes}
    if missing:
        raise ConfigError(f"split lists name unknown scenes: {sorted(missing)}")
    by_split: Dict[str, list] = {"train": [], "val": [], "test": []}
    for sc in scenes:
        split = split_of.get(sc.scene_id, "train")
        edge = cfg.edge_anchor if split != "train" else (cfg.edge_anchor and cfg.train_edge_anchor)
        # unannotated domains keep labels only for evaluation splits
        keep = domain.annotated or split != "train"
        for s in clip_tiles(sc, domain, cfg.stride, edge, keep_label=keep):
            validate_sample(s, split)
            by_split[split].append(s)
    out = {}
    for split, samples in by_split.items():
        if samples:
            _, path = save_samples(samples, Path(out_dir), split, domain, cfg.seed)
            out[split] = path
    return out


def synthetic_ingest_config(domain: DomainSpec, test_ids=(), stride: Optional[int] = None) -> IngestConfig:
    return from_dict(IngestConfig, {
        "domain": {
            "name": domain.name,
            "tile_height": domain.tile_height,
            "tile_width": domain.tile_width,
            "ground_resolution": domain.ground_resolution,
            "class_count": domain.class_count,
            "annotated": domain.annotated,
            "depth_stats": list(domain.depth_stats),
            "color_map": [[list(rgb), idx] for rgb, idx in domain.color_map],
        },
        "stride": stride,
        "splits": {"test": list(test_ids)} if test_ids else {},
    })


def build_synthetic_dataset(out_dir: str | Path, n_source: int, n_target: int, n_test: int,
                            cfg: Optional[SynthConfig] = None, ingest: bool = True) -> Dict[str, Dict[str, Path]]:
    """Render both domains under ``out_dir/{source,target}`` and optionally tile them.

    The last ``n_test`` target scenes become the labelled test split; the rest
    are unlabelled training scenes. Returns manifest paths per domain and split.
    """
    cfg = cfg or SynthConfig()
    if not 0 <= n_test < n_target:
        raise ConfigError("n_test must leave at least one target training scene")
    out_dir = Path(out_dir)
    result: Dict[str, Dict[str, Path]] = {}
    for which, n in (("source", n_source), ("target", n_target)):
        scenes, domain = generate_synthetic_domain(cfg, n, which, out_dir / which / "scenes")
        held_out = [s.scene_id for s in scenes[n - n_test:]] if which == "target" and n_test else []
        icfg = synthetic_ingest_config(domain, held_out)
        dump_config(icfg, out_dir / which / "domain.yaml")
        result[which] = ingest_scenes(out_dir / which / "scenes", icfg, out_dir / which / "data") if ingest else {}
    return result
