"""Procedural two-domain aerial scenes with DSMs and labels.

Both domains draw layouts from the same distribution; they differ in color
palette and ground resolution. Layout coordinates are expressed in source
pixels and every domain rasterizes them at its own pixel size, so a source
tile and a target tile of the configured sizes cover the same ground.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from drdg.data_model import CLASS_NAMES, DomainSpec, default_color_map
from drdg.errors import ConfigError
from drdg.ingestion.raster import write_float, write_rgb
from drdg.ingestion.tiling import SceneRecord, compute_depth_stats, paint_labels

CLUTTER, IMPERVIOUS, CAR, TREE, LOW_VEG, BUILDING = range(6)

RGB = Tuple[int, int, int]

# False-color (IR-R-G style) source palette, indexed by class id.
SOURCE_PALETTE: Tuple[RGB, ...] = (
    (140, 110, 100),
    (175, 170, 175),
    (70, 70, 160),
    (190, 50, 70),
    (225, 130, 120),
    (115, 105, 135),
)


def shifted_palette(palette, mix=((0.0, 0.9, 0.0), (0.75, 0.0, 0.0), (0.0, 0.0, 0.8)),
                    offset=(20.0, 0.0, 15.0)) -> Tuple[RGB, ...]:
    """Apply a sensor-like affine color transform to every palette entry."""
    m = np.asarray(mix, dtype=np.float64)
    b = np.asarray(offset, dtype=np.float64)
    out = np.clip(np.rint(np.asarray(palette, dtype=np.float64) @ m.T + b), 0, 255).astype(int)
    return tuple(tuple(int(v) for v in row) for row in out)


TARGET_PALETTE = shifted_palette(SOURCE_PALETTE)


@dataclass(frozen=True)
class SynthConfig:
    scene_size: int = 224
    source_tile: int = 112
    target_tile: int = 64
    source_resolution: float = 5.0
    target_resolution: float = 8.75
    # (min, max) object counts per scene
    buildings: Tuple[int, int] = (2, 4)
    trees: Tuple[int, int] = (4, 9)
    roads: Tuple[int, int] = (1, 2)
    low_vegetation: Tuple[int, int] = (3, 6)
    cars: Tuple[int, int] = (2, 5)
    # object sizes in source pixels
    building_side: Tuple[float, float] = (24.0, 56.0)
    tree_radius: Tuple[float, float] = (6.0, 13.0)
    road_width: Tuple[float, float] = (10.0, 16.0)
    patch_radius: Tuple[float, float] = (14.0, 36.0)
    car_size: Tuple[float, float] = (5.0, 9.0)
    source_palette: Tuple[RGB, ...] = SOURCE_PALETTE
    target_palette: Tuple[RGB, ...] = TARGET_PALETTE
    object_jitter: float = 8.0
    pixel_jitter: float = 5.0
    # heights above ground in raw DSM units, indexed by class id
    heights: Tuple[Tuple[float, float], ...] = (
        (0.0, 0.3),
        (0.0, 0.1),
        (1.2, 1.8),
        (3.0, 10.0),
        (0.1, 0.6),
        (6.0, 18.0),
    )
    ground_elevation: Tuple[float, float] = (20.0, 30.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.source_palette) != len(CLASS_NAMES) or len(self.target_palette) != len(CLASS_NAMES):
            raise ConfigError(f"palettes need {len(CLASS_NAMES)} entries")
        if tuple(map(tuple, self.source_palette)) == tuple(map(tuple, self.target_palette)):
            raise ConfigError("source and target palettes must differ")
        if len(self.heights) != len(CLASS_NAMES):
            raise ConfigError(f"heights need {len(CLASS_NAMES)} ranges")
        for cls_id, (lo, hi) in enumerate(self.heights):
            if lo < 0 or hi < lo:
                raise ConfigError(f"bad height range for class {cls_id}: {(lo, hi)}")
        for cls_id in (BUILDING, TREE):
            if self.heights[cls_id][0] <= 0:
                raise ConfigError(f"{CLASS_NAMES[cls_id]} heights must be strictly above ground")
        if self.scene_size < self.source_tile:
            raise ConfigError("scene_size smaller than source tile")
        if self.source_resolution <= 0 or self.target_resolution <= 0:
            raise ConfigError("resolutions must be positive")
        if self.target_scene_size < self.target_tile:
            raise ConfigError("target scene smaller than target tile")

    @property
    def scale(self) -> float:
        """Target pixel size measured in source pixels."""
        return self.target_resolution / self.source_resolution

    @property
    def target_scene_size(self) -> int:
        return int(round(self.scene_size / self.scale))

    def palette(self, which: str):
        return self.source_palette if which == "source" else self.target_palette


@dataclass
class _Layout:
    ground: float
    roads: List[tuple] = field(default_factory=list)
    patches: List[tuple] = field(default_factory=list)
    buildings: List[tuple] = field(default_factory=list)
    trees: List[tuple] = field(default_factory=list)
    cars: List[tuple] = field(default_factory=list)


def _sample_layout(cfg: SynthConfig, rng: np.random.Generator) -> _Layout:
    size = float(cfg.scene_size)
    u = rng.uniform
    n = lambda r: int(rng.integers(r[0], r[1] + 1))  # noqa: E731
    hr = cfg.heights
    lay = _Layout(ground=u(*cfg.ground_elevation))
    for _ in range(n(cfg.low_vegetation)):
        lay.patches.append((u(0, size), u(0, size), u(*cfg.patch_radius), u(*cfg.patch_radius),
                            u(0, np.pi), u(*hr[LOW_VEG])))
    for _ in range(n(cfg.roads)):
        theta = rng.choice([0.0, np.pi / 2]) + rng.normal(0, 0.15)
        lay.roads.append((u(0.2 * size, 0.8 * size), u(0.2 * size, 0.8 * size), theta,
                          u(*cfg.road_width), u(*hr[IMPERVIOUS])))
    for _ in range(n(cfg.buildings)):
        lay.buildings.append((u(0, size), u(0, size), u(*cfg.building_side), u(*cfg.building_side),
                              u(0, np.pi / 2), u(*hr[BUILDING])))
    for _ in range(n(cfg.trees)):
        lay.trees.append((u(0, size), u(0, size), u(*cfg.tree_radius), u(*hr[TREE])))
    if lay.roads:
        for _ in range(n(cfg.cars)):
            cy, cx, theta, width, _h = lay.roads[int(rng.integers(len(lay.roads)))]
            t = u(-0.5 * size, 0.5 * size)
            side = rng.choice([-0.25, 0.25]) * width
            py = cy + t * np.sin(theta) + side * np.cos(theta)
            px = cx + t * np.cos(theta) - side * np.sin(theta)
            lay.cars.append((py, px, cfg.car_size[1], cfg.car_size[0] * u(0.9, 1.1), theta, u(*hr[CAR])))
    return lay


def _local(yy, xx, cy, cx, theta):
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    return along, across


def render_scene(cfg: SynthConfig, which: str, index: int):
    """Rasterize one scene; returns ``(rgb uint8, dsm float32, labels int64)``."""
    if which not in ("source", "target"):
        raise ConfigError(f"domain must be 'source' or 'target', got {which!r}")
    code = 0 if which == "source" else 1
    layout_rng = np.random.default_rng([cfg.seed, code, index, 0])
    paint_rng = np.random.default_rng([cfg.seed, code, index, 1])
    lay = _sample_layout(cfg, layout_rng)

    step = 1.0 if which == "source" else cfg.scale
    npx = cfg.scene_size if which == "source" else cfg.target_scene_size
    centers = (np.arange(npx) + 0.5) * step
    yy, xx = np.meshgrid(centers, centers, indexing="ij")

    label = np.full((npx, npx), CLUTTER, dtype=np.int64)
    height = np.full((npx, npx), paint_rng.uniform(*cfg.heights[CLUTTER]))
    obj = np.zeros((npx, npx), dtype=np.int64)
    oid = 0

    def put(mask, cls_id, h):
        nonlocal oid
        oid += 1
        label[mask] = cls_id
        height[mask] = h[mask] if isinstance(h, np.ndarray) else h
        obj[mask] = oid

    for cy, cx, ry, rx, th, h in lay.patches:
        a, b = _local(yy, xx, cy, cx, th)
        put((a / rx) ** 2 + (b / ry) ** 2 <= 1.0, LOW_VEG, h)
    for cy, cx, th, width, h in lay.roads:
        _, across = _local(yy, xx, cy, cx, th)
        put(np.abs(across) <= width / 2, IMPERVIOUS, h)
    for cy, cx, sy, sx, th, h in lay.buildings:
        a, b = _local(yy, xx, cy, cx, th)
        put((np.abs(a) <= sx / 2) & (np.abs(b) <= sy / 2), BUILDING, h)
    for cy, cx, r, h in lay.trees:
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / r**2
        dome = h * (0.5 + 0.5 * np.sqrt(np.clip(1.0 - d2, 0.0, 1.0)))
        put(d2 <= 1.0, TREE, dome)
    for cy, cx, length, width, th, h in lay.cars:
        a, b = _local(yy, xx, cy, cx, th)
        put((np.abs(a) <= length / 2) & (np.abs(b) <= width / 2), CAR, h)

    palette = np.asarray(cfg.palette(which), dtype=np.float64)
    obj_shift = paint_rng.normal(0.0, cfg.object_jitter, size=(oid + 1, 3))
    rgb = palette[label] + obj_shift[obj]
    noise = paint_rng.normal(0.0, cfg.pixel_jitter, size=rgb.shape)
    noise[label == TREE] *= 2.5
    rgb = np.clip(np.rint(rgb + noise), 0, 255).astype(np.uint8)
    dsm = (lay.ground + height).astype(np.float32)
    return rgb, dsm, label


def generate_synthetic_domain(cfg: SynthConfig, n_scenes: int, which: str, out_dir: str | Path):
    """Render ``n_scenes`` scenes of one domain to ``out_dir``; return records and domain."""
    if n_scenes < 1:
        raise ConfigError("n_scenes must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cmap = default_color_map()
    scenes = []
    for i in range(n_scenes):
        rgb, dsm, label = render_scene(cfg, which, i)
        sid = f"{which}{i:03d}"
        paths = (out_dir / f"{sid}_rgb.png", out_dir / f"{sid}_dsm.tif", out_dir / f"{sid}_label.png")
        write_rgb(paths[0], rgb)
        write_float(paths[1], dsm)
        write_rgb(paths[2], paint_labels(label, cmap))
        scenes.append(SceneRecord(sid, *paths, height=rgb.shape[0], width=rgb.shape[1]))
    tile = cfg.source_tile if which == "source" else cfg.target_tile
    res = cfg.source_resolution if which == "source" else cfg.target_resolution
    domain = DomainSpec(
        name=which,
        tile_height=tile,
        tile_width=tile,
        ground_resolution=res,
        class_count=len(CLASS_NAMES),
        depth_stats=compute_depth_stats(scenes),
        annotated=(which == "source"),
        color_map=cmap,
    )
    return scenes, domain
