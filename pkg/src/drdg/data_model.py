"""Core value types shared by every stage of the pipeline.

Arrays are stored channel-last (H x W x k) as numpy arrays and are made
read-only on construction so tiles can be shared freely between readers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from drdg.errors import ConfigError, RangeError, ShapeMismatchError

CLASS_NAMES = (
    "clutter",
    "impervious",
    "car",
    "tree",
    "low_vegetation",
    "building",
)

# ISPRS 2D labeling color convention, indexed by class id above.
ISPRS_COLORS = (
    (255, 0, 0),
    (255, 255, 255),
    (255, 255, 0),
    (0, 255, 0),
    (0, 255, 255),
    (0, 0, 255),
)


def default_color_map() -> Tuple[Tuple[Tuple[int, int, int], int], ...]:
    return tuple((rgb, i) for i, rgb in enumerate(ISPRS_COLORS))


@dataclass(frozen=True)
class DomainSpec:
    name: str
    tile_height: int = 512
    tile_width: int = 512
    ground_resolution: float = 9.0
    class_count: int = 6
    depth_stats: Tuple[float, float] = (0.0, 1.0)
    # unannotated domains never carry labels in their training split
    annotated: bool = True
    color_map: Tuple[Tuple[Tuple[int, int, int], int], ...] = field(default_factory=default_color_map)

    def __post_init__(self):
        if self.tile_height <= 0 or self.tile_width <= 0:
            raise ConfigError(f"tile size must be positive, got {self.tile_height}x{self.tile_width}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        lo, hi = self.depth_stats
        if lo > hi:
            raise ConfigError(f"depth_stats min {lo} exceeds max {hi}")
        object.__setattr__(self, "depth_stats", (float(lo), float(hi)))
        object.__setattr__(
            self,
            "color_map",
            tuple((tuple(int(v) for v in rgb), int(idx)) for rgb, idx in self.color_map),
        )

    @property
    def tile_hw(self) -> Tuple[int, int]:
        return (self.tile_height, self.tile_width)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tile_height": self.tile_height,
            "tile_width": self.tile_width,
            "ground_resolution": self.ground_resolution,
            "class_count": self.class_count,
            "depth_stats": list(self.depth_stats),
            "annotated": self.annotated,
            "color_map": [[list(rgb), idx] for rgb, idx in self.color_map],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        d = dict(d)
        if "depth_stats" in d:
            d["depth_stats"] = tuple(d["depth_stats"])
        if "color_map" in d:
            d["color_map"] = tuple((tuple(rgb), idx) for rgb, idx in d["color_map"])
        return cls(**d)


def source_domain(**kw) -> DomainSpec:
    kw = {"name": "source", "tile_height": 896, "tile_width": 896, "ground_resolution": 5.0, **kw}
    return DomainSpec(**kw)


def target_domain(**kw) -> DomainSpec:
    kw = {"name": "target", "tile_height": 512, "tile_width": 512, "ground_resolution": 9.0,
          "annotated": False, **kw}
    return DomainSpec(**kw)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageTile:
    """H x W x 3 float32 image with values in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ShapeMismatchError("image", ("H", "W", 3), a.shape)
        object.__setattr__(self, "data", _frozen(a))

    @property
    def hw(self) -> Tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class DepthTile:
    """H x W x 1 float32 normalized DSM with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim == 2:
            a = a[..., None]
        if a.ndim != 3 or a.shape[2] != 1:
            raise ShapeMismatchError("depth", ("H", "W", 1), a.shape)
        object.__setattr__(self, "data", _frozen(a))

    @property
    def hw(self) -> Tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class LabelTile:
    """H x W integer class map, 0-based."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if not np.issubdtype(a.dtype, np.integer):
            raise ShapeMismatchError("label", ("H", "W", "integer"), a.shape + (str(a.dtype),))
        if a.ndim != 2:
            raise ShapeMismatchError("label", ("H", "W"), a.shape)
        object.__setattr__(self, "data", _frozen(a.astype(np.int64)))

    @property
    def hw(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class SampleTriple:
    image: ImageTile
    domain: DomainSpec
    tile_id: str
    label: Optional[LabelTile] = None
    depth: Optional[DepthTile] = None
    scene_id: Optional[str] = None
    # top-left corner of the tile inside its scene, and the scene size
    offset: Optional[Tuple[int, int]] = None
    scene_hw: Optional[Tuple[int, int]] = None


def _check_range(name: str, a: np.ndarray, lo: float, hi: float) -> None:
    if a.size == 0:
        return
    amin, amax = a.min(), a.max()
    if not (np.isfinite(amin) and np.isfinite(amax)) or amin < lo or amax > hi:
        raise RangeError(name, lo, hi, amin, amax)


def validate_sample(s: SampleTriple, split: str = "train", check_geometry: bool = True) -> None:
    """Raise if any invariant of ``s`` is violated; return silently otherwise."""
    hw = s.image.hw
    if check_geometry and tuple(hw) != s.domain.tile_hw:
        raise ShapeMismatchError("image", s.domain.tile_hw + (3,), s.image.data.shape)
    _check_range("image", s.image.data, -1.0, 1.0)
    if s.depth is not None:
        if s.depth.hw != hw:
            raise ShapeMismatchError("depth", tuple(hw) + (1,), s.depth.data.shape)
        _check_range("depth", s.depth.data, 0.0, 1.0)
    if s.label is not None:
        if s.label.hw != hw:
            raise ShapeMismatchError("label", hw, s.label.data.shape)
        _check_range("label", s.label.data, 0, s.domain.class_count - 1)
        if not s.domain.annotated and split == "train":
            raise ConfigError(f"tile {s.tile_id}: unannotated domain {s.domain.name!r} must not carry labels in train split")
    elif s.domain.annotated and split == "train":
        raise ConfigError(f"tile {s.tile_id}: annotated domain {s.domain.name!r} requires labels")


def normalize_image(raw: np.ndarray, bit_depth: int = 8) -> ImageTile:
    raw = np.asarray(raw)
    if not np.issubdtype(raw.dtype, np.integer):
        raise RangeError("raw image (integer dtype required)", 0, 2**bit_depth - 1, raw.dtype, raw.dtype)
    top = 2**bit_depth - 1
    _check_range("raw image", raw, 0, top)
    return ImageTile(raw.astype(np.float64) * (2.0 / top) - 1.0)


def denormalize_image(tile: ImageTile | np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Inverse of :func:`normalize_image`, rounding to the nearest integer level."""
    x = tile.data if isinstance(tile, ImageTile) else np.asarray(tile)
    top = 2**bit_depth - 1
    q = np.rint((np.clip(x.astype(np.float64), -1.0, 1.0) + 1.0) * (top / 2.0))
    return q.astype(np.uint8 if bit_depth <= 8 else np.uint16)


def geometry_of(shape: Sequence[int]) -> Tuple[int, int]:
    return int(shape[0]), int(shape[1])
