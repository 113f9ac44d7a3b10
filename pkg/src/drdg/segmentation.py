"""Stage 2: segmentation training on (translated) annotated tiles, and inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from drdg.config import from_dict, to_dict
from drdg.data_model import ImageTile, LabelTile
from drdg.errors import ConfigError, DataError, DivergenceError, ShapeMismatchError
from drdg.ingestion.manifest import DatasetManifest
from drdg.ingestion.raster import write_band8
from drdg.losses import is_finite, seg_cross_entropy
from drdg.networks import (
    SEGMENTATION_BACKBONES,
    build_segmenter,
    image_to_tensor,
    load_checkpoint,
    resize_nearest_labels,
    resize_tensor,
    save_checkpoint,
)

log = logging.getLogger(__name__)

SEG_SCHEMA = "drdg-seg-ckpt/1"


@dataclass
class SegTrainConfig:
    backbone: str = "compact"
    width: int = 16
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    flip: bool = True
    rotate: bool = False

    def __post_init__(self):
        if self.backbone not in SEGMENTATION_BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")


@dataclass
class SegModel:
    net: nn.Module
    backbone: str
    num_classes: int
    hw: Tuple[int, int]
    config: SegTrainConfig
    losses: List[float] = field(default_factory=list)

    def scores(self, images: torch.Tensor, batch_size: int = 16) -> torch.Tensor:
        if tuple(images.shape[-2:]) != tuple(self.hw):
            raise ShapeMismatchError("segmentation input", self.hw, tuple(images.shape[-2:]))
        self.net.eval()
        with torch.no_grad():
            return torch.cat([self.net(images[i: i + batch_size]) for i in range(0, images.shape[0], batch_size)])

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, {
            "state": self.net.state_dict(),
            "backbone": self.backbone,
            "num_classes": self.num_classes,
            "hw": list(self.hw),
            "config": to_dict(self.config),
            "losses": list(self.losses),
        }, SEG_SCHEMA)

    @classmethod
    def load(cls, path: str | Path) -> "SegModel":
        st = load_checkpoint(path, SEG_SCHEMA)
        cfg = from_dict(SegTrainConfig, st["config"])
        net = build_segmenter(st["backbone"], st["num_classes"], cfg.width, cfg.seed)
        net.load_state_dict(st["state"])
        return cls(net, st["backbone"], st["num_classes"], tuple(st["hw"]), cfg, list(st["losses"]))


def _augment(x: torch.Tensor, y: torch.Tensor, rng: np.random.Generator, cfg: SegTrainConfig):
    xs, ys = [], []
    for i in range(x.shape[0]):
        xi, yi = x[i], y[i]
        if cfg.flip:
            if rng.random() < 0.5:
                xi, yi = xi.flip(-1), yi.flip(-1)
            if rng.random() < 0.5:
                xi, yi = xi.flip(-2), yi.flip(-2)
        if cfg.rotate and xi.shape[-1] == xi.shape[-2]:
            k = int(rng.integers(4))
            xi, yi = torch.rot90(xi, k, (-2, -1)), torch.rot90(yi, k, (-2, -1))
        xs.append(xi)
        ys.append(yi)
    return torch.stack(xs), torch.stack(ys)


def fit_segmenter(cfg: SegTrainConfig, images: torch.Tensor, labels: torch.Tensor, num_classes: int) -> SegModel:
    """Minimize pixel-averaged cross-entropy over ``images``/``labels`` (N x 3 x H x W, N x H x W)."""
    if images.shape[0] == 0:
        raise DataError("no training samples")
    net = build_segmenter(cfg.backbone, num_classes, cfg.width, cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 3])
    n = images.shape[0]
    losses = []
    net.train()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(perm[i: i + cfg.batch_size])
            x, y = _augment(images[idx], labels[idx], rng, cfg)
            loss = seg_cross_entropy(net(x), y)
            if not is_finite(loss):
                raise DivergenceError("seg_cross_entropy", float(loss.detach()), epoch + 1)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        losses.append(total / count)
        log.debug("seg epoch %d loss %.4f", epoch + 1, losses[-1])
    return SegModel(net, cfg.backbone, num_classes, tuple(images.shape[-2:]), cfg, losses)


def _labelled_tensors(manifest: DatasetManifest):
    refs = sorted(manifest.samples, key=lambda r: r.tile_id)
    for r in refs:
        if r.label is None:
            raise DataError(f"sample {r.tile_id} has no label")
    samples = [r.load(manifest.domain) for r in refs]
    images = image_to_tensor(np.stack([s.image.data for s in samples]))
    labels = torch.from_numpy(np.stack([s.label.data for s in samples]))
    return images, labels


def train_segmentation(cfg: SegTrainConfig, manifest: DatasetManifest) -> SegModel:
    images, labels = _labelled_tensors(manifest)
    return fit_segmenter(cfg, images, labels, manifest.domain.class_count)


def source_only_baseline(cfg: SegTrainConfig, source_manifest: DatasetManifest,
                         target_hw: Sequence[int]) -> SegModel:
    """Train on source tiles merely resized to target geometry (no translation)."""
    images, labels = _labelled_tensors(source_manifest)
    hw = (int(target_hw[0]), int(target_hw[1]))
    images = torch.clamp(resize_tensor(images, hw), -1.0, 1.0)
    labels = torch.from_numpy(np.stack([resize_nearest_labels(l, hw) for l in labels.numpy()]))
    return fit_segmenter(cfg, images, labels, source_manifest.domain.class_count)


def argmax_labels(scores: np.ndarray | torch.Tensor) -> np.ndarray:
    """Per-pixel argmax over axis 1 of N x C x H x W scores; ties go to the lower index."""
    a = scores.detach().numpy() if torch.is_tensor(scores) else np.asarray(scores)
    return np.argmax(a, axis=1)


def predict(model: SegModel, tiles: Sequence[ImageTile] | np.ndarray) -> List[LabelTile]:
    if isinstance(tiles, np.ndarray):
        arr = tiles if tiles.ndim == 4 else tiles[None]
    else:
        arr = np.stack([t.data for t in tiles]) if len(tiles) else np.zeros((0, *model.hw, 3), np.float32)
    if arr.shape[0] == 0:
        return []
    scores = model.scores(image_to_tensor(arr))
    return [LabelTile(p) for p in argmax_labels(scores)]


def predict_manifest(model: SegModel, manifest: DatasetManifest, out_dir: str | Path) -> List[Path]:
    """Write one 8-bit label raster per tile as ``<tile_id>.png`` in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ref in manifest.samples:
        s = ref.load(manifest.domain, with_label=False)
        (pred,) = predict(model, [s.image])
        p = out_dir / f"{ref.tile_id}.png"
        write_band8(p, pred.data)
        paths.append(p)
    return paths
