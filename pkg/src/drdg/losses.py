"""Training objectives for the translation and segmentation stages."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping

import torch
import torch.nn.functional as F

from drdg.errors import ConfigError, DataError, ShapeMismatchError
from drdg.networks import GeneratorBundle, resize_tensor

# Generator loss component names, grouped by the weight that multiplies them.
COMPONENT_GROUPS = {
    "lambda_adv": ("adv_st", "adv_ts"),
    "lambda_cyc": ("cyc_st", "cyc_ts"),
    "lambda_dsl": ("dsl_s", "dsl_t"),
    "lambda_dccl": ("dccl_st", "dccl_ts"),
}
COMPONENTS = tuple(c for group in COMPONENT_GROUPS.values() for c in group)


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 5.0
    lambda_cyc: float = 10.0
    lambda_dsl: float = 2.0
    lambda_dccl: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ConfigError(f"{k} must be non-negative, got {v}")


@dataclass(frozen=True)
class LossReport:
    adv_st: float
    adv_ts: float
    cyc_st: float
    cyc_ts: float
    dsl_s: float
    dsl_t: float
    dccl_st: float
    dccl_ts: float
    total: float

    def components(self) -> dict:
        return {c: getattr(self, c) for c in COMPONENTS}

    def recompute_total(self, w: LossWeights) -> float:
        return float(weighted_total(self.components(), w))

    def to_record(self, step: int, **extra) -> str:
        return json.dumps({"step": step, **asdict(self), **extra}, sort_keys=True)


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError(name, tuple(b.shape), tuple(a.shape))


def gen_adv_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()


def critic_loss(real_scores, fake_scores, penalty=None, gp_weight: float = 10.0):
    """Wasserstein critic objective to minimize: mean(fake) - mean(real) [+ gp]."""
    loss = fake_scores.mean() - real_scores.mean()
    if penalty is not None:
        loss = loss + gp_weight * penalty
    return loss


def gradient_penalty(critic, real: torch.Tensor, fake: torch.Tensor, generator: torch.Generator | None = None):
    """Two-sided penalty on the critic's input-gradient norm at random interpolates."""
    eps = torch.rand((real.shape[0], 1, 1, 1), generator=generator, dtype=real.dtype)
    mixed = (eps * real + (1 - eps) * fake.detach()).requires_grad_(True)
    scores = critic(mixed)
    (grad,) = torch.autograd.grad(scores.sum(), mixed, create_graph=True)
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def cycle_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    _same_shape("reconstruction", x_rec, x)
    return (x - x_rec).abs().mean()


def berhu(pred: torch.Tensor, gt: torch.Tensor, per_image: bool = False) -> torch.Tensor:
    """Reverse Huber loss with threshold 0.2 * max|pred - gt|, averaged over elements.

    The threshold is taken over the whole batch by default; ``per_image`` uses
    one threshold per leading-axis item.
    """
    _same_shape("depth prediction", pred, gt)
    d = (pred - gt).abs()
    if per_image and d.ndim > 1:
        thr = 0.2 * d.flatten(1).max(dim=1).values.reshape((-1,) + (1,) * (d.ndim - 1))
    else:
        thr = 0.2 * d.max()
    thr = thr.expand_as(d)
    safe = torch.where(thr > 0, thr, torch.ones_like(thr))
    linear, quad = berhu_branches(d, safe)
    # all-zero residual: every element is on the linear branch with value 0
    return torch.where(d <= thr, linear, quad).mean()


def berhu_branches(d: torch.Tensor, thr: torch.Tensor):
    """Elementwise (linear, quadratic) pieces of Berhu for residuals ``d >= 0`` and threshold ``thr > 0``."""
    return d, (d * d + thr * thr) / (2 * thr)


def dsl(g: GeneratorBundle, x: torch.Tensor, z: torch.Tensor, per_image: bool = False) -> torch.Tensor:
    return berhu(g.depth(x), z, per_image)


def depth_consistency(z_pred: torch.Tensor, z_src: torch.Tensor, per_image: bool = False) -> torch.Tensor:
    """Berhu between a depth prediction resized onto the ground truth's grid and that truth."""
    return berhu(resize_tensor(z_pred, z_src.shape[-2:]), z_src, per_image)


def dccl(g_back: GeneratorBundle, x_translated: torch.Tensor, z_src: torch.Tensor, per_image: bool = False):
    return depth_consistency(g_back.depth(x_translated), z_src, per_image)


def weighted_total(components: Mapping, w: LossWeights):
    missing = [c for c in COMPONENTS if c not in components]
    if missing:
        raise ConfigError(f"missing loss components: {missing}")
    total = 0.0
    for lam, names in COMPONENT_GROUPS.items():
        weight = getattr(w, lam)
        total = total + weight * (components[names[0]] + components[names[1]])
    return total


def total_loss(components: Mapping, w: LossWeights) -> LossReport:
    total = weighted_total(components, w)
    vals = {c: float(components[c]) for c in COMPONENTS}
    return LossReport(**vals, total=float(total))


def seg_cross_entropy(scores: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Pixel-averaged softmax cross-entropy; ``scores`` N x C x H x W, ``label`` N x H x W."""
    if scores.ndim == 3:
        scores, label = scores[None], label[None]
    if tuple(scores.shape[-2:]) != tuple(label.shape[-2:]) or scores.shape[0] != label.shape[0]:
        raise ShapeMismatchError("label", (scores.shape[0],) + tuple(scores.shape[-2:]), tuple(label.shape))
    c = scores.shape[1]
    if label.numel() and (int(label.max()) >= c or int(label.min()) < 0):
        raise DataError(f"label index outside [0, {c - 1}]")
    return F.cross_entropy(scores, label.long())


def is_finite(v) -> bool:
    return math.isfinite(float(v.detach() if hasattr(v, "detach") else v))
