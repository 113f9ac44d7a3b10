"""Resize-residual generators with depth heads, Wasserstein critics, and
segmentation backbones.

Tensors are NCHW inside this module; numpy helpers at the bottom convert
from the channel-last arrays used by :mod:`drdg.data_model`.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from drdg.data_model import DomainSpec
from drdg.errors import ConfigError, MissingFileError, SchemaError, ShapeMismatchError

HW = Tuple[int, int]


@dataclass
class NetworkSpec:
    encoder_channels: Tuple[int, ...] = (64, 128, 256, 512, 512, 512, 512)
    discriminator_channels: Tuple[int, ...] = (64, 128, 256, 512, 512, 1)
    # every channel count except the critic's final 1 is divided by this
    channel_divisor: int = 1
    leaky_slope: float = 0.2
    init_std: float = 0.02
    # "kaiming" (He-normal for the leaky slope) or "normal" (N(0, init_std)) for the critics
    critic_init: str = "kaiming"

    def __post_init__(self):
        if self.channel_divisor < 1:
            raise ConfigError("channel_divisor must be >= 1")
        if self.discriminator_channels[-1] != 1:
            raise ConfigError("critic must end in a single channel")
        if self.critic_init not in ("kaiming", "normal"):
            raise ConfigError(f"critic_init must be 'kaiming' or 'normal', got {self.critic_init!r}")

    @property
    def encoder(self) -> Tuple[int, ...]:
        return tuple(max(1, c // self.channel_divisor) for c in self.encoder_channels)

    @property
    def discriminator(self) -> Tuple[int, ...]:
        body = tuple(max(1, c // self.channel_divisor) for c in self.discriminator_channels[:-1])
        return body + (1,)


def resize_tensor(x: torch.Tensor, hw: Sequence[int]) -> torch.Tensor:
    """Bilinear resize (half-pixel centers); exact identity at the same size."""
    hw = (int(hw[0]), int(hw[1]))
    if hw[0] <= 0 or hw[1] <= 0:
        raise ConfigError(f"target size must be positive, got {hw}")
    if tuple(x.shape[-2:]) == hw:
        return x
    return F.interpolate(x, size=hw, mode="bilinear", align_corners=False)


def resize_bilinear(x: np.ndarray, to_hw: Sequence[int]) -> np.ndarray:
    """Channel-last numpy front end of :func:`resize_tensor`."""
    a = np.asarray(x)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[..., None]
    t = torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))[None].astype(np.float64))
    out = resize_tensor(t, to_hw)[0].numpy().transpose(1, 2, 0)
    out = out.astype(a.dtype if np.issubdtype(a.dtype, np.floating) else np.float64)
    return out[..., 0] if squeeze else out


def resize_nearest_labels(label: np.ndarray, to_hw: Sequence[int]) -> np.ndarray:
    """Nearest-neighbour resize of a class map (pixel-center sampling)."""
    label = np.asarray(label)
    h, w = label.shape[:2]
    th, tw = int(to_hw[0]), int(to_hw[1])
    rows = np.minimum(((np.arange(th) + 0.5) * h / th).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(np.int64), w - 1)
    return label[rows[:, None], cols[None, :]]


class SpatialInstanceNorm(nn.Module):
    """Affine instance norm that passes 1x1 feature maps through unchanged."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x):
        if x.shape[-1] * x.shape[-2] <= 1:
            return x
        return self.norm(x)


def _pad_even(x: torch.Tensor) -> torch.Tensor:
    # stride-2 convs then give ceil(n / 2) instead of floor(n / 2)
    ph, pw = x.shape[-2] % 2, x.shape[-1] % 2
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    return x


class Encoder(nn.Module):
    def __init__(self, channels: Sequence[int], slope: float = 0.2, in_channels: int = 3):
        super().__init__()
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        c = in_channels
        for i, out in enumerate(channels):
            self.convs.append(nn.Conv2d(c, out, 4, 2, 1))
            # no norm on the first and innermost stages
            inner = 0 < i < len(channels) - 1
            self.norms.append(SpatialInstanceNorm(out) if inner else nn.Identity())
            c = out
        self.slope = slope

    def forward(self, x) -> List[torch.Tensor]:
        feats = []
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(_pad_even(x))), self.slope)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    """Mirror of :class:`Encoder` with concatenated skip connections."""

    def __init__(self, channels: Sequence[int], out_channels: int, activation: str):
        super().__init__()
        rev = list(channels)[::-1]
        self.ups = nn.ModuleList()
        self.norms = nn.ModuleList()
        c = rev[0]
        for out in rev[1:]:
            self.ups.append(nn.ConvTranspose2d(c, out, 4, 2, 1))
            self.norms.append(SpatialInstanceNorm(out))
            c = 2 * out
        self.final = nn.ConvTranspose2d(c, out_channels, 4, 2, 1)
        if activation not in ("tanh", "sigmoid"):
            raise ConfigError(f"unknown decoder activation {activation!r}")
        self.activation = activation

    def forward(self, feats: Sequence[torch.Tensor], out_hw: HW) -> torch.Tensor:
        h = feats[-1]
        for j, (up, norm) in enumerate(zip(self.ups, self.norms)):
            skip = feats[-2 - j]
            h = up(h)[..., : skip.shape[-2], : skip.shape[-1]]
            h = torch.cat([F.relu(norm(h)), skip], dim=1)
        h = self.final(h)[..., : out_hw[0], : out_hw[1]]
        return torch.tanh(h) if self.activation == "tanh" else torch.sigmoid(h)


class GeneratorBundle(nn.Module):
    """One translation direction: shared encoder, residual image head, depth head."""

    def __init__(self, spec: NetworkSpec, from_hw: HW, to_hw: HW, direction: str):
        super().__init__()
        self.encoder = Encoder(spec.encoder, spec.leaky_slope)
        self.image_decoder = Decoder(spec.encoder, 3, "tanh")
        self.depth_decoder = Decoder(spec.encoder, 1, "sigmoid")
        self.from_hw = (int(from_hw[0]), int(from_hw[1]))
        self.to_hw = (int(to_hw[0]), int(to_hw[1]))
        self.direction = direction

    @property
    def resize(self) -> Tuple[HW, HW]:
        return (self.from_hw, self.to_hw)

    def _check(self, x):
        if tuple(x.shape[-2:]) != self.from_hw or x.shape[-3] != 3:
            raise ShapeMismatchError(f"{self.direction} input", (3,) + self.from_hw, tuple(x.shape[-3:]))

    def forward(self, x):
        """Return ``(translated, residual)``."""
        translated, residual, _ = self.run(x, depth=False)
        return translated, residual

    def run(self, x, image: bool = True, depth: bool = True):
        """One encoder pass feeding the requested heads: ``(translated, residual, depth)``."""
        self._check(x)
        feats = self.encoder(x)
        translated = residual = z = None
        if image:
            residual = self.image_decoder(feats, self.from_hw)
            translated = torch.clamp(resize_tensor(residual + x, self.to_hw), -1.0, 1.0)
        if depth:
            z = self.depth_decoder(feats, self.from_hw)
        return translated, residual, z

    def translate(self, x):
        return self.run(x, depth=False)[0]

    def depth(self, x):
        return self.run(x, image=False)[2]

    def zero_residual_(self):
        """Zero every image-decoder weight so the residual is identically 0."""
        with torch.no_grad():
            for p in self.image_decoder.parameters():
                p.zero_()
        return self


class Discriminator(nn.Module):
    """Fully convolutional Wasserstein critic producing a patch score map."""

    def __init__(self, spec: NetworkSpec, hw: HW):
        super().__init__()
        layers: List[nn.Module] = []
        c = 3
        chans = spec.discriminator
        for i, out in enumerate(chans):
            layers.append(nn.Conv2d(c, out, 4, 2, 1))
            if i < len(chans) - 1:
                layers.append(nn.LeakyReLU(spec.leaky_slope))
            c = out
        self.net = nn.Sequential(*layers)
        self.hw = (int(hw[0]), int(hw[1]))

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.hw or x.shape[-3] != 3:
            raise ShapeMismatchError("critic input", (3,) + self.hw, tuple(x.shape[-3:]))
        return self.net(x)


def init_weights(module: nn.Module, std: float, generator: torch.Generator,
                 kaiming_slope: Optional[float] = None) -> None:
    """Seeded init: N(0, std) by default, He-normal for leaky units if ``kaiming_slope`` is set."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            if kaiming_slope is None:
                nn.init.normal_(m.weight, 0.0, std, generator=generator)
            else:
                nn.init.kaiming_normal_(m.weight, a=kaiming_slope, nonlinearity="leaky_relu", generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.InstanceNorm2d, nn.GroupNorm, nn.BatchNorm2d)) and m.weight is not None:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build_drdg(source: DomainSpec, target: DomainSpec, seed: int, spec: NetworkSpec | None = None):
    """Return ``(G_st, G_ts, D_s, D_t)`` with seed-deterministic initial weights."""
    spec = spec or NetworkSpec()
    gen = torch.Generator().manual_seed(int(seed))
    # module constructors draw default inits from the global RNG; keep that untouched
    with torch.random.fork_rng(devices=[]):
        g_st = GeneratorBundle(spec, source.tile_hw, target.tile_hw, "S->T")
        g_ts = GeneratorBundle(spec, target.tile_hw, source.tile_hw, "T->S")
        d_s = Discriminator(spec, source.tile_hw)
        d_t = Discriminator(spec, target.tile_hw)
    critic_slope = spec.leaky_slope if spec.critic_init == "kaiming" else None
    for net, slope in ((g_st, None), (g_ts, None), (d_s, critic_slope), (d_t, critic_slope)):
        init_weights(net, spec.init_std, gen, slope)
    return g_st, g_ts, d_s, d_t


# -- segmentation backbones ------------------------------------------------


def _block(cin, cout, groups=4):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.GroupNorm(min(groups, cout), cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.GroupNorm(min(groups, cout), cout),
        nn.ReLU(inplace=True),
    )


class CompactSegNet(nn.Module):
    """Three-level U-Net; output has the input's spatial size."""

    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        w = width
        self.enc1 = _block(3, w)
        self.enc2 = _block(w, 2 * w)
        self.mid = _block(2 * w, 4 * w)
        self.up2 = nn.ConvTranspose2d(4 * w, 2 * w, 2, 2)
        self.dec2 = _block(4 * w, 2 * w)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 2, 2)
        self.dec1 = _block(2 * w, w)
        self.head = nn.Conv2d(w, num_classes, 1)
        self.num_classes = num_classes

    def forward(self, x):
        h, w = x.shape[-2:]
        ph, pw = (-h) % 4, (-w) % 4
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        m = self.mid(F.max_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([self.up2(m), e2], 1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], 1))
        return self.head(d1)[..., :h, :w]


class DeepLabV3Backbone(nn.Module):
    def __init__(self, num_classes: int, width: int = 0):
        super().__init__()
        from torchvision.models.segmentation import deeplabv3_resnet50

        self.model = deeplabv3_resnet50(weights=None, weights_backbone=None, num_classes=num_classes)
        self.num_classes = num_classes

    def forward(self, x):
        return self.model(x)["out"]


SEGMENTATION_BACKBONES: Dict[str, Callable[..., nn.Module]] = {
    "compact": CompactSegNet,
    "deeplabv3": DeepLabV3Backbone,
}


def build_segmenter(name: str, num_classes: int, width: int = 16, seed: int = 0) -> nn.Module:
    try:
        factory = SEGMENTATION_BACKBONES[name]
    except KeyError:
        raise ConfigError(f"unknown segmentation backbone {name!r}; known: {sorted(SEGMENTATION_BACKBONES)}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return factory(num_classes, width)


# -- checkpoints and checksums ---------------------------------------------


def param_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, payload: dict, schema: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save({"schema": schema, **payload}, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, schema: str) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as e:
        raise MissingFileError(f"checkpoint not found: {path}") from e
    except Exception as e:  # torch raises assorted types for truncated/garbled archives
        raise SchemaError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("schema") != schema:
        got = payload.get("schema") if isinstance(payload, dict) else type(payload).__name__
        raise SchemaError(f"checkpoint {path}: expected schema {schema!r}, got {got!r}")
    return payload


def image_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(N x) H x W x C float array -> N x C x H x W float32 tensor."""
    a = np.asarray(images, dtype=np.float32)
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)
