"""Stage 1: adversarial resize-residual translation with depth regularization."""
from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from drdg.config import from_dict, to_dict
from drdg.data_model import DomainSpec, denormalize_image
from drdg.errors import ConfigError, DataError, DivergenceError, ShapeMismatchError
from drdg.ingestion.manifest import DatasetManifest, SampleRef, write_manifest
from drdg.ingestion.raster import write_band8, write_rgb
from drdg.losses import (
    LossReport,
    LossWeights,
    berhu,
    critic_loss,
    cycle_loss,
    depth_consistency,
    gen_adv_loss,
    gradient_penalty,
    is_finite,
    total_loss,
    weighted_total,
)
from drdg.networks import (
    GeneratorBundle,
    NetworkSpec,
    build_drdg,
    image_to_tensor,
    load_checkpoint,
    resize_nearest_labels,
    save_checkpoint,
    tensor_to_image,
)

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "drdg-translation-ckpt/1"


@dataclass
class TranslationConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    steps: int = 2000
    batch_size: int = 1
    critic_steps_per_gen_step: int = 1
    lr_critic: float = 1e-4
    lr_generator: float = 1e-4
    betas: Tuple[float, float] = (0.5, 0.9)
    gp_weight: float = 10.0
    lipschitz: str = "gp"  # gp | clip
    clip_value: float = 0.01
    seed: int = 0
    checkpoint_every: int = 0
    enable_dsl: bool = True
    enable_dccl: bool = True
    berhu_per_image: bool = False
    network: NetworkSpec = field(default_factory=NetworkSpec)

    def __post_init__(self):
        if self.critic_steps_per_gen_step < 1:
            raise ConfigError("critic_steps_per_gen_step must be >= 1")
        if self.lr_critic <= 0 or self.lr_generator <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.lipschitz not in ("gp", "clip"):
            raise ConfigError(f"lipschitz must be 'gp' or 'clip', got {self.lipschitz!r}")

    @property
    def effective_weights(self) -> LossWeights:
        return replace(
            self.weights,
            lambda_dsl=self.weights.lambda_dsl if self.enable_dsl else 0.0,
            lambda_dccl=self.weights.lambda_dccl if self.enable_dccl else 0.0,
        )


@dataclass
class DomainData:
    domain: DomainSpec
    images: torch.Tensor  # N x 3 x H x W
    depths: torch.Tensor  # N x 1 x H x W
    tile_ids: List[str]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "DomainData":
        if not manifest.samples:
            raise DataError(f"manifest for {manifest.domain.name!r} is empty")
        if not manifest.has_depth:
            raise DataError(f"manifest for {manifest.domain.name!r} is missing depth tiles")
        refs = sorted(manifest.samples, key=lambda r: r.tile_id)
        samples = [r.load(manifest.domain, with_label=False) for r in refs]
        for s in samples:
            if s.image.hw != manifest.domain.tile_hw:
                raise ShapeMismatchError(s.tile_id, manifest.domain.tile_hw, s.image.hw)
        images = image_to_tensor(np.stack([s.image.data for s in samples]))
        depths = image_to_tensor(np.stack([s.depth.data for s in samples]))
        return cls(manifest.domain, images, depths, [s.tile_id for s in samples])

    def __len__(self):
        return self.images.shape[0]


class ShuffledStream:
    """Endless index stream, reshuffled every epoch from its own generator."""

    def __init__(self, n: int, seed: Sequence[int]):
        self.n = n
        self.rng = np.random.default_rng(list(seed))
        self.perm = np.arange(0)
        self.pos = 0
        self.epoch = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        for _ in range(k):
            if self.pos >= len(self.perm):
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
                self.epoch += 1
            out.append(int(self.perm[self.pos]))
            self.pos += 1
        return np.asarray(out)

    def state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "perm": self.perm.tolist(),
                "pos": self.pos, "epoch": self.epoch}

    def load_state(self, st: dict) -> None:
        self.rng.bit_generator.state = st["rng"]
        self.perm = np.asarray(st["perm"], dtype=np.int64)
        self.pos = int(st["pos"])
        self.epoch = int(st["epoch"])


def _set_requires_grad(nets, flag: bool):
    for n in nets:
        for p in n.parameters():
            p.requires_grad_(flag)


class TranslationTrainer:
    """Holds the four networks, their optimizers and all RNG state of one run."""

    def __init__(self, cfg: TranslationConfig, source: DomainData, target: DomainData):
        self.cfg = cfg
        self.source = source
        self.target = target
        self.g_st, self.g_ts, self.d_s, self.d_t = build_drdg(source.domain, target.domain, cfg.seed, cfg.network)
        gen_params = list(self.g_st.parameters()) + list(self.g_ts.parameters())
        self.opt_g = torch.optim.Adam(gen_params, lr=cfg.lr_generator, betas=tuple(cfg.betas))
        self.opt_ds = torch.optim.Adam(self.d_s.parameters(), lr=cfg.lr_critic, betas=tuple(cfg.betas))
        self.opt_dt = torch.optim.Adam(self.d_t.parameters(), lr=cfg.lr_critic, betas=tuple(cfg.betas))
        self.gp_rng = torch.Generator().manual_seed(int(cfg.seed) + 7919)
        self.src_stream = ShuffledStream(len(source), (cfg.seed, 1))
        self.tgt_stream = ShuffledStream(len(target), (cfg.seed, 2))
        self.step = 0
        self.running: Dict[str, float] = {}

    @property
    def networks(self):
        return {"g_st": self.g_st, "g_ts": self.g_ts, "d_s": self.d_s, "d_t": self.d_t}

    def _batch(self, data: DomainData, stream: ShuffledStream):
        idx = torch.from_numpy(stream.take(self.cfg.batch_size))
        return data.images[idx], data.depths[idx]

    def critic_step(self, xs: torch.Tensor, xt: torch.Tensor) -> Dict[str, float]:
        cfg = self.cfg
        with torch.no_grad():
            fake_t = self.g_st.translate(xs)
            fake_s = self.g_ts.translate(xt)
        out = {}
        for name, critic, opt, real, fake in (
            ("t", self.d_t, self.opt_dt, xt, fake_t),
            ("s", self.d_s, self.opt_ds, xs, fake_s),
        ):
            real_scores, fake_scores = critic(real), critic(fake)
            gp = gradient_penalty(critic, real, fake, self.gp_rng) if cfg.lipschitz == "gp" else None
            loss = critic_loss(real_scores, fake_scores, gp, cfg.gp_weight)
            if not is_finite(loss):
                raise DivergenceError(f"critic_{name}", float(loss.detach()), self.step + 1)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if cfg.lipschitz == "clip":
                with torch.no_grad():
                    for p in critic.parameters():
                        p.clamp_(-cfg.clip_value, cfg.clip_value)
            out[f"critic_{name}"] = float(loss.detach())
            out[f"wasserstein_{name}"] = float((real_scores.mean() - fake_scores.mean()).detach())
        return out

    def generator_losses(self, xs, zs, xt, zt) -> Dict[str, torch.Tensor]:
        """All eight directional terms.

        Depth terms that are switched off, or whose weight is zero, are exact
        zeros and are never computed, so the depth heads get no gradient.
        """
        cfg = self.cfg
        per_image = cfg.berhu_per_image
        w = cfg.effective_weights
        use_dsl, use_dccl = w.lambda_dsl > 0, w.lambda_dccl > 0
        fake_t, _, zs_hat = self.g_st.run(xs, depth=use_dsl)
        fake_s, _, zt_hat = self.g_ts.run(xt, depth=use_dsl)
        rec_s, _, z_st_hat = self.g_ts.run(fake_t, depth=use_dccl)
        rec_t, _, z_ts_hat = self.g_st.run(fake_s, depth=use_dccl)
        zero = torch.zeros(())
        return {
            "adv_st": gen_adv_loss(self.d_t(fake_t)),
            "adv_ts": gen_adv_loss(self.d_s(fake_s)),
            "cyc_st": cycle_loss(xs, rec_s),
            "cyc_ts": cycle_loss(xt, rec_t),
            "dsl_s": berhu(zs_hat, zs, per_image) if use_dsl else zero,
            "dsl_t": berhu(zt_hat, zt, per_image) if use_dsl else zero,
            "dccl_st": depth_consistency(z_st_hat, zs, per_image) if use_dccl else zero,
            "dccl_ts": depth_consistency(z_ts_hat, zt, per_image) if use_dccl else zero,
        }

    def generator_step(self, xs, zs, xt, zt) -> LossReport:
        critics = (self.d_s, self.d_t)
        _set_requires_grad(critics, False)
        try:
            comps = self.generator_losses(xs, zs, xt, zt)
            for k, v in comps.items():
                if not is_finite(v):
                    raise DivergenceError(k, float(v.detach()), self.step + 1)
            w = self.cfg.effective_weights
            total = weighted_total(comps, w)
            self.opt_g.zero_grad(set_to_none=True)
            total.backward()
            self.opt_g.step()
        finally:
            _set_requires_grad(critics, True)
        return total_loss({k: float(v.detach()) for k, v in comps.items()}, w)

    def train_step(self) -> Tuple[LossReport, Dict[str, float]]:
        critic_info: Dict[str, float] = {}
        for _ in range(self.cfg.critic_steps_per_gen_step):
            xs, _ = self._batch(self.source, self.src_stream)
            xt, _ = self._batch(self.target, self.tgt_stream)
            critic_info = self.critic_step(xs, xt)
        xs, zs = self._batch(self.source, self.src_stream)
        xt, zt = self._batch(self.target, self.tgt_stream)
        report = self.generator_step(xs, zs, xt, zt)
        self.step += 1
        for k, v in {"total": report.total, **critic_info}.items():
            self.running[k] = v if k not in self.running else 0.98 * self.running[k] + 0.02 * v
        return report, critic_info

    def run(self, steps: int, log_path: Optional[Path] = None, ckpt_dir: Optional[Path] = None,
            log_every: int = 100) -> List[dict]:
        """Train for ``steps`` more generator updates; returns the per-step records."""
        records = []
        fh = open(log_path, "a") if log_path is not None else None
        try:
            for _ in range(steps):
                report, info = self.train_step()
                rec = {"step": self.step, **report.components(), "total": report.total, **info}
                records.append(rec)
                if fh is not None:
                    fh.write(report.to_record(self.step, **info) + "\n")
                if log_every and self.step % log_every == 0:
                    log.info("step %d total %.4f %s", self.step, report.total,
                             " ".join(f"{k}={v:.3f}" for k, v in info.items()))
                every = self.cfg.checkpoint_every
                if ckpt_dir is not None and every and self.step % every == 0:
                    self.save(Path(ckpt_dir) / f"ckpt_{self.step:06d}.pt")
        finally:
            if fh is not None:
                fh.close()
        return records

    # -- persistence -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "step": self.step,
            "seed": self.cfg.seed,
            "config": to_dict(self.cfg),
            "domains": {"source": self.source.domain.to_dict(), "target": self.target.domain.to_dict()},
            "networks": {k: n.state_dict() for k, n in self.networks.items()},
            "optimizers": {"g": self.opt_g.state_dict(), "d_s": self.opt_ds.state_dict(),
                           "d_t": self.opt_dt.state_dict()},
            "rng": {"gp": self.gp_rng.get_state(), "source": self.src_stream.state(),
                    "target": self.tgt_stream.state()},
            "running": dict(self.running),
        }

    def load_state_dict(self, st: dict) -> None:
        for k, n in self.networks.items():
            n.load_state_dict(st["networks"][k])
        self.opt_g.load_state_dict(st["optimizers"]["g"])
        self.opt_ds.load_state_dict(st["optimizers"]["d_s"])
        self.opt_dt.load_state_dict(st["optimizers"]["d_t"])
        self.gp_rng.set_state(st["rng"]["gp"])
        self.src_stream.load_state(st["rng"]["source"])
        self.tgt_stream.load_state(st["rng"]["target"])
        self.step = int(st["step"])
        self.running = dict(st["running"])

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.state_dict(), CHECKPOINT_SCHEMA)

    @classmethod
    def resume(cls, checkpoint: str | Path, source: DomainData, target: DomainData) -> "TranslationTrainer":
        st = load_checkpoint(checkpoint, CHECKPOINT_SCHEMA)
        here = {"source": source.domain.to_dict(), "target": target.domain.to_dict()}
        if st.get("domains") != here:
            raise ConfigError(f"checkpoint {checkpoint} was trained on different domains")
        try:
            cfg = from_dict(TranslationConfig, st["config"])
            trainer = cls(cfg, source, target)
            trainer.load_state_dict(st)
        except (KeyError, RuntimeError, ValueError) as e:
            raise ConfigError(f"checkpoint {checkpoint} does not match this data/config: {e}") from e
        return trainer


def resume(checkpoint: str | Path, source: DomainData, target: DomainData) -> TranslationTrainer:
    return TranslationTrainer.resume(checkpoint, source, target)


def load_generators(checkpoint: str | Path) -> Tuple[GeneratorBundle, GeneratorBundle]:
    """Rebuild ``(G_st, G_ts)`` from a checkpoint without any training data."""
    st = load_checkpoint(checkpoint, CHECKPOINT_SCHEMA)
    try:
        cfg = from_dict(TranslationConfig, st["config"])
        src = DomainSpec.from_dict(st["domains"]["source"])
        tgt = DomainSpec.from_dict(st["domains"]["target"])
        g_st, g_ts, _, _ = build_drdg(src, tgt, cfg.seed, cfg.network)
        g_st.load_state_dict(st["networks"]["g_st"])
        g_ts.load_state_dict(st["networks"]["g_ts"])
    except (KeyError, RuntimeError) as e:
        raise ConfigError(f"checkpoint {checkpoint} is incomplete: {e}") from e
    g_st.eval()
    g_ts.eval()
    return g_st, g_ts


def train_translation(cfg: TranslationConfig, source_manifest: DatasetManifest,
                      target_manifest: DatasetManifest, out_dir: str | Path,
                      log_every: int = 100) -> Path:
    """Run stage 1 to completion and return the final checkpoint path."""
    if not source_manifest.has_labels:
        raise DataError("source manifest must carry labels")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = TranslationTrainer(cfg, DomainData.from_manifest(source_manifest),
                                 DomainData.from_manifest(target_manifest))
    log_path = out_dir / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    trainer.run(cfg.steps, log_path, out_dir, log_every)
    return trainer.save(out_dir / "final.pt")


def translate_images(g: GeneratorBundle, images: torch.Tensor, batch_size: int = 8) -> torch.Tensor:
    g.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            outs.append(g.translate(images[i: i + batch_size]))
    return torch.cat(outs) if outs else images[:0]


def translate_dataset(g: GeneratorBundle, source_manifest: DatasetManifest, out_dir: str | Path) -> DatasetManifest:
    """Translate every annotated source tile to target geometry and style.

    Labels follow by nearest-neighbour resize; the source depth tile is copied
    alongside (at source geometry) and referenced from the record's extras.
    """
    src = source_manifest.domain
    if src.tile_hw != g.from_hw:
        raise ShapeMismatchError("source manifest tile", g.from_hw, src.tile_hw)
    out_dir = Path(out_dir)
    tiles = out_dir / "tiles"
    tiles.mkdir(parents=True, exist_ok=True)
    domain = DomainSpec(
        name=f"{src.name}→target",
        tile_height=g.to_hw[0],
        tile_width=g.to_hw[1],
        ground_resolution=src.ground_resolution * src.tile_height / g.to_hw[0],
        class_count=src.class_count,
        depth_stats=src.depth_stats,
        annotated=True,
        color_map=src.color_map,
    )
    refs = []
    g.eval()
    for ref in source_manifest.samples:
        s = ref.load(src)
        with torch.no_grad():
            x = g.translate(image_to_tensor(s.image.data))
        img_path = tiles / f"{s.tile_id}_rgb.png"
        write_rgb(img_path, denormalize_image(tensor_to_image(x)[0]))
        lab_path = None
        if s.label is not None:
            lab_path = tiles / f"{s.tile_id}_label.png"
            write_band8(lab_path, resize_nearest_labels(s.label.data, g.to_hw))
        extra = {}
        if ref.depth is not None:
            dst = tiles / f"{s.tile_id}_srcdsm.tif"
            shutil.copyfile(ref.depth, dst)
            extra["source_depth"] = dst
        refs.append(SampleRef(s.tile_id, img_path, lab_path, None, s.scene_id, None, None, extra))
    manifest = DatasetManifest(domain, "train", refs, source_manifest.seed)
    write_manifest(manifest, out_dir / "translated.json")
    return manifest


def channel_means(images: torch.Tensor | np.ndarray) -> np.ndarray:
    a = images.detach().numpy() if torch.is_tensor(images) else np.asarray(images)
    return a.astype(np.float64).mean(axis=(0, 2, 3))


def mean_color_distance(a, b) -> float:
    """Euclidean distance between the per-channel mean colors of two NCHW image sets."""
    return float(np.linalg.norm(channel_means(a) - channel_means(b)))


def color_histogram_distance(a, b, bins: int = 32) -> float:
    """Mean over channels of the L1 distance between normalized value histograms."""
    a = a.detach().numpy() if torch.is_tensor(a) else np.asarray(a)
    b = b.detach().numpy() if torch.is_tensor(b) else np.asarray(b)
    total = 0.0
    for c in range(a.shape[1]):
        ha, _ = np.histogram(a[:, c], bins=bins, range=(-1, 1))
        hb, _ = np.histogram(b[:, c], bins=bins, range=(-1, 1))
        total += np.abs(ha / ha.sum() - hb / hb.sum()).sum()
    return total / a.shape[1]
