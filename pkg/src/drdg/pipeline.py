"""End-to-end orchestration: ablation cells x seeds, baseline, report, figures."""
from __future__ import annotations

import json
import logging
import os
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from PIL import Image, ImageDraw

from drdg.config import config_digest, dump_config, load_config
from drdg.data_model import CLASS_NAMES, denormalize_image
from drdg.errors import ConfigError, DRDGError, MissingFileError
from drdg.evaluation import EvalReport, aggregate_seeds, evaluate_predictions, render_table, write_report
from drdg.ingestion.manifest import read_manifest
from drdg.ingestion.raster import read_raster
from drdg.ingestion.tiling import paint_labels
from drdg.networks import NetworkSpec, build_drdg
from drdg.segmentation import SegTrainConfig, predict_manifest, source_only_baseline, train_segmentation
from drdg.translation import (
    DomainData,
    TranslationConfig,
    load_generators,
    mean_color_distance,
    train_translation,
    translate_dataset,
    translate_images,
)

log = logging.getLogger(__name__)

# cell name -> (enable_dsl, enable_dccl)
ABLATION_CELLS = {
    "DRDG": (True, True),
    "w/o DSL": (False, True),
    "w/o DCCL": (True, False),
    "RDG": (False, False),
}
BASELINE = "Baseline"
RUN_ROOT_ENV = "DRDG_RUN_ROOT"


def cell_slug(name: str) -> str:
    return name.lower().replace("w/o ", "wo_").replace(" ", "_")


@dataclass
class PipelineConfig:
    source_manifest: str
    target_train_manifest: str
    target_test_manifest: str
    translation: TranslationConfig = field(default_factory=TranslationConfig)
    segmentation: SegTrainConfig = field(default_factory=SegTrainConfig)
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    cells: List[str] = field(default_factory=lambda: ["DRDG"])
    baseline: bool = True
    figure_tiles: int = 2

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        unknown = [c for c in self.cells if c not in ABLATION_CELLS]
        if unknown:
            raise ConfigError(f"unknown ablation cells {unknown}; known: {list(ABLATION_CELLS)}")

    def resolve_paths(self, base: Path) -> "PipelineConfig":
        fix = lambda p: str((base / p).resolve()) if not os.path.isabs(p) else p  # noqa: E731
        return replace(self, source_manifest=fix(self.source_manifest),
                       target_train_manifest=fix(self.target_train_manifest),
                       target_test_manifest=fix(self.target_test_manifest))


def desk_config(source_manifest, target_train_manifest, target_test_manifest, **overrides) -> PipelineConfig:
    """CPU-sized preset: 1/8-width translators, 2000 stage-1 steps, 30 stage-2 epochs.

    Critics learn at 4x the generator learning rate; at this width and step budget
    the equal-rate critic stays dominated by its gradient penalty.
    """
    kw = dict(
        translation=TranslationConfig(steps=2000, lr_critic=4e-4, network=NetworkSpec(channel_divisor=8)),
        segmentation=SegTrainConfig(epochs=30),
    )
    kw.update(overrides)
    return PipelineConfig(str(source_manifest), str(target_train_manifest), str(target_test_manifest), **kw)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    return load_config(PipelineConfig, path).resolve_paths(path.parent)


def run_directory(cfg: PipelineConfig, run_root: Optional[str | Path] = None) -> Path:
    root = Path(run_root or os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / config_digest(cfg)[:16]


def _run_cell(cfg: PipelineConfig, name: str, seed: int, cell_dir: Path, src_m, tgt_m, test_m,
              src_data: DomainData, tgt_data: DomainData) -> dict:
    dsl_on, dccl_on = ABLATION_CELLS[name]
    tcfg = replace(cfg.translation, seed=seed, enable_dsl=dsl_on, enable_dccl=dccl_on)
    ckpt = train_translation(tcfg, src_m, tgt_m, cell_dir / "translation")
    g_st, _ = load_generators(ckpt)
    g0, _, _, _ = build_drdg(src_m.domain, tgt_m.domain, seed, tcfg.network)
    metrics = {
        "color_distance_source": mean_color_distance(src_data.images, tgt_data.images),
        "color_distance_init": mean_color_distance(translate_images(g0, src_data.images), tgt_data.images),
        "color_distance_final": mean_color_distance(translate_images(g_st, src_data.images), tgt_data.images),
    }
    records = [json.loads(line) for line in (cell_dir / "translation" / "train_log.jsonl").read_text().splitlines()]
    metrics["final_losses"] = records[-1] if records else {}
    metrics["losses_finite"] = bool(all(np.isfinite(v) for r in records for k, v in r.items() if k != "step"))
    translated = translate_dataset(g_st, src_m, cell_dir / "translated")
    model = train_segmentation(replace(cfg.segmentation, seed=seed), translated)
    model.save(cell_dir / "seg" / "model.pt")
    metrics["seg_losses"] = model.losses
    predict_manifest(model, test_m, cell_dir / "pred")
    report, _ = evaluate_predictions(cell_dir / "pred", test_m)
    write_report(report, cell_dir / "eval.json", name)
    (cell_dir / "metrics.json").write_text(json.dumps(metrics, indent=1))
    return {"report": report, "metrics": metrics}


def _run_baseline(cfg: PipelineConfig, seed: int, cell_dir: Path, src_m, test_m) -> dict:
    model = source_only_baseline(replace(cfg.segmentation, seed=seed), src_m, test_m.domain.tile_hw)
    model.save(cell_dir / "seg" / "model.pt")
    predict_manifest(model, test_m, cell_dir / "pred")
    report, _ = evaluate_predictions(cell_dir / "pred", test_m)
    write_report(report, cell_dir / "eval.json", BASELINE)
    metrics = {"seg_losses": model.losses}
    (cell_dir / "metrics.json").write_text(json.dumps(metrics, indent=1))
    return {"report": report, "metrics": metrics}


def run_pipeline(cfg: PipelineConfig, run_root: Optional[str | Path] = None) -> Path:
    """Run every (seed, cell) combination plus the baseline; return the run directory."""
    run_dir = run_directory(cfg, run_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    src_m = read_manifest(cfg.source_manifest)
    tgt_m = read_manifest(cfg.target_train_manifest)
    test_m = read_manifest(cfg.target_test_manifest)
    src_data = DomainData.from_manifest(src_m)
    tgt_data = DomainData.from_manifest(tgt_m)

    names = ([BASELINE] if cfg.baseline else []) + list(cfg.cells)
    results: Dict[str, Dict[int, dict]] = {n: {} for n in names}
    for seed in cfg.seeds:
        for name in names:
            cell_dir = run_dir / f"seed_{seed}" / cell_slug(name)
            log.info("seed %d cell %s", seed, name)
            try:
                if name == BASELINE:
                    results[name][seed] = _run_baseline(cfg, seed, cell_dir, src_m, test_m)
                else:
                    results[name][seed] = _run_cell(cfg, name, seed, cell_dir, src_m, tgt_m, test_m,
                                                    src_data, tgt_data)
            except Exception as e:
                log.error("seed %d cell %s failed: %s", seed, name, e)
                cell_dir.mkdir(parents=True, exist_ok=True)
                (cell_dir / "error.txt").write_text(traceback.format_exc())
                results[name][seed] = {"error": f"{type(e).__name__}: {e}",
                                       "exit_code": getattr(e, "exit_code", 1)}

    summary = {"run_dir": str(run_dir), "seeds": list(cfg.seeds), "cells": {}}
    table_rows: Dict[str, EvalReport] = {}
    for name in names:
        ok = [(s, r["report"]) for s, r in results[name].items() if "report" in r]
        entry = {
            "errors": {str(s): r["error"] for s, r in results[name].items() if "error" in r},
            "exit_codes": {str(s): r["exit_code"] for s, r in results[name].items() if "error" in r},
            "metrics": {str(s): r["metrics"] for s, r in results[name].items() if "metrics" in r},
        }
        if ok:
            agg = aggregate_seeds([r for _, r in ok])
            entry["mean"] = agg.to_dict()
            entry["per_seed_miou"] = {str(s): r.miou for s, r in ok}
            entry["median_miou"] = float(np.median([r.miou for _, r in ok]))
            for s, r in ok:
                table_rows[f"{name} (seed {s})"] = r
            table_rows[f"{name} (mean)"] = agg
        summary["cells"][name] = entry
    (run_dir / "report.json").write_text(json.dumps(summary, indent=1))
    (run_dir / "report.txt").write_text(render_table(table_rows))
    if cfg.figure_tiles > 0:
        try:
            emit_figures(run_dir, cfg.figure_tiles)
        except DRDGError as e:
            log.error("figure generation failed: %s", e)
    write_index(run_dir)
    return run_dir


def write_index(run_dir: Path) -> Path:
    index = run_dir / "index.json"
    files = sorted(p.relative_to(run_dir).as_posix() for p in run_dir.rglob("*") if p.is_file())
    if "index.json" not in files:
        files.append("index.json")
    index.write_text(json.dumps({"files": sorted(files)}, indent=1))
    return index


def _panel_tile(arr: np.ndarray, size: int) -> Image.Image:
    return Image.fromarray(arr).resize((size, size), Image.NEAREST)


def emit_figures(run_dir: str | Path, n_tiles: int = 2, seed: int = 0, tile_px: int = 128) -> List[Path]:
    """Side-by-side panels: target image | ground truth | baseline | one column per cell."""
    run_dir = Path(run_dir)
    cfg = load_config(PipelineConfig, run_dir / "config.yaml")
    test_m = read_manifest(cfg.target_test_manifest)
    cmap = test_m.domain.color_map
    first = cfg.seeds[0]
    columns = ([BASELINE] if cfg.baseline else []) + list(cfg.cells)
    pred_dirs = {c: run_dir / f"seed_{first}" / cell_slug(c) / "pred" for c in columns}
    rng = np.random.default_rng(seed)
    n = min(n_tiles, len(test_m.samples))
    chosen = sorted(rng.choice(len(test_m.samples), size=n, replace=False).tolist())
    out_dir = run_dir / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)
    names = CLASS_NAMES if len(cmap) == len(CLASS_NAMES) else [f"class_{i}" for i in range(len(cmap))]
    legend_h = 18 * len(cmap) + 4
    paths = []
    for i in chosen:
        ref = test_m.samples[i]
        s = ref.load(test_m.domain)
        panels = [denormalize_image(s.image), paint_labels(s.label.data, cmap)]
        for c in columns:
            p = pred_dirs[c] / f"{ref.tile_id}.png"
            if not p.exists():
                raise MissingFileError(f"missing prediction {p} for figure column {c!r}")
            panels.append(paint_labels(read_raster(p), cmap))
        fig = Image.new("RGB", (tile_px * len(panels), tile_px + 16 + legend_h), "white")
        draw = ImageDraw.Draw(fig)
        titles = ["image", "ground truth"] + columns
        for k, (arr, title) in enumerate(zip(panels, titles)):
            fig.paste(_panel_tile(arr, tile_px), (k * tile_px, 16))
            draw.text((k * tile_px + 3, 2), title, fill="black")
        for k, (rgb, idx) in enumerate(cmap):
            y = tile_px + 20 + 18 * k
            draw.rectangle([4, y, 18, y + 14], fill=tuple(rgb), outline="black")
            draw.text((24, y + 1), names[idx], fill="black")
        path = out_dir / f"panel_{ref.tile_id}.png"
        fig.save(path)
        paths.append(path)
    write_index(run_dir)
    return paths
