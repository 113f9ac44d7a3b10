#!/usr/bin/env python3
"""How the source-only baseline degrades as the target palette drifts further.

Interpolates the affine color transform between identity (alpha=0) and the
default shift (alpha=1) and reports baseline target mIoU for each step. No
translation is trained, so this runs in a few minutes.
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from drdg.evaluation import evaluate_predictions
from drdg.ingestion import SynthConfig, build_synthetic_dataset, read_manifest
from drdg.ingestion.synthetic import SOURCE_PALETTE
from drdg.segmentation import SegTrainConfig, predict_manifest, source_only_baseline

DEFAULT_MIX = np.array([[0.0, 0.9, 0.0], [0.75, 0.0, 0.0], [0.0, 0.0, 0.8]])
DEFAULT_OFFSET = np.array([20.0, 0.0, 15.0])


def palette_at(alpha):
    m = (1 - alpha) * np.eye(3) + alpha * DEFAULT_MIX
    b = alpha * DEFAULT_OFFSET
    out = np.clip(np.rint(np.asarray(SOURCE_PALETTE, float) @ m.T + b), 0, 255).astype(int)
    return tuple(tuple(int(v) for v in row) for row in out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/palette_sweep")
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.1, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    seg = SegTrainConfig(epochs=args.epochs)
    for alpha in args.alphas:
        root = Path(args.out) / f"alpha_{alpha:.2f}"
        cfg = replace(SynthConfig(), target_palette=palette_at(alpha))
        paths = build_synthetic_dataset(root, 10, 13, 3, cfg)
        test = read_manifest(paths["target"]["test"])
        model = source_only_baseline(seg, read_manifest(paths["source"]["train"]), test.domain.tile_hw)
        predict_manifest(model, test, root / "pred")
        report, _ = evaluate_predictions(root / "pred", test)
        print(f"alpha {alpha:.2f}: baseline mIoU {100 * report.miou:.2f}")


if __name__ == "__main__":
    main()
