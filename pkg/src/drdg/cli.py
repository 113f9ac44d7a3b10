"""Command-line entry point: ``drdg <subcommand> ...``.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from drdg.config import load_config
from drdg.errors import DRDGError
from drdg.evaluation import evaluate_predictions, write_report
from drdg.ingestion import IngestConfig, SynthConfig, build_synthetic_dataset, ingest_scenes, read_manifest
from drdg.pipeline import emit_figures, load_pipeline_config, run_pipeline
from drdg.segmentation import SegModel, SegTrainConfig, predict_manifest, train_segmentation
from drdg.translation import TranslationConfig, load_generators, train_translation, translate_dataset

log = logging.getLogger("drdg")


def cmd_synth(args) -> int:
    cfg = load_config(SynthConfig, args.config) if args.config else SynthConfig()
    n_target = args.target_scenes if args.target_scenes is not None else args.scenes
    build_synthetic_dataset(args.out, args.scenes, n_target, args.test_scenes, cfg, ingest=args.ingest)
    for which in ("source", "target"):
        print(f"{which}: {Path(args.out) / which}")
    return 0


def cmd_ingest(args) -> int:
    cfg = load_config(IngestConfig, args.domain)
    paths = ingest_scenes(args.scenes, cfg, args.out)
    for split, p in paths.items():
        print(f"{split}: {p}")
    return 0


def cmd_train_translate(args) -> int:
    cfg = load_config(TranslationConfig, args.config) if args.config else TranslationConfig()
    ckpt = train_translation(cfg, read_manifest(args.source), read_manifest(args.target), args.out)
    print(ckpt)
    return 0


def cmd_translate(args) -> int:
    g_st, _ = load_generators(args.checkpoint)
    m = translate_dataset(g_st, read_manifest(args.source), args.out)
    print(f"{len(m)} tiles -> {Path(args.out) / 'translated.json'}")
    return 0


def cmd_train_seg(args) -> int:
    cfg = load_config(SegTrainConfig, args.config) if args.config else SegTrainConfig()
    model = train_segmentation(cfg, read_manifest(args.data))
    out = Path(args.out)
    path = model.save(out / "model.pt")
    (out / "losses.json").write_text(json.dumps(model.losses))
    print(path)
    return 0


def cmd_predict(args) -> int:
    model = SegModel.load(args.checkpoint)
    paths = predict_manifest(model, read_manifest(args.data), args.out)
    print(f"{len(paths)} label rasters -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    report, _ = evaluate_predictions(args.pred, read_manifest(args.gt))
    path = write_report(report, args.out)
    print(path.with_suffix(".txt").read_text(), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_pipeline_config(args.config)
    run_dir = run_pipeline(cfg, args.run_root)
    summary = json.loads((run_dir / "report.json").read_text())
    print(run_dir)
    print((run_dir / "report.txt").read_text(), end="")
    codes = [c for cell in summary["cells"].values() for c in cell["exit_codes"].values()]
    return max(codes) if codes else 0


def cmd_figures(args) -> int:
    for p in emit_figures(args.run, args.tiles, args.seed):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drdg", description="Depth-assisted residual GAN domain adaptation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic source/target scenes")
    p.add_argument("--config", help="SynthConfig YAML (defaults if omitted)")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--target-scenes", type=int, default=None)
    p.add_argument("--test-scenes", type=int, default=3, help="target scenes held out as the test split")
    p.add_argument("--ingest", action="store_true", help="also tile scenes into <out>/<domain>/data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="tile scenes into a dataset with manifests")
    p.add_argument("--scenes", required=True)
    p.add_argument("--domain", required=True, help="IngestConfig YAML")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-translate", help="stage 1: train the translators")
    p.add_argument("--config")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_translate)

    p = sub.add_parser("translate", help="translate a source manifest with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("train-seg", help="stage 2: train the segmentation model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("predict", help="write label rasters for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a labelled manifest")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run all seeds x ablation cells end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--run-root", default=None, help="overrides $DRDG_RUN_ROOT")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("figures", help="render qualitative panels for a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--tiles", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_figures)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except DRDGError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
