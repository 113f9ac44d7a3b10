import json

import pytest

from drdg.cli import build_parser, main
from drdg.config import dump_config
from drdg.segmentation import SegTrainConfig
from drdg.translation import TranslationConfig

from conftest import TINY_NET


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    for cmd in ("synth", "ingest", "train-translate", "translate", "train-seg", "predict", "eval", "pipeline", "figures"):
        assert cmd in out


def test_stage_by_stage(tmp_path, capsys):
    d = tmp_path
    assert main(["synth", "--scenes", "2", "--target-scenes", "3", "--test-scenes", "1", "--out", str(d / "syn")]) == 0
    for which in ("source", "target"):
        assert main(["ingest", "--scenes", str(d / "syn" / which / "scenes"),
                     "--domain", str(d / "syn" / which / "domain.yaml"), "--out", str(d / which)]) == 0
    tcfg = dump_config(TranslationConfig(steps=2, network=TINY_NET), d / "t.yaml")
    scfg = dump_config(SegTrainConfig(width=4, epochs=1), d / "s.yaml")
    assert main(["train-translate", "--config", str(tcfg), "--source", str(d / "source" / "train.json"),
                 "--target", str(d / "target" / "train.json"), "--out", str(d / "tr")]) == 0
    assert main(["translate", "--checkpoint", str(d / "tr" / "final.pt"),
                 "--source", str(d / "source" / "train.json"), "--out", str(d / "xl")]) == 0
    assert main(["train-seg", "--config", str(scfg), "--data", str(d / "xl" / "translated.json"),
                 "--out", str(d / "seg")]) == 0
    assert main(["predict", "--checkpoint", str(d / "seg" / "model.pt"),
                 "--data", str(d / "target" / "test.json"), "--out", str(d / "pred")]) == 0
    assert main(["eval", "--pred", str(d / "pred"), "--gt", str(d / "target" / "test.json"),
                 "--out", str(d / "eval.json")]) == 0
    rep = json.loads((d / "eval.json").read_text())
    assert len(rep["iou"]) == 6
    assert "mIoU" in capsys.readouterr().out


def test_pipeline_command(tmp_path, small_dataset, capsys):
    from drdg.pipeline import PipelineConfig
    p = small_dataset["paths"]
    cfg = PipelineConfig(str(p["source"]["train"]), str(p["target"]["train"]), str(p["target"]["test"]),
                         TranslationConfig(steps=1, network=TINY_NET), SegTrainConfig(width=4, epochs=1),
                         seeds=[0], figure_tiles=1)
    path = dump_config(cfg, tmp_path / "pipe.yaml")
    assert main(["pipeline", "--config", str(path), "--run-root", str(tmp_path / "runs")]) == 0
    run = next((tmp_path / "runs").iterdir())
    assert main(["figures", "--run", str(run), "--tiles", "1"]) == 0
    assert (run / "report.json").exists()


def test_exit_codes(tmp_path, capsys):
    assert main(["train-translate", "--config", str(tmp_path / "none.yaml"), "--source", "a", "--target", "b",
                 "--out", str(tmp_path)]) == 2
    assert main(["train-seg", "--data", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nbogus: 1\n")
    assert main(["train-seg", "--config", str(bad), "--data", "x", "--out", str(tmp_path)]) == 2
    assert main(["synth", "--scenes", "1", "--target-scenes", "1", "--test-scenes", "1",
                 "--out", str(tmp_path / "s")]) == 2
    assert "error:" in capsys.readouterr().err
