import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drdg.data_model import DomainSpec, ImageTile, LabelTile, SampleTriple
from drdg.errors import ConfigError, MissingFileError, RangeError, ShapeMismatchError
from drdg.evaluation import (
    ConfusionMatrix,
    EvalReport,
    aggregate_seeds,
    evaluate_predictions,
    f1_per_class,
    iou_per_class,
    render_table,
    write_report,
)
from drdg.ingestion import save_samples
from drdg.ingestion.raster import write_band8


def brute_force(pred, gt, c):
    """Per-class IoU and F1 from explicit pixel sets."""
    ious, f1s = [], []
    pixels = list(zip(pred.ravel().tolist(), gt.ravel().tolist()))
    for k in range(c):
        p = {i for i, (a, _) in enumerate(pixels) if a == k}
        g = {i for i, (_, b) in enumerate(pixels) if b == k}
        inter, union = len(p & g), len(p | g)
        ious.append(inter / union if union else 0.0)
        f1s.append(2 * inter / (len(p) + len(g)) if (len(p) + len(g)) else 0.0)
    return ious, f1s


def test_hand_example():
    gt = np.array([[0, 0, 1], [1, 2, 2]])
    pred = np.array([[0, 1, 1], [1, 2, 0]])
    cm = ConfusionMatrix.empty(3).accumulate(pred, gt)
    np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 2, 0], [1, 0, 1]])
    np.testing.assert_allclose(iou_per_class(cm), [1 / 3, 2 / 3, 1 / 2])
    np.testing.assert_allclose(f1_per_class(cm), [1 / 2, 4 / 5, 2 / 3])


def test_absent_class_scores_zero_and_counts_in_mean():
    cm = ConfusionMatrix.empty(3).accumulate(np.zeros((2, 2), int), np.zeros((2, 2), int))
    rep = EvalReport.from_confusion(cm)
    assert rep.iou == [1.0, 0.0, 0.0] and rep.miou == pytest.approx(1 / 3)
    assert rep.class_names == ["class_0", "class_1", "class_2"]


@pytest.mark.parametrize("seed", range(3))
def test_matches_brute_force(seed):
    g = np.random.default_rng(seed)
    for _ in range(30):
        pred, gt = g.integers(0, 6, (8, 8)), g.integers(0, 6, (8, 8))
        cm = ConfusionMatrix.empty(6).accumulate(pred, gt)
        ious, f1s = brute_force(pred, gt, 6)
        assert iou_per_class(cm).tolist() == ious
        assert f1_per_class(cm).tolist() == f1s


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, (5, 5), elements=st.integers(0, 3)), arrays(np.int64, (5, 5), elements=st.integers(0, 3)))
def test_f1_iou_identity(pred, gt):
    cm = ConfusionMatrix.empty(4).accumulate(pred, gt)
    iou, f1 = iou_per_class(cm), f1_per_class(cm)
    np.testing.assert_allclose(f1, 2 * iou / (1 + iou), rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (4, 6), elements=st.integers(0, 2)), arrays(np.int64, (4, 6), elements=st.integers(0, 2)))
def test_accumulation_is_additive(pred, gt):
    whole = ConfusionMatrix.empty(3).accumulate(pred, gt)
    top = ConfusionMatrix.empty(3).accumulate(pred[:2], gt[:2])
    bottom = ConfusionMatrix.empty(3).accumulate(pred[2:], gt[2:])
    np.testing.assert_array_equal((top + bottom).counts, whole.counts)
    assert whole.total == pred.size


def test_mask_restricts_pixels():
    pred = np.array([[0, 1]])
    gt = np.array([[0, 0]])
    cm = ConfusionMatrix.empty(2).accumulate(pred, gt, mask=np.array([[True, False]]))
    np.testing.assert_array_equal(cm.counts, [[1, 0], [0, 0]])


def test_accumulate_errors():
    cm = ConfusionMatrix.empty(3)
    with pytest.raises(ShapeMismatchError):
        cm.accumulate(np.zeros((2, 2), int), np.zeros((2, 3), int))
    with pytest.raises(RangeError):
        cm.accumulate(np.full((2, 2), 3), np.zeros((2, 2), int))
    with pytest.raises(ConfigError):
        cm.merge(ConfusionMatrix.empty(4))


def test_accepts_label_tiles():
    cm = ConfusionMatrix.empty(2).accumulate(LabelTile(np.eye(2, dtype=np.int64)), LabelTile(np.eye(2, dtype=np.int64)))
    assert iou_per_class(cm).tolist() == [1.0, 1.0]


def test_aggregate_and_render():
    a = EvalReport([0.5, 1.0], [0.6, 1.0], 0.75, 0.8, class_names=["x", "y"])
    b = EvalReport([0.7, 0.0], [0.8, 0.0], 0.35, 0.4, class_names=["x", "y"])
    m = aggregate_seeds([a, b])
    assert m.iou == pytest.approx([0.6, 0.5]) and m.miou == pytest.approx(0.55)
    assert len(m.per_seed) == 2 and m.per_seed[1]["miou"] == 0.35
    table = render_table({"a": a, "mean": m})
    lines = table.strip().split("\n")
    assert lines[0].split("\t") == ["method", "x:IoU", "x:F1", "y:IoU", "y:F1", "mIoU", "meanF1"]
    assert lines[2].split("\t")[-2] == "55.00"
    with pytest.raises(ConfigError):
        aggregate_seeds([])
    with pytest.raises(ConfigError):
        aggregate_seeds([a, EvalReport([1.0], [1.0], 1.0, 1.0)])


def test_report_round_trip(tmp_path):
    r = EvalReport([0.1] * 6, [0.2] * 6, 0.1, 0.2)
    p = write_report(r, tmp_path / "r.json")
    import json
    assert EvalReport.from_dict(json.loads(p.read_text())) == r
    assert p.with_suffix(".txt").exists()


def test_overlapping_tiles_counted_once(tmp_path):
    # 1 x 6 scene cut into tiles at columns 0 and 2 (width 4): columns 2-3 overlap
    dom = DomainSpec("t", 1, 4, class_count=2)
    gt_scene = np.array([[0, 0, 1, 1, 1, 0]])
    samples = []
    for c in (0, 2):
        samples.append(SampleTriple(ImageTile(np.zeros((1, 4, 3))), dom, f"s_c{c}",
                                    LabelTile(gt_scene[:, c: c + 4]), scene_id="s",
                                    offset=(0, c), scene_hw=(1, 6)))
    m, _ = save_samples(samples, tmp_path / "gt", "test", dom)
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    # first tile predicts perfectly; second tile is wrong on the overlap and right elsewhere
    write_band8(pred_dir / "s_c0.png", np.array([[0, 0, 1, 1]]))
    write_band8(pred_dir / "s_c2.png", np.array([[0, 0, 1, 0]]))
    rep, cm = evaluate_predictions(pred_dir, m)
    assert cm.total == 6
    np.testing.assert_array_equal(cm.counts, [[3, 0], [0, 3]])
    (pred_dir / "s_c2.png").unlink()
    with pytest.raises(MissingFileError):
        evaluate_predictions(pred_dir, m)
