from dataclasses import replace

import numpy as np
import pytest
import torch

from drdg.data_model import ImageTile
from drdg.errors import ConfigError, DataError, ShapeMismatchError
from drdg.ingestion.raster import read_raster
from drdg.segmentation import (
    SegModel,
    SegTrainConfig,
    argmax_labels,
    fit_segmenter,
    predict,
    predict_manifest,
    source_only_baseline,
    train_segmentation,
)

CFG = SegTrainConfig(width=4, epochs=2, batch_size=4, seed=0)


def test_argmax_ties_go_to_lower_index():
    s = np.zeros((1, 3, 1, 2))
    s[0, 1, 0, 1] = s[0, 2, 0, 1] = 1.0
    np.testing.assert_array_equal(argmax_labels(s), [[[0, 1]]])
    np.testing.assert_array_equal(argmax_labels(torch.from_numpy(s)), [[[0, 1]]])


def test_fit_learns_a_trivial_mapping():
    # class = 1 where the red channel is bright
    g = torch.Generator().manual_seed(0)
    x = torch.rand(16, 3, 8, 8, generator=g) * 2 - 1
    y = (x[:, 0] > 0).long()
    model = fit_segmenter(replace(CFG, epochs=40, lr=5e-3), x, y, 2)
    acc = (torch.from_numpy(argmax_labels(model.scores(x))) == y).float().mean().item()
    assert acc > 0.95
    assert model.losses[-1] < model.losses[0]


def test_fit_is_deterministic():
    x = torch.rand(6, 3, 8, 8) * 2 - 1
    y = (x[:, 1] > 0).long()
    a = fit_segmenter(CFG, x, y, 2)
    b = fit_segmenter(CFG, x, y, 2)
    assert a.losses == b.losses
    assert torch.equal(a.scores(x), b.scores(x))


def test_fit_requires_samples():
    with pytest.raises(DataError):
        fit_segmenter(CFG, torch.zeros(0, 3, 4, 4), torch.zeros(0, 4, 4, dtype=torch.long), 2)


def test_train_requires_labels(small_dataset):
    with pytest.raises(DataError):
        train_segmentation(CFG, small_dataset["target"])


def test_train_save_load_predict(tmp_path, small_dataset):
    model = train_segmentation(replace(CFG, epochs=1), small_dataset["source"])
    assert model.hw == (112, 112) and len(model.losses) == 1
    p = model.save(tmp_path / "m.pt")
    back = SegModel.load(p)
    x = torch.zeros(1, 3, 112, 112)
    assert torch.equal(back.scores(x), model.scores(x))
    with pytest.raises(ShapeMismatchError):
        model.scores(torch.zeros(1, 3, 64, 64))
    (lab,) = predict(model, [ImageTile(np.zeros((112, 112, 3)))])
    assert lab.hw == (112, 112)
    assert predict(model, []) == []


def test_baseline_trains_at_target_geometry(tmp_path, small_dataset):
    model = source_only_baseline(replace(CFG, epochs=1), small_dataset["source"], (64, 64))
    assert model.hw == (64, 64)
    paths = predict_manifest(model, small_dataset["test"], tmp_path / "pred")
    assert len(paths) == len(small_dataset["test"])
    arr = read_raster(paths[0])
    assert arr.shape == (64, 64) and arr.max() < 6


def test_config_validation():
    with pytest.raises(ConfigError):
        SegTrainConfig(backbone="nope")
    with pytest.raises(ConfigError):
        SegTrainConfig(lr=0)
