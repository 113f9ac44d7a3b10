import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from drdg.errors import ConfigError, DataError, ShapeMismatchError
from drdg.losses import (
    COMPONENTS,
    LossReport,
    LossWeights,
    berhu,
    critic_loss,
    cycle_loss,
    depth_consistency,
    gen_adv_loss,
    gradient_penalty,
    is_finite,
    seg_cross_entropy,
    total_loss,
    weighted_total,
)


# -- scalar-loop oracles -----------------------------------------------------

def berhu_loop(pred, gt):
    d = [abs(p - g) for p, g in zip(pred, gt)]
    thr = 0.2 * max(d)
    out = 0.0
    for v in d:
        out += v if v <= thr else (v * v + thr * thr) / (2 * thr)
    return out / len(d)


def cycle_loop(a, b):
    return sum(abs(x - y) for x, y in zip(a, b)) / len(a)


def ce_loop(scores, labels):
    """scores[n][c][h][w], labels[n][h][w]; mean of -log softmax at the true class."""
    total, count = 0.0, 0
    for n in range(len(scores)):
        for i in range(len(labels[n])):
            for j in range(len(labels[n][i])):
                logits = [scores[n][c][i][j] for c in range(len(scores[n]))]
                m = max(logits)
                lse = m + math.log(sum(math.exp(v - m) for v in logits))
                total += lse - logits[labels[n][i][j]]
                count += 1
    return total / count


def mean_loop(xs):
    return sum(xs) / len(xs)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


def _t(a):
    return torch.tensor(np.asarray(a), dtype=torch.float64)


# -- worked values -----------------------------------------------------------

def test_berhu_worked_example():
    assert berhu(_t([0.5, 0.0]), _t([0.0, 0.0])).item() == pytest.approx(0.65, rel=1e-12)


def test_uniform_cross_entropy_is_log_six():
    scores = torch.zeros(2, 6, 8, 8, dtype=torch.float64)
    label = torch.randint(0, 6, (2, 8, 8))
    assert seg_cross_entropy(scores, label).item() == pytest.approx(math.log(6), rel=1e-12)
    assert math.log(6) == pytest.approx(1.791759, abs=5e-7)


def test_berhu_zero_residual_is_zero():
    z = torch.rand(2, 1, 4, 4, dtype=torch.float64)
    out = berhu(z, z.clone())
    assert out.item() == 0.0


def test_berhu_zero_residual_gradient_is_finite():
    z = torch.rand(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
    berhu(z, z.detach().clone()).backward()
    assert torch.isfinite(z.grad).all()


# -- oracle agreement on random 8x8 inputs ----------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_berhu_matches_loop(seed):
    g = np.random.default_rng(seed)
    pred, gt = g.random((8, 8)), g.random((8, 8))
    got = berhu(_t(pred), _t(gt)).item()
    assert rel(got, berhu_loop(pred.ravel().tolist(), gt.ravel().tolist())) <= 1e-6


def test_berhu_per_image_threshold():
    g = np.random.default_rng(3)
    pred, gt = g.random((3, 1, 8, 8)), g.random((3, 1, 8, 8))
    per = berhu(_t(pred), _t(gt), per_image=True).item()
    expect = mean_loop([berhu_loop(pred[i].ravel().tolist(), gt[i].ravel().tolist()) for i in range(3)])
    assert rel(per, expect) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_cycle_matches_loop(seed):
    g = np.random.default_rng(seed)
    a, b = g.uniform(-1, 1, (1, 3, 8, 8)), g.uniform(-1, 1, (1, 3, 8, 8))
    got = cycle_loss(_t(a), _t(b)).item()
    assert rel(got, cycle_loop(a.ravel().tolist(), b.ravel().tolist())) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_matches_loop(seed):
    g = np.random.default_rng(seed)
    scores = g.normal(size=(2, 6, 8, 8)) * 3
    labels = g.integers(0, 6, (2, 8, 8))
    got = seg_cross_entropy(_t(scores), torch.from_numpy(labels)).item()
    assert rel(got, ce_loop(scores.tolist(), labels.tolist())) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_adversarial_losses_match_loop(seed):
    g = np.random.default_rng(seed)
    real, fake = g.normal(size=(1, 1, 8, 8)), g.normal(size=(1, 1, 8, 8))
    r, f = real.ravel().tolist(), fake.ravel().tolist()
    assert rel(gen_adv_loss(_t(fake)).item(), -mean_loop(f)) <= 1e-6
    assert rel(critic_loss(_t(real), _t(fake)).item(), mean_loop(f) - mean_loop(r)) <= 1e-6
    with_gp = critic_loss(_t(real), _t(fake), penalty=torch.tensor(0.3, dtype=torch.float64), gp_weight=10.0)
    assert rel(with_gp.item(), mean_loop(f) - mean_loop(r) + 3.0) <= 1e-6


# -- gradient penalty --------------------------------------------------------

def test_gradient_penalty_of_linear_critic():
    # critic(x) = sum(w * x) has input gradient w everywhere: penalty = (|w| - 1)^2
    w = torch.full((1, 3, 4, 4), 0.5, dtype=torch.float64)
    critic = lambda x: (x * w).flatten(1).sum(1)  # noqa: E731
    real = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    fake = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    gp = gradient_penalty(critic, real, fake, torch.Generator().manual_seed(0))
    assert gp.item() == pytest.approx((0.5 * math.sqrt(48) - 1) ** 2, rel=1e-12)


def test_gradient_penalty_reaches_critic_parameters():
    conv = torch.nn.Conv2d(3, 1, 3, padding=1).double()
    real = torch.randn(2, 3, 6, 6, dtype=torch.float64)
    fake = torch.randn(2, 3, 6, 6, dtype=torch.float64)
    gradient_penalty(conv, real, fake).backward()
    assert conv.weight.grad is not None and conv.weight.grad.abs().sum() > 0


# -- weighted total ----------------------------------------------------------

def test_total_of_unit_components_is_36():
    comps = {c: 1.0 for c in COMPONENTS}
    assert weighted_total(comps, LossWeights()) == 36.0
    rep = total_loss(comps, LossWeights())
    assert rep.total == 36.0 and rep.recompute_total(LossWeights()) == 36.0


def test_total_missing_component_raises():
    comps = {c: 1.0 for c in COMPONENTS if c != "dccl_ts"}
    with pytest.raises(ConfigError):
        weighted_total(comps, LossWeights())


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(lambda_cyc=-1.0)


def test_loss_report_record_round_trip():
    import json
    rep = LossReport(*[float(i) for i in range(8)], total=3.5)
    rec = json.loads(rep.to_record(7, critic_t=0.1))
    assert rec["step"] == 7 and rec["dsl_t"] == 5.0 and rec["critic_t"] == 0.1


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=8, max_size=8),
       st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_total_is_linear_in_weights(vals, a, c, d, e):
    comps = dict(zip(COMPONENTS, vals))
    w = LossWeights(a, c, d, e)
    expect = a * (vals[0] + vals[1]) + c * (vals[2] + vals[3]) + d * (vals[4] + vals[5]) + e * (vals[6] + vals[7])
    assert weighted_total(comps, w) == pytest.approx(expect, rel=1e-12, abs=1e-12)


# -- berhu properties --------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=30))
def test_berhu_bounds(diffs):
    d = torch.tensor(diffs, dtype=torch.float64)
    out = berhu(d, torch.zeros_like(d)).item()
    a = d.abs()
    # elementwise berhu(d) >= |d|, and it never exceeds the pure quadratic branch by more than L/2
    assert out >= a.mean().item() - 1e-12
    thr = 0.2 * a.max().item()
    if thr > 0:
        assert out <= ((a * a + thr * thr) / (2 * thr)).mean().item() + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=20))
def test_berhu_is_positively_homogeneous(scale, diffs):
    d = torch.tensor(diffs, dtype=torch.float64)
    z = torch.zeros_like(d)
    assert berhu(scale * d, z).item() == pytest.approx(scale * berhu(d, z).item(), rel=1e-9, abs=1e-12)


def test_berhu_continuity_at_threshold():
    # the largest residual fixes L = 0.2 * max; place one residual exactly at L
    d = torch.tensor([1.0, 0.2], dtype=torch.float64)
    thr = 0.2
    lin = thr
    quad = (thr * thr + thr * thr) / (2 * thr)
    assert abs(lin - quad) <= 1e-9
    assert berhu(d, torch.zeros_like(d)).item() == pytest.approx(((1 + 0.04) / 0.4 + 0.2) / 2, rel=1e-12)


# -- shape and value checks --------------------------------------------------

def test_shape_mismatch_raises():
    with pytest.raises(ShapeMismatchError):
        berhu(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))
    with pytest.raises(ShapeMismatchError):
        cycle_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 2, 2))
    with pytest.raises(ShapeMismatchError):
        seg_cross_entropy(torch.zeros(1, 6, 4, 4), torch.zeros(1, 4, 5, dtype=torch.long))


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(DataError):
        seg_cross_entropy(torch.zeros(1, 6, 2, 2), torch.full((1, 2, 2), 6, dtype=torch.long))


def test_depth_consistency_resizes_prediction():
    z_src = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    big = torch.nn.functional.interpolate(z_src, size=(16, 16), mode="nearest")
    # nearest 2x upsampling followed by bilinear half-pixel downsampling is the identity
    assert depth_consistency(big, z_src).item() == pytest.approx(0.0, abs=1e-12)


def test_is_finite():
    assert is_finite(torch.tensor(1.0, requires_grad=True))
    assert not is_finite(torch.tensor(float("nan")))
    assert not is_finite(float("inf"))
