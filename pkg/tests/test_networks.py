import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from drdg.errors import ConfigError, MissingFileError, SchemaError, ShapeMismatchError
from drdg.networks import (
    CompactSegNet,
    Discriminator,
    GeneratorBundle,
    NetworkSpec,
    build_drdg,
    build_segmenter,
    image_to_tensor,
    load_checkpoint,
    param_checksum,
    resize_bilinear,
    resize_nearest_labels,
    resize_tensor,
    save_checkpoint,
    tensor_to_image,
)

from conftest import TINY_NET


def bilinear_loop(img, oh, ow):
    """Half-pixel-center bilinear resampling of a 2-D list, edges clamped."""
    ih, iw = len(img), len(img[0])
    out = [[0.0] * ow for _ in range(oh)]

    def src(o, n_in, n_out):
        s = (o + 0.5) * n_in / n_out - 0.5
        s = max(s, 0.0)
        i0 = min(int(s), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        return i0, i1, s - i0

    for y in range(oh):
        y0, y1, fy = src(y, ih, oh)
        for x in range(ow):
            x0, x1, fx = src(x, iw, ow)
            top = img[y0][x0] * (1 - fx) + img[y0][x1] * fx
            bot = img[y1][x0] * (1 - fx) + img[y1][x1] * fx
            out[y][x] = top * (1 - fy) + bot * fy
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
def test_resize_matches_loop(ih, iw, oh, ow, seed):
    img = np.random.default_rng(seed).uniform(-1, 1, (ih, iw))
    got = resize_bilinear(img, (oh, ow))
    expect = np.asarray(bilinear_loop(img.tolist(), oh, ow))
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12)


def test_resize_identity_is_exact():
    x = torch.randn(2, 3, 7, 9)
    assert resize_tensor(x, (7, 9)) is x


def test_resize_rejects_empty_target():
    with pytest.raises(ConfigError):
        resize_tensor(torch.zeros(1, 1, 4, 4), (0, 4))


def test_nearest_labels_matches_loop():
    lab = np.arange(7 * 5).reshape(7, 5)
    out = resize_nearest_labels(lab, (4, 3))
    for y in range(4):
        for x in range(3):
            sy = min(int((y + 0.5) * 7 / 4), 6)
            sx = min(int((x + 0.5) * 5 / 3), 4)
            assert out[y, x] == lab[sy, sx]


def test_nearest_labels_preserves_class_set_on_downsample_of_blocks():
    lab = np.kron(np.arange(4).reshape(2, 2), np.ones((8, 8), dtype=np.int64))
    assert set(np.unique(resize_nearest_labels(lab, (4, 4)))) == {0, 1, 2, 3}


@pytest.mark.parametrize("hw_in,hw_out", [((28, 28), (16, 16)), ((16, 16), (28, 28)), ((33, 21), (10, 40))])
def test_generator_geometry(hw_in, hw_out):
    torch.manual_seed(0)
    g = GeneratorBundle(TINY_NET, hw_in, hw_out, "a->b")
    x = torch.rand(2, 3, *hw_in) * 2 - 1
    y, r = g(x)
    assert y.shape == (2, 3, *hw_out)
    assert r.shape == x.shape
    assert y.min() >= -1 and y.max() <= 1
    z = g.depth(x)
    assert z.shape == (2, 1, *hw_in)
    assert z.min() >= 0 and z.max() <= 1


def test_generator_rejects_wrong_geometry():
    g = GeneratorBundle(TINY_NET, (16, 16), (8, 8), "a->b")
    with pytest.raises(ShapeMismatchError):
        g(torch.zeros(1, 3, 17, 16))
    with pytest.raises(ShapeMismatchError):
        g(torch.zeros(1, 1, 16, 16))


def test_zero_residual_equals_plain_resize():
    g = GeneratorBundle(TINY_NET, (28, 28), (16, 16), "a->b").zero_residual_()
    x = torch.rand(2, 3, 28, 28) * 2 - 1
    y, r = g(x)
    assert torch.equal(r, torch.zeros_like(r))
    assert torch.equal(y, resize_tensor(x, (16, 16)))


def test_run_returns_only_requested_heads():
    g = GeneratorBundle(TINY_NET, (16, 16), (8, 8), "a->b")
    y, r, z = g.run(torch.zeros(1, 3, 16, 16), image=False)
    assert y is None and r is None and z.shape == (1, 1, 16, 16)


def test_discriminator_patch_grid():
    d = Discriminator(TINY_NET, (64, 64))
    assert d(torch.zeros(1, 3, 64, 64)).shape == (1, 1, 1, 1)
    with pytest.raises(ShapeMismatchError):
        d(torch.zeros(1, 3, 32, 32))


def test_network_spec_divisor():
    s = NetworkSpec(channel_divisor=8)
    assert s.encoder == (8, 16, 32, 64, 64, 64, 64)
    assert s.discriminator == (8, 16, 32, 64, 64, 1)
    with pytest.raises(ConfigError):
        NetworkSpec(channel_divisor=0)
    with pytest.raises(ConfigError):
        NetworkSpec(discriminator_channels=(8, 2))


def test_build_is_seed_deterministic(tiny_domains):
    src, tgt = tiny_domains
    a = build_drdg(src, tgt, 3, TINY_NET)
    b = build_drdg(src, tgt, 3, TINY_NET)
    c = build_drdg(src, tgt, 4, TINY_NET)
    assert [param_checksum(n) for n in a] == [param_checksum(n) for n in b]
    assert param_checksum(a[0]) != param_checksum(c[0])


def test_build_leaves_global_rng_alone(tiny_domains):
    torch.manual_seed(11)
    expect = torch.rand(3)
    torch.manual_seed(11)
    build_drdg(*tiny_domains, 0, TINY_NET)
    assert torch.equal(torch.rand(3), expect)


def test_compact_segnet_handles_odd_sizes():
    net = CompactSegNet(6, width=4)
    assert net(torch.zeros(2, 3, 30, 17)).shape == (2, 6, 30, 17)


def test_segmenter_registry():
    a = build_segmenter("compact", 6, 4, seed=1)
    b = build_segmenter("compact", 6, 4, seed=1)
    assert param_checksum(a) == param_checksum(b)
    with pytest.raises(ConfigError):
        build_segmenter("unet9000", 6)


def test_checkpoint_round_trip(tmp_path):
    p = save_checkpoint(tmp_path / "c.pt", {"x": torch.arange(3)}, "test/1")
    assert torch.equal(load_checkpoint(p, "test/1")["x"], torch.arange(3))
    with pytest.raises(SchemaError):
        load_checkpoint(p, "test/2")


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_checkpoint(tmp_path / "nope.pt", "test/1")
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(SchemaError):
        load_checkpoint(bad, "test/1")


def test_image_tensor_round_trip(rng):
    a = rng.uniform(-1, 1, (2, 5, 4, 3)).astype(np.float32)
    np.testing.assert_array_equal(tensor_to_image(image_to_tensor(a)), a)


def test_deeplab_backbone_output_geometry():
    pytest.importorskip("torchvision")
    net = build_segmenter("deeplabv3", 6, seed=0).eval()
    with torch.no_grad():
        assert net(torch.zeros(1, 3, 64, 64)).shape == (1, 6, 64, 64)


def test_critic_init_modes(tiny_domains):
    src, tgt = tiny_domains
    with pytest.raises(ConfigError):
        NetworkSpec(critic_init="xavier")
    he = build_drdg(src, tgt, 0, TINY_NET)
    small = build_drdg(src, tgt, 0, NetworkSpec(channel_divisor=16, critic_init="normal"))
    # generators are drawn first and identically in both modes
    assert param_checksum(he[0]) == param_checksum(small[0])
    w_he = next(m for m in he[3].modules() if isinstance(m, torch.nn.Conv2d)).weight
    w_small = next(m for m in small[3].modules() if isinstance(m, torch.nn.Conv2d)).weight
    assert w_small.std().item() == pytest.approx(0.02, rel=0.3)
    assert w_he.std().item() > 5 * w_small.std().item()
