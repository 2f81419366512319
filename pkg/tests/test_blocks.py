import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detbench.blocks import (
    C2PSA,
    PAD_K2,
    ConvSpec,
    DetectHead,
    FeaturePyramid,
    ToyYOLO11,
    c2psa_forward,
    c3k2_forward,
    conv2d,
    decode_level,
    max_pool_same,
    neck_aggregate,
    nms,
    postprocess,
    save_weights,
    load_weights,
    sigmoid,
    sppf_forward,
    upsample2x,
)
from detbench.exceptions import ChannelMismatch, DecodeError, OddChannels, ShapeMismatch, TooSmall

from oracles import naive_conv2d


def rand(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


# -- conv ----------------------------------------------------------------------

def test_stem_halves():
    rng = np.random.default_rng(0)
    x = np.zeros((1, 3, 416, 416))
    y = conv2d(x, ConvSpec.seeded(rng, 3, 64, 3, 2, 1))
    assert y.shape == (1, 64, 208, 208)
    z = conv2d(y, ConvSpec.seeded(rng, 64, 128, 3, 2, 1))
    assert z.shape == (1, 128, 104, 104)


def test_identity_conv():
    x = rand(1, 1, 3, 3)
    spec = ConvSpec(1, 1, 1, activation="linear", weight=np.ones((1, 1, 1, 1), np.float32))
    assert np.array_equal(conv2d(x, spec), x)


def test_conv_channel_mismatch():
    with pytest.raises(ChannelMismatch):
        conv2d(np.zeros((1, 2, 4, 4)), ConvSpec(3, 1, 1))
    with pytest.raises(TooSmall):
        conv2d(np.zeros((1, 1, 2, 2)), ConvSpec(1, 1, 3))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.sampled_from([1, 2]),
       st.sampled_from([0, 1, (0, 1, 0, 1)]))
def test_conv_matches_naive_oracle(seed, k, stride, pad):
    rng = np.random.default_rng(seed)
    spec = ConvSpec.seeded(rng, 2, 3, k, stride, pad, activation="linear")
    spec.bias = rng.normal(size=3).astype(np.float32)
    x = rng.normal(size=(1, 2, 5, 5))
    ref = naive_conv2d(x, spec.weight, spec.bias, stride, spec.pads)
    assert np.allclose(conv2d(x, spec), ref, atol=1e-5)


@settings(max_examples=25)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3, 5]))
def test_maxpool_dominance_and_shape(h, w, k):
    x = rand(1, 2, h, w, seed=h * 10 + w)
    y = max_pool_same(x, k)
    assert y.shape == x.shape and np.all(y >= x)


# -- C3k2 ----------------------------------------------------------------------

def test_c3k2_contract():
    x = rand(1, 64, 32, 32)
    assert c3k2_forward(x).shape == (1, 64, 32, 32)
    assert c3k2_forward(x, out_channels=32).shape == (1, 32, 32, 32)
    assert np.array_equal(c3k2_forward(np.zeros((1, 64, 8, 8))), np.zeros((1, 64, 8, 8)))
    assert np.array_equal(c3k2_forward(x, seed=4), c3k2_forward(x, seed=4))
    with pytest.raises(OddChannels):
        c3k2_forward(rand(1, 3, 4, 4))


@settings(max_examples=20)
@given(st.sampled_from([2, 4, 6, 8]), st.integers(1, 12), st.integers(1, 12), st.integers(0, 3))
def test_c3k2_shape_property(c, h, w, n):
    assert c3k2_forward(rand(1, c, h, w), n_bottlenecks=n).shape == (1, c, h, w)


def test_k2_padding_is_bottom_right():
    assert PAD_K2 == (0, 1, 0, 1)
    spec = ConvSpec(1, 1, 2, padding=PAD_K2, activation="linear", weight=np.ones((1, 1, 2, 2), np.float32))
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    y = conv2d(x, spec)
    assert y.shape == x.shape
    assert y[0, 0, 2, 2] == 8.0 and y[0, 0, 0, 0] == 0 + 1 + 3 + 4


# -- SPPF ----------------------------------------------------------------------

def test_sppf_contract():
    x = rand(1, 8, 16, 16)
    y = sppf_forward(x)
    assert y.shape == (1, 24, 16, 16)
    assert np.array_equal(y[:, 16:], x)
    c = np.full((1, 4, 7, 7), 3.25)
    assert np.all(sppf_forward(c) == 3.25)
    with pytest.raises(TooSmall):
        sppf_forward(rand(1, 1, 4, 8))


# -- C2PSA ---------------------------------------------------------------------

def test_c2psa_contract():
    x = rand(1, 64, 20, 20)
    assert c2psa_forward(x).shape == (1, 64, 20, 20)
    with pytest.raises(OddChannels):
        c2psa_forward(rand(1, 5, 4, 4))


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_c2psa_attention_range_and_damping(seed):
    block = C2PSA(8, np.random.default_rng(seed))
    z = block.paths(rand(1, 8, 6, 6, seed=seed % 1000) * 5)
    a = block.attention(z)
    assert a.shape == (1, 1, 6, 6) and np.all((a >= 0) & (a <= 1))
    assert np.all(np.abs(a * z) <= np.abs(z))


def test_c2psa_saturated_attention_equals_ablation():
    block = C2PSA(16, np.random.default_rng(2))
    block.attn.weight[:] = 0
    block.attn.bias[:] = 1e3
    x = rand(2, 16, 9, 9)
    assert np.all(block.attention(block.paths(x)) == 1.0)
    assert np.array_equal(block(x), block(x, use_attention=False))


# -- neck ----------------------------------------------------------------------

def test_upsample_and_merge():
    p5 = rand(1, 64, 13, 13)
    up = upsample2x(p5)
    assert up.shape == (1, 64, 26, 26)
    assert np.array_equal(up[:, :, ::2, ::2], p5) and np.array_equal(up[:, :, 1::2, 1::2], p5)
    from detbench.blocks import Neck
    merged = Neck.merge(p5, rand(1, 32, 26, 26))
    assert merged.shape[1] == 96
    with pytest.raises(ShapeMismatch):
        Neck.merge(p5, rand(1, 32, 25, 25))


def test_pyramid_must_halve():
    with pytest.raises(ShapeMismatch):
        FeaturePyramid(rand(1, 4, 8, 8), rand(1, 4, 4, 4), rand(1, 4, 3, 3))


def test_neck_aggregate_channels():
    p = FeaturePyramid(rand(1, 16, 8, 8), rand(1, 32, 4, 4), rand(1, 64, 2, 2))
    out = neck_aggregate(p)
    assert [a.shape for a in out.levels()] == [(1, 16, 8, 8), (1, 32, 4, 4), (1, 64, 2, 2)]


def test_full_pipeline_dims_on_416_zero_image():
    model = ToyYOLO11()
    feats = model.features(np.zeros((1, 3, 416, 416)))
    assert [a.shape[2:] for a in feats.levels()] == [(52, 52), (26, 26), (13, 13)]


# -- head ----------------------------------------------------------------------

def test_decode_example():
    raw = np.full((4 + 2, 5, 5), -20.0)
    raw[:4] = 0
    raw[:4, 2, 2] = 1.0          # one stride unit = 8 px
    raw[4, 2, 2] = 5.0
    boxes, scores = decode_level(raw, 8, 2)
    k = 2 * 5 + 2
    assert boxes[k].tolist() == [12, 12, 28, 28]
    dets = postprocess([raw], [8], 2, 0.25, 0.45)
    assert len(dets) == 1 and (dets[0].x_min, dets[0].y_max, dets[0].class_id) == (12, 28, 0)
    assert dets[0].confidence == pytest.approx(sigmoid(np.array([5.0]))[0])


def test_negative_distances_clip_to_point():
    raw = np.zeros((5, 1, 1))
    raw[:4] = -3
    boxes, _ = decode_level(raw, 16, 1)
    assert boxes[0].tolist() == [8, 8, 8, 8]


def test_nms_examples():
    b = np.array([[0, 0, 10, 10], [0, 0, 10, 10], [50, 50, 60, 60]], float)
    assert nms(b, np.array([0.8, 0.9, 0.3]), 0.5) == [1, 2]
    assert nms(b[:2], np.array([0.9, 0.8]), 0.5) == [0]


def test_vacuous_head_emits_nothing():
    p = FeaturePyramid(np.zeros((1, 8, 4, 4)), np.zeros((1, 8, 2, 2)), np.zeros((1, 8, 1, 1)))
    head = DetectHead((8, 8, 8), 5, np.random.default_rng(0), score_bias=-10.0)
    for h in head.heads:
        h.weight[:] = 0
    assert head(p, 0.25, 0.45) == [[]]


def test_model_determinism_and_weight_round_trip(tmp_path):
    x = np.random.default_rng(1).random((1, 3, 160, 160))
    a = ToyYOLO11(widths=(8, 8, 16, 16, 32), seed=3)
    b = ToyYOLO11(widths=(8, 8, 16, 16, 32), seed=3)
    low = 0.01
    da, db = a(x, low, 0.45), b(x, low, 0.45)
    assert da == db and len(da[0]) > 0
    path = tmp_path / "w.dbwt"
    save_weights(path, a.state_dict())
    c = ToyYOLO11(widths=(8, 8, 16, 16, 32), seed=99)
    c.load_state_dict(load_weights(path))
    assert c(x, low, 0.45) == da
    for d in da[0]:
        assert 0 <= d.x_min <= d.x_max <= 160 and 0 <= d.y_min <= d.y_max <= 160


def test_dbwt_format(tmp_path):
    path = tmp_path / "t.dbwt"
    t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b.bias": np.array([1.5], np.float32)}
    save_weights(path, t)
    raw = path.read_bytes()
    assert raw[:4] == b"DBWT" and raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:12] == (1).to_bytes(4, "little") and raw[12:13] == b"a"
    back = load_weights(path)
    assert set(back) == set(t) and all(np.array_equal(back[k], t[k]) for k in t)
    path.write_bytes(raw[:-2])
    with pytest.raises(DecodeError):
        load_weights(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DecodeError):
        load_weights(path)


def test_model_rejects_too_small_input():
    with pytest.raises(TooSmall):
        ToyYOLO11(widths=(8, 8, 16, 16, 32))(np.zeros((1, 3, 64, 64)))
