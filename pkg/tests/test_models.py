import numpy as np
import pytest

import chanshuffle.models as models
from chanshuffle.autodiff import Tensor, conv2d, finite_diff_check, softmax_cross_entropy_masked
from chanshuffle.errors import (
    BadMagic,
    CorruptHeader,
    InvalidConfig,
    MissingTensor,
    ShapeMismatch,
    VersionMismatch,
    WidthMismatch,
)
from chanshuffle.models import (
    Checkpoint,
    adapt_input_stem,
    build_classifier,
    build_segmenter,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    transfer_encoder,
)


def test_classifier_shapes():
    net = build_classifier(3, 10, 32)
    assert net.params["encoder.stem.weight"].shape == (32, 3, 3, 3)
    assert net.forward(np.zeros((2, 3, 16, 16), np.float32)).shape == (2, 10)


def test_same_seed_same_params():
    a, b = build_classifier(4, 5, 8, seed=3), build_classifier(4, 5, 8, seed=3)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    c = build_classifier(4, 5, 8, seed=4)
    assert a.params["encoder.stem.weight"].data.tobytes() != c.params["encoder.stem.weight"].data.tobytes()


def test_zero_input_gives_head_bias():
    net = build_classifier(3, 4, 8, seed=0)
    net.params["head.fc.bias"].data[:] = [0.5, -1.0, 2.0, 0.0]
    out = net.forward(np.zeros((1, 3, 8, 8), np.float32)).data
    np.testing.assert_array_equal(out[0], [0.5, -1.0, 2.0, 0.0])


def test_segmenter_output_shape_and_names():
    seg = build_segmenter(4, 6, 8)
    assert seg.forward(np.zeros((1, 4, 64, 64), np.float32)).shape == (1, 6, 64, 64)
    assert seg.encoder_names == build_classifier(4, 6, 8).encoder_names
    seg2 = build_segmenter(4, 6, 8)
    assert all(seg.params[k].data.tobytes() == seg2.params[k].data.tobytes() for k in seg.params)


def test_input_channel_check():
    with pytest.raises(ShapeMismatch):
        build_classifier(3, 2, 4).forward(np.zeros((1, 4, 8, 8)))
    with pytest.raises(InvalidConfig):
        build_classifier(0, 2, 4)


def test_segmenter_gradients_end_to_end():
    rng = np.random.default_rng(0)
    net = build_segmenter(3, 3, 2, seed=1).astype(np.float64)
    for p in net.params.values():
        p.data[...] = rng.standard_normal(p.shape) * 0.5
    x = rng.standard_normal((2, 3, 8, 8))
    t = rng.integers(0, 3, (2, 8, 8))
    t[0, :2] = 255
    for name, p in net.params.items():
        def f(u, name=name):
            return softmax_cross_entropy_masked(net.forward(x, {name: u}), t)
        assert finite_diff_check(f, p.data.copy()) <= 1e-4, name


def test_adapt_stem_identity_and_fill():
    w = np.random.default_rng(0).standard_normal((4, 3, 3, 3)).astype(np.float32)
    assert adapt_input_stem(w, 3).tobytes() == w.tobytes()
    const = np.full((2, 3, 3, 3), 0.8, np.float32)
    np.testing.assert_allclose(adapt_input_stem(const, 4), 0.75 * 0.8, rtol=1e-6)


def test_adapt_stem_closed_form():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((5, 3, 3, 3))
    x = rng.standard_normal((1, 3, 6, 6))
    x4 = np.concatenate([x, x.mean(axis=1, keepdims=True)], axis=1)
    ref = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), None, 1, 1).data
    out = conv2d(Tensor(x4, dtype=np.float64), Tensor(adapt_input_stem(w, 4), dtype=np.float64), None, 1, 1).data
    # kept slices scale by 3/4, the extra slice is the scaled mean kernel
    closed = 0.75 * ref + 0.75 * conv2d(Tensor(x4[:, 3:], dtype=np.float64),
                                       Tensor(w.mean(axis=1, keepdims=True), dtype=np.float64), None, 1, 1).data
    np.testing.assert_allclose(out, closed, atol=1e-10)


def test_adapt_stem_mean_channel_equal_inputs():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((5, 3, 3, 3))
    plane = rng.standard_normal((1, 1, 6, 6))
    x = np.repeat(plane, 3, axis=1)
    x4 = np.repeat(plane, 4, axis=1)  # the 4th channel equals the RGB mean
    ref = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), None, 1, 1).data
    out = conv2d(Tensor(x4, dtype=np.float64), Tensor(adapt_input_stem(w, 4), dtype=np.float64), None, 1, 1).data
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_checkpoint_round_trip_bytes(tmp_path):
    net = build_segmenter(4, 3, 8, seed=2)
    save_checkpoint(net, tmp_path / "a.cspk", {"epochs": 2}, strategy="CSP-4")
    ck = load_checkpoint(tmp_path / "a.cspk")
    assert ck.strategy == "CSP-4" and ck.training == {"epochs": 2}
    save_checkpoint(ck, tmp_path / "b.cspk")
    assert (tmp_path / "a.cspk").read_bytes() == (tmp_path / "b.cspk").read_bytes()
    back = ck.to_network()
    assert all(back.params[k].data.tobytes() == net.params[k].data.tobytes() for k in net.params)


def test_checkpoint_corruption_detected():
    raw = encode_checkpoint(Checkpoint.from_network(build_classifier(3, 2, 4), "Baseline"))
    with pytest.raises(CorruptHeader):
        decode_checkpoint(raw[:-3])
    with pytest.raises(CorruptHeader):
        decode_checkpoint(raw + b"x")
    with pytest.raises(BadMagic):
        decode_checkpoint(b"NOPE" + raw[4:])
    with pytest.raises(VersionMismatch):
        decode_checkpoint(raw[:4] + (7).to_bytes(4, "little") + raw[8:])


def test_checkpoint_missing_encoder_tensor():
    ck = Checkpoint.from_network(build_classifier(3, 2, 4), "Baseline")
    del ck.tensors["encoder.conv3.bias"]
    with pytest.raises(MissingTensor):
        decode_checkpoint(encode_checkpoint(ck))


def test_transfer_same_channels_bitwise(monkeypatch):
    src = build_classifier(4, 5, 8, seed=3)
    ck = Checkpoint.from_network(src, "CSP-4")
    seg = build_segmenter(4, 3, 8, seed=9)
    calls = []
    orig = models.adapt_input_stem
    monkeypatch.setattr(models, "adapt_input_stem", lambda *a: calls.append(a) or orig(*a))
    out = transfer_encoder(ck, seg)
    assert calls == []
    for name in out.encoder_names:
        assert out.params[name].data.tobytes() == src.params[name].data.tobytes()
    for name in out.head_names:
        assert out.params[name].data.tobytes() == seg.params[name].data.tobytes()


def test_transfer_adapts_stem_once(monkeypatch):
    ck = Checkpoint.from_network(build_classifier(3, 5, 8, seed=3), "Baseline")
    calls = []
    orig = models.adapt_input_stem
    monkeypatch.setattr(models, "adapt_input_stem", lambda *a: calls.append(a) or orig(*a))
    out = transfer_encoder(ck, build_segmenter(4, 3, 8))
    assert len(calls) == 1
    np.testing.assert_array_equal(out.params["encoder.stem.weight"].data,
                                  adapt_input_stem(ck.tensors["encoder.stem.weight"], 4))


def test_transfer_width_mismatch():
    ck = Checkpoint.from_network(build_classifier(3, 5, 8), "Baseline")
    with pytest.raises(WidthMismatch):
        transfer_encoder(ck, build_segmenter(3, 3, 16))
