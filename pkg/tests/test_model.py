import numpy as np
import pytest

from facelf import io
from facelf.net.gradcheck import gradient_check
from facelf.net.model import FaceLFNet, NetConfig, euclidean_loss, layout


def small(width=16, dtype="float64", **kw):
    return NetConfig(width=width, fc_hidden=32, dtype=dtype, **kw)


def test_channel_accounting():
    cfg = NetConfig(width=400)
    assert cfg.block_channels() == [16, 52, 88, 124]
    assert cfg.out_channels == 160
    assert cfg.extents() == [(15, 400), (8, 200), (4, 100), (2, 50)]
    assert cfg.flat_features == 160 * 2 * 50


@pytest.mark.parametrize("W", [8, 31, 64, 100])
def test_flat_features_formula(W):
    assert NetConfig(width=W).flat_features == 160 * 2 * -(-W // 8)


def test_forward_trace_extents_and_channels():
    net = FaceLFNet(NetConfig(width=64, fc_hidden=64))
    trace = []
    out = net.forward(np.zeros((1, 3, 15, 64), np.float32), trace=trace)
    assert out.shape == (1, 64)
    shapes = dict(trace)
    assert shapes["stem"] == (1, 15, 64, 16)
    assert [shapes[f"block{b}"][1:] for b in range(4)] == [(15, 64, 52), (8, 32, 88), (4, 16, 124), (2, 8, 160)]
    assert [shapes[f"trans{b}"][1:] for b in range(3)] == [(8, 32, 52), (4, 16, 88), (2, 8, 124)]


def test_zero_input_gives_zero_output():
    net = FaceLFNet(small(width=24))
    x = np.zeros((2, 3, 15, 24))
    assert np.all(net.forward(x, train=False) == 0.0)
    assert np.all(net.forward(x, train=True, update_running=False) == 0.0)


def test_input_shape_mismatch_rejected():
    net = FaceLFNet(small(width=16))
    for shape in ((1, 3, 15, 17), (1, 1, 15, 16), (1, 3, 9, 16)):
        with pytest.raises(ValueError):
            net.forward(np.zeros(shape))


def test_layout_names_unique_and_ordered():
    names = [n for n, *_ in layout(NetConfig(width=32))]
    assert len(names) == len(set(names))
    assert names[0] == "stem.w" and names[-1] == "fc2.b"
    assert "head.bn.gamma" in names
    plain = [n for n, *_ in layout(NetConfig(width=32, head_bn=False))]
    assert "head.bn.gamma" not in plain
    # only BN layers consume the last transition when the head has BN, so it has no bias
    assert "trans2.b" not in names and "trans2.b" in plain
    assert "trans0.b" in names and "trans1.b" in names


def test_init_is_seeded():
    a, b, c = FaceLFNet(small(), seed=1), FaceLFNet(small(), seed=1), FaceLFNet(small(), seed=2)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["stem.w"], c.params["stem.w"])
    assert np.all(a.params["block0.layer0.bn.gamma"] == 1) and np.all(a.params["fc1.b"] == 0)


def test_inference_is_repeatable(rng):
    net = FaceLFNet(small())
    x = rng.random((3, 3, 15, 16))
    net.forward(x, train=True)  # move the running statistics away from init
    a = net.forward(x, train=False)
    b = net.forward(x, train=False)
    assert np.array_equal(a, b)


# ------------------------------------------------------------------ loss

def test_loss_examples():
    assert euclidean_loss(np.ones((2, 3)), np.ones((2, 3)))[0] == 0.0
    loss, grad = euclidean_loss(np.array([[1.0, 1.0]]), np.zeros((1, 2)))
    assert loss == 1.0 and np.array_equal(grad, [[1.0, 1.0]])


def test_loss_matches_scalar_loop(rng):
    p, t = rng.standard_normal((5, 7)), rng.standard_normal((5, 7))
    total = 0.0
    for i in range(5):
        for j in range(7):
            total += (p[i, j] - t[i, j]) ** 2
    loss, grad = euclidean_loss(p, t)
    assert abs(loss - total / (2 * 5)) < 1e-12
    assert np.allclose(grad, (p - t) / 5, atol=1e-15)


def test_loss_rejects_bad_input():
    with pytest.raises(ValueError):
        euclidean_loss(np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        euclidean_loss(np.zeros((1, 2)), np.array([[0.0, np.nan]]))


# -------------------------------------------------------------- backward

def test_zero_loss_gives_zero_gradients(rng):
    net = FaceLFNet(small())
    x = rng.random((2, 3, 15, 16))
    target = net.forward(x, train=True, update_running=False)
    loss, grads = net.loss_and_grads(x, target)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_fc_bias_gradient_is_upstream_column_sum(rng):
    net = FaceLFNet(small())
    x, y = rng.random((3, 3, 15, 16)), rng.standard_normal((3, 16))
    pred, caches = net.forward(x, train=True, update_running=False, return_cache=True)
    _, dpred = euclidean_loss(pred, y)
    grads = net.backward(dpred, caches)
    assert np.allclose(grads["fc2.b"], dpred.sum(axis=0), atol=1e-15)
    assert set(grads) == set(net.params)
    assert all(grads[k].shape == net.params[k].shape for k in grads)


@pytest.mark.parametrize("head_bn", [True, False])
def test_gradient_check_small_net(rng, head_bn):
    net = FaceLFNet(small(width=12, head_bn=head_bn), seed=3)
    x, y = rng.random((2, 3, 15, 12)), rng.standard_normal((2, 12))
    report = gradient_check(net, x, y, eps=1e-4, entries_per_group=3)
    assert set(report) == set(net.params)
    worst = max(r.rel_error for r in report.values())
    assert worst < 1e-5


def test_gradient_check_needs_float64():
    with pytest.raises(ValueError):
        gradient_check(FaceLFNet(small(dtype="float32")), np.zeros((1, 3, 15, 16)), np.zeros((1, 16)))


# ------------------------------------------------------------------- I/O

def test_save_load_round_trip(tmp_path, rng):
    net = FaceLFNet(small(dtype="float32"), seed=5, label_mean=0.3, label_std=1.7)
    x = rng.random((2, 3, 15, 16)).astype(np.float32)
    net.forward(x, train=True)
    net.save(tmp_path / "m.flfw")
    back = FaceLFNet.load(tmp_path / "m.flfw")
    assert back.config == net.config
    assert (back.label_mean, back.label_std) == (0.3, 1.7)
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
    for k in net.buffers:
        assert np.array_equal(back.buffers[k], net.buffers[k])
    assert np.array_equal(back.predict_proxy(x), net.predict_proxy(x))
    header, _ = io.read_weights(tmp_path / "m.flfw")
    assert header["precision"] == "float32" and header["architecture"]["width"] == 16


def test_load_rejects_incomplete_files(tmp_path):
    net = FaceLFNet(small())
    arrays = net.named_arrays()[:-1]
    io.write_weights(tmp_path / "a", {"architecture": {"width": 16, "fc_hidden": 32, "dtype": "float64"},
                                      "label_mean": 0, "label_std": 1, "n_learnable": len(net.params)},
                     arrays)
    with pytest.raises(io.MalformedHeaderError):
        FaceLFNet.load(tmp_path / "a")
    io.write_weights(tmp_path / "b", {}, arrays)
    with pytest.raises(io.MalformedHeaderError):
        FaceLFNet.load(tmp_path / "b")


def test_label_normalization_round_trip():
    net = FaceLFNet(small(), label_mean=-0.5, label_std=2.0)
    z = np.array([-1.0, 0.0, 3.0])
    assert np.allclose(net.denormalize(net.normalize(z)), z)
    assert np.allclose(net.normalize(z), (z + 0.5) / 2.0)
