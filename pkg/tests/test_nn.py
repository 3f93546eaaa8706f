import math

import numpy as np
import pytest

from mdfnet import gradcheck, nn

from oracles import adam_reference, conv_reference


def test_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 6))
    out, _ = nn.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.array([0.5]))
    np.testing.assert_allclose(out, x + 0.5)


def test_zero_input_gives_bias():
    out, _ = nn.conv2d_forward(np.zeros((1, 2, 4, 4)), np.ones((3, 2, 3, 3)), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out[0, :, 2, 1], [1.0, -2.0, 3.0])


def test_averaging_kernel_matches_loops():
    x = np.random.default_rng(1).standard_normal((1, 1, 4, 4))
    w = np.full((1, 1, 3, 3), 1 / 9)
    out, _ = nn.conv2d_forward(x, w, np.zeros(1))
    np.testing.assert_allclose(out, conv_reference(x, w, np.zeros(1), 1), atol=1e-14)


@pytest.mark.parametrize("k", [3, 5, 8])
@pytest.mark.parametrize("stride", [1, 2, 3, 4, 5, 8])
def test_conv_shape_and_reference(k, stride):
    rng = np.random.default_rng(k * 10 + stride)
    x = rng.standard_normal((2, 2, 9, 13))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    out, _ = nn.conv2d_forward(x, w, b, stride)
    assert out.shape == (2, 3, math.ceil(9 / stride), math.ceil(13 / stride))
    np.testing.assert_allclose(out, conv_reference(x, w, b, stride), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_conv_backward_zero_and_bias():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 2, 6, 7))
    out, cache = nn.conv2d_forward(x, rng.standard_normal((4, 2, 3, 3)), np.zeros(4), 2)
    dx, dw, db = nn.conv2d_backward(np.zeros_like(out), cache)
    assert not dx.any() and not dw.any() and not db.any()
    up = rng.standard_normal(out.shape)
    _, _, db = nn.conv2d_backward(up, cache)
    np.testing.assert_allclose(db, up.sum(axis=(0, 2, 3)))


def test_conv_kernel_smaller_than_stride():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 1, 11, 10))
    w = rng.standard_normal((2, 1, 1, 1))
    out, cache = nn.conv2d_forward(x, w, np.zeros(2), 5)
    up = rng.standard_normal(out.shape)
    dx, _, _ = nn.conv2d_backward(up, cache)
    num = gradcheck.numeric_gradient(
        lambda: np.sum(nn.conv2d_forward(x, w, np.zeros(2), 5)[0] * up), x)
    assert gradcheck.rel_error(dx, num) < 1e-6


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("check", gradcheck.CHECKS, ids=["conv", "bn_train", "bn_infer", "relu", "gap", "dense", "softmax_ce"])
def test_backward_matches_finite_differences(check, seed):
    result = check(seed)
    assert result.rel_error < 1e-4, result


def test_batchnorm_training_stats():
    rng = np.random.default_rng(4)
    x = 5 * rng.standard_normal((6, 3, 4, 5)) + 2
    C = 3
    rm, rv = np.zeros(C), np.ones(C)
    out, _ = nn.batchnorm_forward(x, np.ones(C), np.zeros(C), rm, rv, training=True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-6)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


def test_batchnorm_inference_identity():
    x = np.random.default_rng(5).standard_normal((1, 2, 3, 3))
    out, _ = nn.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), training=False)
    np.testing.assert_allclose(out, x / np.sqrt(1 + nn.BN_EPS))


def test_batchnorm_degenerate_batch():
    with pytest.raises(nn.DegenerateBatchError):
        nn.batchnorm_forward(np.zeros((1, 1, 2, 2)), np.ones(1), np.zeros(1),
                             np.zeros(1), np.ones(1), training=True)


def test_gap_constant_and_relu_mask():
    out, _ = nn.gap_forward(np.full((1, 2, 3, 4), 7.0))
    np.testing.assert_array_equal(out, [[7.0, 7.0]])
    x = np.array([-1.0, 2.0, -3.0, 4.0])
    _, mask = nn.relu_forward(x)
    np.testing.assert_array_equal(nn.relu_backward(np.ones(4), mask), [0, 1, 0, 1])


def test_softmax_ce_uniform():
    loss, probs, _ = nn.softmax_cross_entropy(np.zeros((1, 4)), [2])
    np.testing.assert_allclose(probs, 0.25)
    assert loss == pytest.approx(math.log(4))


def test_softmax_ce_confident_and_invalid():
    loss, _, _ = nn.softmax_cross_entropy(np.array([[50.0, 0.0, 0.0]]), [0])
    assert loss < 1e-20
    with pytest.raises(ValueError):
        nn.softmax_cross_entropy(np.zeros((1, 3)), [3])


@pytest.mark.parametrize("scale", [1.0, 1e2, 1e4])
def test_softmax_stability(scale):
    logits = scale * np.random.default_rng(6).uniform(-1, 1, (5, 7))
    p = nn.softmax(logits)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-9)


def test_adam_first_step():
    g = np.array([0.3, -2.0, 1e-3])
    p = np.zeros(3)
    nn.Adam(lr=1e-3).step({"p": p}, {"p": g})
    np.testing.assert_allclose(p, -1e-3 * g / (np.abs(g) + 1e-8))


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    opt = nn.Adam()
    for _ in range(10):
        opt.step({"p": p}, {"p": np.zeros(2)})
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_matches_reference_loop():
    grad = lambda th: 2 * (th - 3.0)
    ref = adam_reference(grad, 0.5, 100)
    p = np.array([0.5])
    opt = nn.Adam()
    for t in range(100):
        opt.step({"p": p}, {"p": grad(p)})
        assert abs(p[0] - ref[t]) <= 1e-12
    assert opt.t == 100


def test_adam_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.Adam().step({"p": np.zeros(2)}, {"p": np.zeros(3)})


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a.W": np.arange(6.0).reshape(2, 3), "b": np.float32([1.5])}
    nn.save_checkpoint(tmp_path / "ck.npz", arrays, {"k": [1, 2]})
    back, cfg = nn.load_checkpoint(tmp_path / "ck.npz")
    assert cfg == {"k": [1, 2]}
    np.testing.assert_array_equal(back["a.W"], arrays["a.W"])
    assert back["b"].dtype == np.float32
