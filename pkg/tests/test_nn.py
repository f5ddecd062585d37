import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from darkhorse.nn import (
    GRU,
    CheckpointError,
    Conv1D,
    Dense,
    LocalConv1D,
    MaxPool1D,
    ReLU,
    ShapeError,
    Sigmoid,
    Softmax,
    WeightedCrossEntropy,
    grad_check,
    load_params,
    relative_error,
    save_params,
)


def conv_loop(x, W, b):
    """Direct triple loop: out[n, p, k] = b[k] + sum_d sum_c xpad[n, p + d, c] W[d, c, k]."""
    n, length, c = x.shape
    w, _, k = W.shape
    pad = w // 2
    out = np.zeros((n, length, k))
    for i in range(n):
        for p in range(length):
            for f in range(k):
                acc = b[f]
                for d in range(w):
                    q = p + d - pad
                    if 0 <= q < length:
                        for ch in range(c):
                            acc += x[i, q, ch] * W[d, ch, f]
                out[i, p, f] = acc
    return out


def local_conv_loop(x, W, b):
    n, length, c = x.shape
    out = np.zeros((n, length, W.shape[-1]))
    for p in range(length):
        out[:, p : p + 1, :] = conv_loop(x, W[p], b[p])[:, p : p + 1, :]
    return out


def gru_step(x, h, W, U, b):
    u = len(h)
    sig = lambda a: 1 / (1 + np.exp(-a))  # noqa: E731
    a = x @ W + b
    z = sig(a[:u] + h @ U[:, :u])
    r = sig(a[u : 2 * u] + h @ U[:, u : 2 * u])
    hh = np.tanh(a[2 * u :] + (r * h) @ U[:, 2 * u :])
    return z * h + (1 - z) * hh


# ------------------------------------------------------------ conv1d


def test_conv_identity_kernel(rng):
    conv = Conv1D(4, 4, 1, rng)
    conv.W.value[0] = np.eye(4)
    x = rng.standard_normal((2, 7, 4))
    assert np.array_equal(conv.forward(x), x)


def test_conv_zero_input_gives_bias(rng):
    conv = Conv1D(3, 2, 3, rng)
    conv.b.value[:] = [0.5, -1.0]
    assert np.array_equal(conv.forward(np.zeros((1, 5, 3))), np.broadcast_to([0.5, -1.0], (1, 5, 2)))


def test_conv_matches_loop(rng):
    conv = Conv1D(3, 2, 3, rng)
    conv.b.value[:] = rng.standard_normal(2)
    x = rng.standard_normal((1, 8, 3))
    assert np.max(np.abs(conv.forward(x) - conv_loop(x, conv.W.value, conv.b.value))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 9), st.integers(1, 3), st.sampled_from([1, 3, 5]), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_conv_matches_loop_property(n, length, c, w, k, seed):
    r = np.random.default_rng(seed)
    conv = Conv1D(c, k, w, r)
    conv.b.value[:] = r.standard_normal(k)
    x = r.standard_normal((n, length, c))
    assert np.allclose(conv.forward(x), conv_loop(x, conv.W.value, conv.b.value), rtol=0, atol=1e-12)


def test_conv_rejects_even_window_and_bad_channels(rng):
    with pytest.raises(ShapeError):
        Conv1D(3, 2, 2, rng)
    with pytest.raises(ShapeError, match="expected 3 input channels, got 4"):
        Conv1D(3, 2, 3, rng).forward(np.zeros((1, 5, 4)))


# ------------------------------------------------------------ local conv


def test_local_conv_matches_loop(rng):
    layer = LocalConv1D(6, 2, 3, 5, rng)
    layer.b.value[:] = rng.standard_normal((6, 3))
    x = rng.standard_normal((2, 6, 2))
    assert np.max(np.abs(layer.forward(x) - local_conv_loop(x, layer.W.value, layer.b.value))) < 1e-12


def test_tied_local_conv_equals_conv(rng):
    conv = Conv1D(3, 2, 5, rng)
    conv.b.value[:] = rng.standard_normal(2)
    local = LocalConv1D(9, 3, 2, 5, rng)
    local.W.value[:] = conv.W.value
    local.b.value[:] = conv.b.value
    x = rng.standard_normal((2, 9, 3))
    assert np.allclose(local.forward(x), conv.forward(x), rtol=0, atol=1e-13)


def test_local_conv_locality(rng):
    layer = LocalConv1D(7, 2, 3, 3, rng)
    x = rng.standard_normal((1, 7, 2))
    before = layer.forward(x)
    layer.W.value[4] += 1.0
    after = layer.forward(x)
    changed = np.any(before != after, axis=(0, 2))
    assert changed.tolist() == [p == 4 for p in range(7)]
    layer.zero_grad()
    layer.forward(x)
    dout = np.zeros_like(after)
    dout[:, 2] = 1.0
    layer.backward(dout)
    touched = np.any(layer.W.grad != 0, axis=(1, 2, 3))
    assert touched.tolist() == [p == 2 for p in range(7)]


def test_local_conv_shape_error(rng):
    with pytest.raises(ShapeError, match="expected"):
        LocalConv1D(6, 2, 3, 5, rng).forward(np.zeros((1, 7, 2)))


# ------------------------------------------------------------ pooling


def test_maxpool_examples():
    pool = MaxPool1D(2)
    assert pool.forward(np.array([1.0, 3, 2, 5]).reshape(1, 4, 1)).ravel().tolist() == [3, 5]
    x = np.full((1, 6, 2), 2.5)
    assert np.array_equal(pool.forward(x), np.full((1, 3, 2), 2.5))
    d = pool.backward(np.ones((1, 3, 2)))
    assert d[0, :, 0].tolist() == [1, 0, 1, 0, 1, 0]
    assert pool.output_shape((4, 240, 3)) == (4, 120, 3)


def test_maxpool_odd_length_replicates_last():
    pool = MaxPool1D(2)
    x = np.array([1.0, 0, 4]).reshape(1, 3, 1)
    assert pool.forward(x).ravel().tolist() == [1, 4]
    assert pool.backward(np.ones((1, 2, 1))).ravel().tolist() == [1, 0, 1]


# ------------------------------------------------------------ GRU


def test_gru_zero_parameters_fixed_point(rng):
    gru = GRU(3, 4, rng)
    for p in gru.params().values():
        p.value[...] = 0
    assert np.array_equal(gru.forward(rng.standard_normal((2, 6, 3))), np.zeros((2, 4)))


def test_gru_single_step_closed_form(rng):
    gru = GRU(3, 2, rng)
    gru.b.value[:] = rng.standard_normal(6)
    x = rng.standard_normal((1, 1, 3))
    expected = gru_step(x[0, 0], np.zeros(2), gru.W.value, gru.U.value, gru.b.value)
    assert np.allclose(gru.forward(x)[0], expected, rtol=0, atol=1e-14)


def test_gru_matches_stepwise_reference(rng):
    gru = GRU(3, 4, rng)
    gru.b.value[:] = rng.standard_normal(12)
    x = rng.standard_normal((2, 7, 3))
    out = gru.forward(x)
    for i in range(2):
        h = np.zeros(4)
        for t in range(7):
            h = gru_step(x[i, t], h, gru.W.value, gru.U.value, gru.b.value)
        assert np.allclose(out[i], h, rtol=0, atol=1e-13)


# ------------------------------------------------------------ dense and activations


def test_softmax_relu_dense_identities(rng):
    assert np.allclose(Softmax().forward(np.zeros((1, 3))), 1 / 3, rtol=0, atol=1e-16)
    assert ReLU().forward(np.array([[-2.0, 0.0, 3.0]])).tolist() == [[0, 0, 3]]
    dense = Dense(4, 4, rng)
    dense.W.value[:] = np.eye(4)
    x = rng.standard_normal((3, 4))
    assert np.array_equal(dense.forward(x), x)
    with pytest.raises(ShapeError):
        dense.forward(np.zeros((1, 5)))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-700, 700)))
def test_softmax_sums_to_one(x):
    p = Softmax().forward(x)
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12) and np.all(p >= 0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (2, 5), elements=st.floats(-1e6, 1e6)))
def test_sigmoid_is_finite_and_bounded(x):
    s = Sigmoid().forward(x)
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))


# ------------------------------------------------------------ gradients

CASES = {
    "conv1d": lambda r: ([Conv1D(3, 2, 3, r)], r.standard_normal((2, 8, 3))),
    "conv1d_w1": lambda r: ([Conv1D(4, 3, 1, r)], r.standard_normal((2, 5, 4))),
    "local_conv1d": lambda r: ([LocalConv1D(6, 2, 3, 5, r)], r.standard_normal((2, 6, 2))),
    "maxpool1d": lambda r: ([MaxPool1D(2)], r.standard_normal((2, 7, 3))),
    "gru": lambda r: ([GRU(3, 2, r)], r.standard_normal((2, 5, 3))),
    "dense": lambda r: ([Dense(5, 4, r)], r.standard_normal((3, 5))),
    "sigmoid": lambda r: ([Sigmoid()], r.standard_normal((3, 4))),
    "relu": lambda r: ([ReLU()], r.standard_normal((3, 4))),
    "softmax": lambda r: ([Softmax()], r.standard_normal((3, 3))),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_layer_gradients(name):
    for seed in range(3):
        r = np.random.default_rng(seed)
        layers, x = CASES[name](r)
        for layer in layers:
            for p in layer.params().values():
                if p.value.ndim and name != "relu":
                    p.value += 0.1 * r.standard_normal(p.value.shape)  # non-zero biases
        assert grad_check(layers, x, rng=r) < 1e-4


def test_dense_softmax_weighted_ce_gradient(rng):
    layers = [Dense(4, 3, rng), Softmax()]
    loss = WeightedCrossEntropy([0, 2, 1], [1.5, 9.8, 3.0])
    assert grad_check(layers, rng.standard_normal((3, 4)), loss=loss, rng=rng) < 1e-4


def test_weighted_ce_reduces_to_cross_entropy(rng):
    p = Softmax().forward(rng.standard_normal((5, 3)))
    y = np.array([0, 1, 2, 1, 0])
    assert abs(WeightedCrossEntropy(y).forward(p) - np.mean(-np.log(p[np.arange(5), y]))) < 1e-15


def test_relative_error_scale_free():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert abs(relative_error(1e6 * a, 1e6 * a * (1 + 1e-8)) - 1e-8) < 1e-12


def test_forward_is_deterministic(rng):
    layer = GRU(3, 4, rng)
    x = rng.standard_normal((2, 9, 3))
    assert np.array_equal(layer.forward(x), layer.forward(x))


# ------------------------------------------------------------ checkpoints


def test_checkpoint_round_trip(tmp_path, rng):
    entries = [(0, "W", rng.standard_normal((3, 2, 4))), (2, "b", rng.standard_normal(5)), (7, "s", np.array(1.5))]
    save_params(entries, tmp_path / "c.ckpt")
    back = load_params(tmp_path / "c.ckpt")
    assert [(i, n) for i, n, _ in back] == [(0, "W"), (2, "b"), (7, "s")]
    for (_, _, a), (_, _, b) in zip(entries, back):
        assert a.shape == b.shape and np.array_equal(a, b)


def test_checkpoint_corruption(tmp_path, rng):
    path = tmp_path / "c.ckpt"
    save_params([(0, "W", rng.standard_normal((3, 4)))], path)
    data = path.read_bytes()
    for bad in (data[:5], data[:-1], data + b"\0", b"NOPE" + data[4:]):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_params(path)
