import numpy as np
import pytest

from eventfoley.nn import (
    MLP,
    LSTM,
    BiLSTM,
    Conv1d,
    ConvTranspose1d,
    NumericError,
    ParamStore,
    ShapeError,
    grad_check,
    load_checkpoint,
    random_source,
    save_checkpoint,
)
from eventfoley.nn import ops
from eventfoley.nn.params import decode_arrays, encode_arrays


def col(values):
    """[L] -> [1, L, 1] channels-last activation."""
    return np.asarray(values, dtype=np.float64)[None, :, None]


class TestConv:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 7, 1))
        y, _ = ops.conv1d_forward(x, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y, x)

    def test_hand_case(self):
        y, _ = ops.conv1d_forward(col([1, 2, 3]), np.ones((1, 1, 2)), np.zeros(1))
        assert y[0, :, 0].tolist() == [3, 5]

    def test_stride_two_halves(self):
        y, _ = ops.conv1d_forward(np.zeros((1, 8, 1)), np.ones((1, 1, 2)), None, stride=2)
        assert y.shape[1] == 4

    def test_length_formula(self):
        for length, k, s, p in [(10, 3, 1, 1), (11, 5, 2, 2), (9, 4, 3, 0), (8000, 8, 4, 2)]:
            y, _ = ops.conv1d_forward(np.zeros((1, length, 2)), np.zeros((3, 2, k)), None, s, p)
            assert y.shape == (1, (length + 2 * p - k) // s + 1, 3)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 5, 2\).*\(3, 4, 3\)"):
            ops.conv1d_forward(np.zeros((1, 5, 2)), np.zeros((3, 4, 3)), None)

    def test_transposed_identity_and_lengths(self):
        x = np.random.default_rng(0).normal(size=(1, 6, 1))
        y, _ = ops.conv1d_transposed_forward(x, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y, x)
        y, _ = ops.conv1d_transposed_forward(np.zeros((1, 4, 1)), np.zeros((1, 1, 2)), None, stride=2)
        assert y.shape[1] == 8

    @pytest.mark.parametrize("seed", range(10))
    def test_adjoint_identity(self, seed):
        rng = np.random.default_rng(seed)
        cin, cout, k = rng.integers(1, 4, 2).tolist() + [int(rng.integers(1, 6))]
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, k))
        length = int(rng.integers(k, 20))
        x = rng.normal(size=(2, length, cin))
        w = rng.normal(size=(cout, cin, k))
        y, _ = ops.conv1d_forward(x, w, None, stride, pad)
        v = rng.normal(size=y.shape)
        full = (y.shape[1] - 1) * stride + k
        xt, _ = ops.conv1d_transposed_forward(v, w, None, stride, crop=0)
        # conv of padded input == crop-free transpose paired with the padded x
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))[:, :full]
        assert abs(np.sum(y * v) - np.sum(xp * xt)) < 1e-10 * max(1.0, abs(np.sum(y * v)))


class TestLSTM:
    def test_zero_input_zero_params(self):
        store = ParamStore(np.float64)
        bl = BiLSTM(store, "l", 3, 4, random_source(0))
        for name in store:
            store[name][...] = 0
        out = bl.forward(np.zeros((2, 5, 3)))
        assert out.shape == (2, 5, 8) and np.all(out == 0)

    def test_single_step_halves_equal(self):
        store = ParamStore(np.float64)
        bl = BiLSTM(store, "l", 3, 4, random_source(0))
        for name in ("wx", "wh", "bias"):
            store[f"l.bwd.{name}"][...] = store[f"l.fwd.{name}"]
        out = bl.forward(np.random.default_rng(0).normal(size=(2, 1, 3)))
        np.testing.assert_array_equal(out[..., :4], out[..., 4:])

    def test_matches_scalar_unroll(self):
        rng = np.random.default_rng(5)
        cin, hid, steps = 2, 3, 2
        wx = rng.normal(scale=0.5, size=(cin, 4 * hid))
        wh = rng.normal(scale=0.5, size=(hid, 4 * hid))
        b = rng.normal(scale=0.1, size=4 * hid)
        x = rng.normal(size=(1, steps, cin))
        got, _ = ops.lstm_forward(x, wx, wh, b)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        h = [0.0] * hid
        c = [0.0] * hid
        expected = []
        for t in range(steps):
            z = [b[j] + sum(x[0, t, i] * wx[i, j] for i in range(cin)) + sum(h[i] * wh[i, j] for i in range(hid))
                 for j in range(4 * hid)]
            new_c, new_h = [], []
            for u in range(hid):
                ig, fg, gg, og = sig(z[u]), sig(z[hid + u]), np.tanh(z[2 * hid + u]), sig(z[3 * hid + u])
                new_c.append(fg * c[u] + ig * gg)
                new_h.append(og * np.tanh(new_c[-1]))
            h, c = new_h, new_c
            expected.append(h)
        np.testing.assert_allclose(got[0], np.array(expected), rtol=0, atol=1e-10)


class TestMLP:
    def test_identity(self):
        store = ParamStore(np.float64)
        mlp = MLP(store, "m", [3, 3], random_source(0), activation="linear")
        store["m.0.weight"][...] = np.eye(3)
        store["m.0.bias"][...] = 0
        v = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(mlp.forward(v), v)

    def test_hand_case(self):
        store = ParamStore(np.float64)
        mlp = MLP(store, "m", [1, 1], random_source(0))
        store["m.0.weight"][...] = 2.0
        store["m.0.bias"][...] = 1.0
        assert mlp.forward(np.array([[3.0]]))[0, 0] == 7.0

    def test_width_mismatch(self):
        mlp = MLP(ParamStore(), "m", [3, 4, 2], random_source(0))
        with pytest.raises(ShapeError):
            mlp.forward(np.zeros((1, 2)))

    def test_count(self):
        store = ParamStore()
        MLP(store, "m", [5, 7, 4], random_source(0))
        assert store.count() == MLP.count([5, 7, 4]) == 5 * 7 + 7 + 7 * 4 + 4


def _check_layer(build, x_shape, seed, eps=1e-5):
    rng = np.random.default_rng(seed)
    store = ParamStore(np.float64)
    layer = build(store, random_source(seed))
    x = rng.normal(size=x_shape)
    target = rng.normal(size=layer.forward(x).shape)

    def loss():
        return float(np.sum(np.tanh(layer.forward(x)) * target))

    y = layer.forward(x)
    store.zero_grad()
    dx = layer.backward((1 - np.tanh(y) ** 2) * target)
    arrays = {**store.params, "__input__": x}
    grads = {**store.grads, "__input__": dx}
    return grad_check(loss, arrays, grads, eps=eps)


SEEDS = range(20)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_grad(seed):
    err = _check_layer(lambda s, r: Conv1d(s, "c", 2, 3, 3, r, stride=1 + seed % 3, padding=seed % 2), (2, 9, 2), seed)
    assert err < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_transposed_grad(seed):
    stride = 1 + seed % 3
    err = _check_layer(lambda s, r: ConvTranspose1d(s, "t", 2, 3, stride + 2, r, stride=stride, crop=seed % 2),
                       (2, 5, 2), seed)
    assert err < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_grad(seed):
    assert _check_layer(lambda s, r: LSTM(s, "l", 2, 3, r, reverse=bool(seed % 2)), (2, 4, 2), seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_bilstm_grad(seed):
    assert _check_layer(lambda s, r: BiLSTM(s, "b", 2, 2, r), (1, 4, 2), seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_mlp_grad(seed):
    act = ("silu", "tanh", "linear")[seed % 3]
    assert _check_layer(lambda s, r: MLP(s, "m", [3, 5, 4], r, activation=act), (2, 3), seed) < 1e-6


def test_mlp_grad_float64_finite_differences():
    assert _check_layer(lambda s, r: MLP(s, "m", [2, 6, 6, 1], r), (4, 2), 99) < 1e-4


def test_grad_check_linear_is_exact():
    w = np.array([1.5, -2.0, 0.25])
    x = np.array([0.3, 0.1, -0.7])
    assert grad_check(lambda: float(w @ x), {"x": x}, {"x": w}) <= 1e-10


def test_grad_check_rejects_non_finite():
    x = np.array([1.0])
    with pytest.raises(NumericError):
        grad_check(lambda: float("nan"), {"x": x}, {"x": np.zeros(1)})


def test_grad_check_detects_wrong_gradient():
    x = np.array([1.0, 2.0])
    assert grad_check(lambda: float(np.sum(x ** 2)), {"x": x}, {"x": x}) > 0.5


def test_determinism_bit_identical():
    def run():
        store = ParamStore(np.float32)
        conv = Conv1d(store, "c", 2, 4, 5, random_source(7), stride=2, padding=2)
        x = random_source(8).normal(size=(3, 40, 2)).astype(np.float32)
        y = conv.forward(x)
        conv.backward(np.ones_like(y))
        return y, store.grads["c.weight"].copy()

    (y1, g1), (y2, g2) = run(), run()
    assert y1.tobytes() == y2.tobytes() and g1.tobytes() == g2.tobytes()


def test_random_source_reproducible():
    assert np.array_equal(random_source(3).normal(size=5), random_source(3).normal(size=5))


def test_checkpoint_bit_exact(tmp_path):
    store = ParamStore(np.float32)
    Conv1d(store, "c", 3, 4, 5, random_source(0))
    MLP(store, "m", [4, 8, 2], random_source(1))
    path = tmp_path / "ckpt.bin"
    save_checkpoint(store, path)
    other = ParamStore(np.float32)
    Conv1d(other, "c", 3, 4, 5, random_source(10))
    MLP(other, "m", [4, 8, 2], random_source(11))
    load_checkpoint(other, path)
    for name in store:
        assert store[name].tobytes() == other[name].tobytes()
    data = encode_arrays(store.params)
    assert encode_arrays(decode_arrays(data)) == data


def test_param_store_guards():
    store = ParamStore()
    store.add("a", np.zeros(3))
    with pytest.raises(KeyError):
        store.add("a", np.zeros(3))
    assert store.grads["a"].shape == store["a"].shape
    store.grads["a"] += 1
    store.zero_grad()
    assert np.all(store.grads["a"] == 0)
    with pytest.raises(KeyError):
        store.load_state({})
