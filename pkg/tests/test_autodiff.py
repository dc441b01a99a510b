import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from megalap import autodiff as ad
from megalap.autodiff import Var
from megalap.gradcheck import TOLERANCE, _op_cases, check_function
from megalap.nn import ParamStore, sgd_step


def naive_conv(x, w, b, stride, pad, mode):
    """Straight nested loops over batch, out-channel, rows, cols, in-channel, taps."""
    np_mode = "constant" if mode == "zero" else "symmetric"
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=np_mode)
    B, C, H, W = xp.shape
    O, _, kh, kw = w.shape
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1
    out = np.zeros((B, O, ho, wo))
    for n in range(B):
        for o in range(O):
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, c, y * stride + i, z * stride + j] * w[o, c, i, j]
                    out[n, o, y, z] = acc
    return out


def test_conv_all_ones_centre_is_nine():
    out = ad.conv2d(Var(np.ones((1, 1, 3, 3))), Var(np.ones((1, 1, 3, 3))), padding=1)
    assert out.value[0, 0, 1, 1] == 9.0


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 6, 5))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ad.conv2d(Var(x), Var(k)).value, x)


@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("pad", [0, 1, 2])
@pytest.mark.parametrize("mode", ["zero", "reflect"])
def test_conv_matches_loop_oracle(stride, pad, mode):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = ad.conv2d(Var(x), Var(w), Var(b), stride=stride, padding=pad, pad_mode=mode).value
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad, mode), rtol=0, atol=1e-12)


def test_conv_5x5_kernel_on_batch():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((2, 3, 5, 5))
    got = ad.conv2d(Var(x), Var(w), pad_mode="reflect").value
    np.testing.assert_allclose(got, naive_conv(x, w, None, 1, 2, "reflect"), atol=1e-12)


def test_conv_errors_name_the_dimension():
    x = Var(np.zeros((1, 2, 5, 5)))
    with pytest.raises(ValueError, match="Cin=3"):
        ad.conv2d(x, Var(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError, match="odd"):
        ad.conv2d(x, Var(np.zeros((1, 2, 2, 2))))
    with pytest.raises(ValueError, match="stride"):
        ad.conv2d(x, Var(np.zeros((1, 2, 3, 3))), stride=0)
    with pytest.raises(ValueError, match="bias"):
        ad.conv2d(x, Var(np.zeros((1, 2, 3, 3))), Var(np.zeros(2)))


def test_sigmoid_basics():
    z = Var(np.zeros(()), requires_grad=True)
    s = ad.sigmoid(z)
    assert s.value == 0.5
    ad.backward(s)
    assert z.grad == 0.25
    extreme = ad.sigmoid(Var(np.array([-1e4, -50.0, 50.0, 1e4]))).value
    assert np.all(extreme > 0) and np.all(extreme < 1)


def test_concat_shapes_and_axis_errors():
    a, b = Var(np.zeros((2, 3, 4, 4))), Var(np.ones((2, 5, 4, 4)))
    assert ad.concat([a, b], axis=1).shape == (2, 8, 4, 4)
    with pytest.raises(ValueError, match="out of range"):
        ad.concat([a, b], axis=4)
    with pytest.raises(ValueError, match="out of range"):
        ad.sum(a, axis=7)


def test_upsample_constant_stays_constant():
    up = ad.upsample_bilinear(Var(np.full((1, 2, 3, 5), 0.7)), 2)
    assert up.shape == (1, 2, 6, 10)
    np.testing.assert_allclose(up.value, 0.7, atol=1e-15)
    with pytest.raises(ValueError, match="factor"):
        ad.upsample_bilinear(Var(np.zeros((1, 1, 2, 2))), 0)


def test_global_pools_and_max_pool():
    x = np.random.default_rng(1).standard_normal((2, 3, 4, 6))
    np.testing.assert_allclose(ad.global_avg_pool(Var(x)).value, x.mean(axis=(2, 3), keepdims=True))
    np.testing.assert_array_equal(ad.global_max_pool(Var(x)).value, x.max(axis=(2, 3), keepdims=True))
    pooled = ad.max_pool2d(Var(x), 2).value
    oracle = x.reshape(2, 3, 2, 2, 3, 2).max(axis=(3, 5))
    np.testing.assert_array_equal(pooled, oracle)


def test_mean_of_weighted_constant():
    x = np.arange(12.0).reshape(3, 4)
    w = Var(np.ones((3, 4)), requires_grad=True)
    ad.backward(ad.mean(w * x))
    np.testing.assert_allclose(w.grad, x / 12)


def test_backward_accumulates_and_rejects_non_scalar():
    w = Var(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.sum(w * w))
    ad.backward(ad.sum(w * w))
    np.testing.assert_array_equal(w.grad, 2 * 2 * w.value)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(w * 2.0)


def test_constant_leaves_report_zero_gradient():
    c = ad.constant(np.ones((2, 2)))
    w = Var(np.ones((2, 2)), requires_grad=True)
    ad.backward(ad.sum(c * w))
    np.testing.assert_array_equal(c.gradient(), np.zeros((2, 2)))
    assert w.gradient().shape == w.shape


def test_values_are_read_only():
    v = Var(np.zeros(3))
    with pytest.raises(ValueError):
        v.value[0] = 1.0


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (2, 3, 4, 4), elements=st.floats(-10, 10)),
    arrays(np.float64, (1, 3, 1, 1), elements=st.floats(-10, 10)),
)
def test_broadcasting_matches_tiling(x, c):
    tiled = np.tile(c, (2, 1, 4, 4))
    np.testing.assert_array_equal((Var(x) + Var(c)).value, x + tiled)
    np.testing.assert_array_equal((Var(x) * Var(c)).value, x * tiled)
    cv = Var(c, requires_grad=True)
    ad.backward(ad.sum(Var(x) * cv))
    np.testing.assert_allclose(cv.grad, x.sum(axis=(0, 2, 3), keepdims=True), atol=1e-12)


OP_NAMES = sorted(_op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradients_match_finite_differences(name):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        fn, arrays_ = _op_cases(rng)[name]
        assert check_function(fn, arrays_, rng) < TOLERANCE, f"{name} seed {seed}"


def test_forward_and_gradients_are_deterministic():
    def run():
        rng = np.random.default_rng(5)
        x = Var(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
        w = Var(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        y = ad.sigmoid(ad.conv2d(x, w, pad_mode="reflect"))
        ad.backward(ad.mean(y))
        return y.value.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# -- parameters and SGD -------------------------------------------------------


def _store(value, grad):
    store = ParamStore()
    store.add("w", np.array(value, dtype=float))
    store["w"].grad = np.array(grad, dtype=float)
    return store


def test_sgd_plain_step():
    store = _store([1.0, -2.0], [0.5, 0.25])
    sgd_step(store, lr=0.1, momentum=0.0)
    np.testing.assert_allclose(store["w"].value, [0.95, -2.025])
    assert store["w"].grad is None


def test_sgd_momentum_second_delta():
    store = _store([0.0], [1.0])
    sgd_step(store, lr=0.1, momentum=0.9)
    after_one = store["w"].value.copy()
    store["w"].grad = np.array([1.0])
    sgd_step(store, lr=0.1, momentum=0.9)
    np.testing.assert_allclose(after_one - store["w"].value, 0.1 * 1.9)


def test_sgd_weight_decay_only():
    store = _store([3.0], [0.0])
    sgd_step(store, lr=0.5, momentum=0.0, weight_decay=1e-5)
    np.testing.assert_allclose(store["w"].value, 3.0 * (1 - 0.5 * 1e-5), rtol=1e-15)


def test_sgd_rejects_non_positive_lr():
    with pytest.raises(ValueError, match="learning rate"):
        sgd_step(_store([1.0], [1.0]), lr=0.0)


def test_parameter_names_unique_and_buffers_match():
    store = ParamStore(0)
    store.conv("a", 4, 2, 3)
    with pytest.raises(KeyError, match="duplicate"):
        store.conv("a", 4, 2, 3)
    for p in store:
        assert p.momentum_buffer.shape == p.value.shape


def test_kaiming_bound_and_zero_bias():
    store = ParamStore(0)
    store.conv("c", 16, 8, 3)
    bound = np.sqrt(6.0 / (8 * 9))
    assert np.abs(store["c.weight"].value).max() <= bound
    np.testing.assert_array_equal(store["c.bias"].value, 0.0)
