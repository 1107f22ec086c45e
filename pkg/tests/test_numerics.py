import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_conv1d
from tsda.numerics import (
    Adam,
    OptimizerState,
    ParameterSet,
    Tensor,
    adam_step,
    adaptive_avg_pool1d,
    atan2,
    batch_norm,
    conv1d,
    conv_transpose1d,
    exp,
    grad_check,
    hypot,
    init_block,
    logsumexp,
    max_pool1d,
    nn_block,
    no_grad,
    relu,
    softmax,
    BlockSpec,
)
from tsda.numerics.layers import BN_EPS


def params(**arrays):
    return ParameterSet.from_arrays(arrays)


# -- conv1d ------------------------------------------------------------------------

def test_conv1d_identity_kernel():
    y = conv1d(np.array([[1.0, 2, 3, 4]]), np.ones((1, 1, 1)))
    np.testing.assert_array_equal(y.data, [[1, 2, 3, 4]])


def test_conv1d_centered_delta_same_padding():
    y = conv1d(np.array([[1.0, 2, 3]]), np.array([[[0.0, 1, 0]]]), padding=1)
    np.testing.assert_array_equal(y.data, [[1, 2, 3]])


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 2), (2, 1), (3, 0)])
def test_conv1d_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x, w, b = rng.normal(size=(2, 16)), rng.normal(size=(3, 2, 5)), rng.normal(size=3)
    y = conv1d(x, w, b, stride=stride, padding=pad)
    np.testing.assert_allclose(y.data, naive_conv1d(x, w, b, stride, pad), atol=1e-12)
    assert y.shape[1] == (16 + 2 * pad - 5) // stride + 1


def test_conv1d_batched_equals_per_sample():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(4, 2, 12)), rng.normal(size=(3, 2, 3))
    y = conv1d(x, w, padding=1).data
    for i in range(4):
        np.testing.assert_allclose(y[i], conv1d(x[i], w, padding=1).data, atol=1e-13)


def test_conv1d_shape_errors():
    with pytest.raises(ValueError, match="channels"):
        conv1d(np.zeros((2, 8)), np.zeros((1, 3, 3)))
    with pytest.raises(ValueError, match="exceeds"):
        conv1d(np.zeros((1, 3)), np.zeros((1, 1, 5)))
    with pytest.raises(ValueError, match="stride"):
        conv1d(np.zeros((1, 8)), np.zeros((1, 1, 3)), stride=0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_conv1d_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y, w = rng.normal(size=(2, 10)), rng.normal(size=(2, 10)), rng.normal(size=(3, 2, 3))
    lhs = conv1d(a * x + b * y, w, padding=1).data
    rhs = a * conv1d(x, w, padding=1).data + b * conv1d(y, w, padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_conv_transpose_is_adjoint_of_conv():
    rng = np.random.default_rng(2)
    # lengths chosen so the transposed output covers the whole input
    for stride, pad, length in [(1, 0, 17), (2, 1, 18), (4, 0, 16)]:
        x = rng.normal(size=(2, 3, length))
        w = rng.normal(size=(4, 3, 4))
        y = conv1d(x, w, stride=stride, padding=pad).data
        u = rng.normal(size=y.shape)
        back = conv_transpose1d(u, w, stride=stride, padding=pad).data
        assert back.shape == x.shape
        assert np.isclose(np.sum(y * u), np.sum(x * back), rtol=1e-10)


# -- pooling, normalization, blocks ----------------------------------------------------

def test_max_pool_example():
    np.testing.assert_array_equal(max_pool1d(np.array([[1.0, 3, 2, 5]])).data, [[3, 5]])


def test_max_pool_drops_partial_window():
    assert max_pool1d(np.zeros((1, 2, 7))).shape == (1, 2, 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
def test_max_pool_outputs_come_from_their_window(vals):
    x = np.array(vals)[None, :]
    y = max_pool1d(x).data[0]
    for i, v in enumerate(y):
        assert v in x[0, 2 * i:2 * i + 2]
        assert v == x[0, 2 * i:2 * i + 2].max()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_relu_nonnegative(vals):
    assert np.all(relu(np.array(vals)).data >= 0)


def test_adaptive_pool_even_and_uneven_bins():
    x = np.arange(8.0)[None, None, :]
    np.testing.assert_allclose(adaptive_avg_pool1d(x, 4).data[0, 0], [0.5, 2.5, 4.5, 6.5])
    # 5 -> 3 bins: [0,2), [1,4), [3,5)
    y = adaptive_avg_pool1d(np.arange(5.0)[None, None, :], 3).data[0, 0]
    np.testing.assert_allclose(y, [0.5, 2.0, 3.5])


def test_batch_norm_training_statistics():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 3.0, size=(5, 2, 9))
    rm, rv = np.zeros(2), np.ones(2)
    y = batch_norm(x, np.ones(2), np.zeros(2), rm, rv, training=True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-12)
    var = x.var(axis=(0, 2))
    np.testing.assert_allclose(y.var(axis=(0, 2)), var / (var + BN_EPS), rtol=1e-10)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))


def test_batch_norm_inference_uses_running_stats():
    x = np.ones((2, 1, 4)) * 3.0
    y = batch_norm(x, np.array([2.0]), np.array([1.0]), np.array([1.0]), np.array([4.0]), training=False)
    np.testing.assert_allclose(y.data, 2.0 * 2.0 / np.sqrt(4.0 + BN_EPS) + 1.0)


def test_batch_norm_empty_batch_is_an_error():
    with pytest.raises(ValueError, match="non-empty"):
        batch_norm(np.zeros((0, 2, 4)), np.ones(2), np.zeros(2), training=True)


def _block(seed=0, c_in=2, c_out=3):
    spec = BlockSpec(c_in, c_out, kernel=3)
    p, b = init_block(spec, np.random.default_rng(seed))
    return spec, params(**p), b


def test_block_zero_input_gives_zero():
    spec, p, b = _block()
    for k in p:
        if k.endswith("conv.bias"):
            p[k] = np.zeros_like(p[k].data)
    y = nn_block(np.zeros((4, 2, 10)), p, spec, b, training=True)
    np.testing.assert_array_equal(y.data, 0.0)


def test_block_matches_composed_oracle():
    rng = np.random.default_rng(4)
    spec, p, b = _block(4)
    x = rng.normal(size=(3, 2, 12))
    y = nn_block(x, p, spec, {k: v.copy() for k, v in b.items()}, training=True).data
    h = np.stack([naive_conv1d(xi, p["conv.weight"].data, p["conv.bias"].data, 1, 1) for xi in x])
    mu, var = h.mean(axis=(0, 2), keepdims=True), h.var(axis=(0, 2), keepdims=True)
    h = (h - mu) / np.sqrt(var + BN_EPS) * p["bn.weight"].data[None, :, None] + p["bn.bias"].data[None, :, None]
    h = np.maximum(h, 0)
    h = h.reshape(3, 3, 6, 2).max(axis=-1)
    np.testing.assert_allclose(y, h, atol=1e-10)


# -- elementwise and reductions --------------------------------------------------------

def test_logsumexp_is_stable():
    x = np.array([1000.0, 1000.0])
    assert np.isclose(logsumexp(x).data, 1000 + np.log(2))


def test_softmax_rows_sum_to_one():
    s = softmax(np.random.default_rng(0).normal(size=(4, 5)) * 50)
    np.testing.assert_allclose(s.sum(axis=1), 1.0)


# -- gradients -------------------------------------------------------------------------

def _check(f, **arrays):
    return grad_check(f, params(**arrays), h=1e-5)


def test_grad_check_square():
    assert _check(lambda p: (p["w"] * p["w"]).sum(), w=np.array(2.0)) < 1e-8


def test_grad_check_constant():
    assert _check(lambda p: (p["w"] * 0.0).sum() + 3.0, w=np.array(2.0)) == 0.0


def test_grad_check_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        _check(lambda p: (p["w"] * np.inf).sum(), w=np.array(1.0))


def test_grad_check_catches_a_wrong_gradient():
    def f(p):
        w = p["w"]
        return Tensor._make(w.data ** 2, (w,), lambda g: (g * 3 * w.data,)).sum()

    assert _check(f, w=np.array([1.0, 2.0])) > 0.1


RNG = np.random.default_rng(11)


@pytest.mark.parametrize(
    "name,f,arrays",
    [
        ("conv1d", lambda p: (conv1d(p["x"], p["w"], p["b"], stride=2, padding=1) ** 2).sum(),
         dict(x=RNG.normal(size=(2, 2, 9)), w=RNG.normal(size=(3, 2, 3)), b=RNG.normal(size=3))),
        ("conv_transpose1d", lambda p: (conv_transpose1d(p["x"], p["w"], p["b"], stride=3) ** 2).sum(),
         dict(x=RNG.normal(size=(2, 2, 4)), w=RNG.normal(size=(2, 3, 3)), b=RNG.normal(size=3))),
        ("batch_norm", lambda p: (batch_norm(p["x"], p["g"], p["b"], training=True) * p["u"]).sum(),
         dict(x=RNG.normal(size=(3, 2, 5)), g=RNG.normal(size=2), b=RNG.normal(size=2),
              u=RNG.normal(size=(3, 2, 5)))),
        ("max_pool", lambda p: (max_pool1d(p["x"]) ** 2).sum(), dict(x=RNG.normal(size=(2, 3, 8)))),
        ("adaptive_pool", lambda p: (adaptive_avg_pool1d(p["x"], 3) ** 2).sum(), dict(x=RNG.normal(size=(2, 7)))),
        ("relu", lambda p: (relu(p["x"]) ** 2).sum(), dict(x=RNG.normal(size=10) + 0.05)),
        ("logsumexp", lambda p: logsumexp(p["x"], axis=1).sum(), dict(x=RNG.normal(size=(3, 4)))),
        ("hypot_atan2", lambda p: (hypot(p["re"], p["im"]) + atan2(p["im"], p["re"]) * 2.0).sum(),
         dict(re=RNG.normal(size=6), im=RNG.normal(size=6))),
        ("matmul_broadcast", lambda p: exp((p["a"] @ p["b"]) + p["c"]).sum(),
         dict(a=RNG.normal(size=(3, 4)) * 0.3, b=RNG.normal(size=(4, 2)) * 0.3, c=RNG.normal(size=2) * 0.3)),
    ],
)
def test_gradients_match_finite_differences(name, f, arrays):
    assert _check(f, **arrays) < 1e-4, name


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (w * 2).sum()
    assert not y.requires_grad


def test_gradients_accumulate_over_shared_use():
    w = Tensor(np.array(3.0), requires_grad=True)
    (w * w + w).backward()
    assert w.grad == 7.0


# -- Adam -------------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameter():
    p = params(w=np.array([1.0, -2.0]))
    p["w"].grad = np.zeros(2)
    adam_step(p, OptimizerState(lr=0.1))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = params(w=np.array(1.0))
    p["w"].grad = np.array(1.0)
    state = OptimizerState(lr=0.1)
    adam_step(p, state)
    assert abs(p["w"].data - 0.9) < 1e-6
    assert state.step == 1
    np.testing.assert_array_equal(p["w"].grad, 1.0)


def reference_adam(grad_fn, w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_quadratic_matches_reference_and_converges():
    p = params(w=np.array(0.0))
    opt = Adam(p, lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        ((p["w"] - 3.0) * (p["w"] - 3.0)).backward()
        opt.step()
    ref = reference_adam(lambda w: 2 * (w - 3.0), 0.0, 0.1, 100)
    assert abs(float(p["w"].data) - ref) < 1e-12
    assert abs(float(p["w"].data) - 3.0) < 0.1


def test_adam_nan_gradient_names_parameter():
    p = params(alpha=np.zeros(2))
    p["alpha"].grad = np.array([0.0, np.nan])
    with pytest.raises(FloatingPointError, match="alpha"):
        adam_step(p, OptimizerState())


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(5)
        p = params(w=rng.normal(size=4))
        state = OptimizerState(lr=0.01)
        for _ in range(10):
            p["w"].grad = rng.normal(size=4)
            adam_step(p, state)
        return p["w"].data.tobytes()

    assert run() == run()


def test_parameter_set_shape_checks():
    p = params(w=np.zeros(3))
    with pytest.raises(ValueError, match="shape"):
        p.load_arrays({"w": np.zeros(4)})
    with pytest.raises(KeyError):
        p.load_arrays({"v": np.zeros(3)})
    assert p.gradients["w"].shape == (3,)
