import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fxcast.errors import ContractError, DimensionError, ParameterError
from fxcast.numerics import (
    Adam,
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    conv1d_causal,
    elementwise,
    layer_norm,
    linear,
    lstm_layer,
    matmul,
    reduce,
    relu,
    sigmoid,
    softmax,
    tanh,
)
from fxcast.numerics import ops
from fxcast.numerics.gradcheck import check_gradients, numeric_gradient, relative_error


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    b = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(b)).data, b)


def test_matmul_hand():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient_is_ones_times_bT():
    rng = np.random.default_rng(1)
    a, b = param(rng, 5, 7), Tensor(rng.standard_normal((7, 3)))
    with Tape() as tape:
        s = matmul(a, b).sum()
    tape.backward(s)
    np.testing.assert_allclose(a.grad, np.ones((5, 3)) @ b.data.T, atol=1e-12)
    fd = numeric_gradient(lambda: matmul(a, b).sum(), a)
    assert relative_error(a.grad, fd) < 1e-8


# ---------------------------------------------------------------- conv


def brute_conv(x, w, d):
    T, K = len(x), len(w)
    out = []
    for t in range(T):
        acc = 0.0
        for k in range(K):
            src = t - (K - 1 - k) * d
            if src >= 0:
                acc += w[k] * x[src]
        out.append(acc)
    return out


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((6, 3))
    out = conv1d_causal(Tensor(x), Tensor(np.eye(3)[None]), dilation=1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_dilated_example_matches_brute_force():
    x = [1.0, 2.0, 3.0, 4.0]
    expected = brute_conv(x, [1.0, 1.0], 2)
    assert expected == [1.0, 2.0, 4.0, 6.0]
    out = conv1d_causal(Tensor(np.array(x)[:, None]), Tensor(np.ones((2, 1, 1))), dilation=2)
    np.testing.assert_array_equal(out.data[:, 0], expected)


def test_conv_asymmetric_kernel_brute_force():
    rng = np.random.default_rng(3)
    x, w = rng.standard_normal(9), rng.standard_normal(3)
    out = conv1d_causal(Tensor(x[:, None]), Tensor(w[:, None, None]), dilation=2)
    np.testing.assert_allclose(out.data[:, 0], brute_conv(x, w, 2), atol=1e-12)


def test_conv_rejects_bad_dilation():
    with pytest.raises(ParameterError):
        conv1d_causal(Tensor(np.ones((4, 1))), Tensor(np.ones((2, 1, 1))), dilation=0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(0, 9), k=st.integers(1, 4), d=st.integers(1, 3))
def test_conv_causality(seed, t, k, d):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((10, 2))
    w = Tensor(rng.standard_normal((k, 2, 3)))
    base = conv1d_causal(Tensor(x), w, d).data
    x2 = x.copy()
    x2[t + 1 :] += rng.standard_normal(x2[t + 1 :].shape)
    out = conv1d_causal(Tensor(x2), w, d).data
    np.testing.assert_array_equal(out[: t + 1], base[: t + 1])


# ---------------------------------------------------------------- elementwise


def test_relu_and_sigmoid_values():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert sigmoid(Tensor(0.0)).data == 0.5


def test_elementwise_dispatch_and_errors():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
    np.testing.assert_array_equal(elementwise("sub", a, b).data, [-2.0, -3.0])
    np.testing.assert_array_equal(elementwise("mul", a, Tensor(2.0)).data, [2.0, 4.0])
    with pytest.raises(DimensionError):
        elementwise("add", a, Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ParameterError):
        elementwise("cosh", a)


@pytest.mark.parametrize("kind", ["relu", "gelu", "tanh", "sigmoid"])
def test_unary_gradients(kind):
    rng = np.random.default_rng(7)
    x = param(rng, 4, 5)
    x.data[np.abs(x.data) < 1e-3] += 0.01  # keep relu away from its kink
    rep = check_gradients(lambda: elementwise(kind, x).sum(), [x])
    assert max(rep.values()) < 1e-6


def test_tanh_gradient_elementwise_rel():
    rng = np.random.default_rng(11)
    x = param(rng, 20)
    with Tape() as tape:
        y = tanh(x).sum()
    tape.backward(y)
    fd = numeric_gradient(lambda: tanh(x).sum(), x)
    assert np.max(np.abs(x.grad - fd) / np.abs(fd)) < 1e-6


# ---------------------------------------------------------------- softmax


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_direct_evaluation():
    e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
    expected = [v / sum(e) for v in e]
    np.testing.assert_allclose(softmax(Tensor([1.0, 2.0, 3.0])).data, expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-50, 50))
def test_softmax_shift_invariance_and_simplex(seed, shift):
    x = np.random.default_rng(seed).standard_normal((3, 5)) * 10
    a = softmax(Tensor(x), axis=1).data
    b = softmax(Tensor(x + shift), axis=1).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        softmax(Tensor(np.ones((2, 2))), axis=3)


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_slice_is_zero():
    out = layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_layer_norm_hand_value():
    out = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-15)


def test_layer_norm_gradients():
    rng = np.random.default_rng(5)
    x, g, b = param(rng, 3, 6), param(rng, 6), param(rng, 6)
    w = rng.standard_normal((3, 6))
    rep = check_gradients(lambda: (layer_norm(x, g, b) * w).sum(), [x, g, b])
    assert max(rep.values()) < 1e-5


# ---------------------------------------------------------------- reduce


def test_reduce_values():
    assert reduce(Tensor([2.0, 4.0, 6.0]), "mean").data == 4.0
    np.testing.assert_array_equal(reduce(Tensor(np.ones((3, 4))), "sum", axis=0).data, [3.0] * 4)


def test_mean_gradient_is_one_over_n():
    x = Tensor(np.arange(5.0), requires_grad=True)
    with Tape() as tape:
        m = reduce(x, "mean")
    tape.backward(m)
    np.testing.assert_array_equal(x.grad, np.full(5, 0.2))


# ---------------------------------------------------------------- backward


def test_backward_sum_and_square():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        s = x.sum()
    backward(tape, s)
    np.testing.assert_array_equal(x.grad, np.ones(3))
    with Tape() as tape:
        s = (x * x).sum()
    backward(tape, s)
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_rejects_non_scalar_and_foreign_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)
    with Tape() as other:
        z = x.sum()
    with pytest.raises(ContractError):
        tape.backward(z)
    assert len(other) == 1


def test_tape_is_topologically_ordered():
    rng = np.random.default_rng(0)
    x = param(rng, 3)
    with Tape() as tape:
        tanh(x * x + x).sum()
    ids = {id(n.out): i for i, n in enumerate(tape.nodes)}
    for i, node in enumerate(tape.nodes):
        for p in node.parents:
            assert ids.get(id(p), -1) < i


def test_intermediate_gradients_shapes():
    rng = np.random.default_rng(2)
    x = param(rng, 4, 3)
    with Tape() as tape:
        h = relu(x @ Tensor(rng.standard_normal((3, 5))))
        s = h.mean()
    tape.backward(s)
    assert h.grad.shape == h.shape


def mlp_loss(params, x, y):
    w1, b1, w2, b2 = params
    h = tanh(linear(x, w1, b1))
    pred = linear(h, w2, b2)
    d = pred - y
    return (d * d).mean()


@pytest.mark.parametrize("seed", range(20))
def test_composite_mlp_gradients(seed):
    rng = np.random.default_rng(seed)
    params = [param(rng, 4, 6), param(rng, 6), param(rng, 6, 2), param(rng, 2)]
    x, y = Tensor(rng.standard_normal((5, 4))), Tensor(rng.standard_normal((5, 2)))
    rep = check_gradients(lambda: mlp_loss(params, x, y), params)
    assert max(rep.values()) < 1e-4


def test_replay_determinism():
    def grads():
        rng = np.random.default_rng(9)
        params = [param(rng, 4, 6), param(rng, 6), param(rng, 6, 2), param(rng, 2)]
        x, y = Tensor(rng.standard_normal((5, 4))), Tensor(rng.standard_normal((5, 2)))
        with Tape() as tape:
            loss = mlp_loss(params, x, y)
        tape.backward(loss)
        return [p.grad.tobytes() for p in params]

    assert grads() == grads()


# ---------------------------------------------------------------- shape ops


def test_shape_op_gradients():
    rng = np.random.default_rng(4)
    a, b = param(rng, 2, 3, 4), param(rng, 2, 3, 4)
    w = rng.standard_normal((2, 8, 3))

    def f():
        c = ops.concat([a, b], axis=2)
        c = ops.transpose(c, (0, 2, 1))
        return (c * w).sum() + (ops.index(a, (slice(None), -1)) * 2.0).sum()

    rep = check_gradients(f, [a, b])
    assert max(rep.values()) < 1e-8


def test_broadcast_add_gradient():
    rng = np.random.default_rng(4)
    a, b = param(rng, 3, 4), param(rng, 4)
    rep = check_gradients(lambda: ((a + b) * (a - b) / (b * b + 1.0)).sum(), [a, b])
    assert max(rep.values()) < 1e-7


def test_conv_gradients():
    rng = np.random.default_rng(8)
    x, k = param(rng, 2, 7, 3), param(rng, 3, 3, 4)
    w = rng.standard_normal((2, 7, 4))
    rep = check_gradients(lambda: (conv1d_causal(x, k, 2) * w).sum(), [x, k])
    assert max(rep.values()) < 1e-7


# ---------------------------------------------------------------- lstm


def test_lstm_single_step_hand_trace():
    wx, wh, bias = 0.5, -0.3, 0.1
    x0 = 0.8
    # gate pre-activations all share the scalar weights in this trace
    z = wx * x0 + wh * 0.0 + bias
    sg = 1.0 / (1.0 + math.exp(-z))
    c = sg * 0.0 + sg * math.tanh(z)
    h = sg * math.tanh(c)
    out = lstm_layer(
        Tensor([[[x0]]]), Tensor(np.full((1, 4), wx)), Tensor(np.full((1, 4), wh)), Tensor(np.full(4, bias))
    )
    assert abs(out.data[0, 0, 0] - h) < 1e-12


def test_lstm_zero_input_zero_state():
    rng = np.random.default_rng(0)
    out = lstm_layer(Tensor(np.zeros((2, 5, 3))), Tensor(rng.standard_normal((3, 8))),
                     Tensor(rng.standard_normal((2, 8))), Tensor(np.zeros(8)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_lstm_gradients():
    rng = np.random.default_rng(12)
    x, wx, wh, b = param(rng, 2, 5, 3), param(rng, 3, 8), param(rng, 2, 8), param(rng, 8)
    w = rng.standard_normal((2, 5, 2))
    rep = check_gradients(lambda: (lstm_layer(x, wx, wh, b) * w).sum(), [x, wx, wh, b])
    assert max(rep.values()) < 1e-6


# ---------------------------------------------------------------- adam


def test_adam_first_step_is_lr_sign():
    g = np.array([0.3, -2.0, 5e-3])
    p = np.zeros(3)
    (new,) = adam_step(AdamState(lr=1e-3), [p], [g])
    np.testing.assert_allclose(new, -1e-3 * np.sign(g), rtol=1e-5)


def test_adam_zero_gradient_keeps_params_and_decays_m():
    state = AdamState(lr=1e-3)
    p = [np.array([1.0, 2.0])]
    p = adam_step(state, p, [np.array([1.0, -1.0])])
    before = p[0].copy()
    m_before = np.abs(state.m[0]).copy()
    # a zero gradient still moves params through momentum; reset momentum to test the zero case
    fresh = AdamState(lr=1e-3)
    out = adam_step(fresh, [before], [np.zeros(2)])
    np.testing.assert_array_equal(out[0], before)
    adam_step(state, p, [np.zeros(2)])
    assert np.all(np.abs(state.m[0]) < m_before)
    assert np.all(state.v[0] >= 0)


def test_adam_three_steps_hand_trace():
    # f(x) = (x - 3)^2, x0 = 0, scalar recurrence written out by hand
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x, m, v = 0.0, 0.0, 0.0
    trace = []
    for t in (1, 2, 3):
        g = 2.0 * (x - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(x)

    state = AdamState(lr=lr)
    p = [np.array([0.0])]
    got = []
    for _ in range(3):
        p = adam_step(state, p, [2.0 * (p[0] - 3.0)])
        got.append(p[0][0])
    np.testing.assert_allclose(got, trace, atol=1e-12, rtol=0)
    assert state.step == 3


def test_adam_lr_zero_is_identity():
    rng = np.random.default_rng(0)
    params = [rng.standard_normal((3, 2)), rng.standard_normal(4)]
    state = AdamState(lr=0.0)
    out = params
    for _ in range(5):
        out = adam_step(state, out, [rng.standard_normal(p.shape) for p in params])
    for a, b in zip(out, params):
        np.testing.assert_array_equal(a, b)


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step(AdamState(), [np.zeros(3)], [np.zeros(4)])


def test_adam_optimizer_reduces_quadratic():
    w = Tensor(np.array([5.0, -4.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(300):
        with Tape() as tape:
            loss = (w * w).sum()
        tape.backward(loss)
        opt.step()
    assert np.all(np.abs(w.data) < 0.05)
