import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tfcam.core import (Adam, DimensionError, NonFiniteGradientError, Parameter, Tape, Tensor,
                        backward, check_gradients, nn, ops)


def test_linear_examples():
    W = Parameter([[2.0, 0.0], [0.0, 3.0]], "W")
    b = Parameter([0.0, 0.0], "b")
    assert ops.linear(np.array([1.0, 0.0]), W, b).data.tolist() == [2.0, 0.0]
    W2 = Parameter(np.random.default_rng(0).normal(size=(2, 2)), "W2")
    assert ops.linear(np.zeros(2), W2, Parameter([5.0, 7.0], "b")).data.tolist() == [5.0, 7.0]


def test_linear_matches_loop_oracle():
    x = [1.0, 2.0]
    W = [[1.0, 1.0], [1.0, 1.0]]
    b = [1.0, 0.0]
    expected = [sum(x[i] * W[i][j] for i in range(2)) + b[j] for j in range(2)]
    assert expected == [4.0, 3.0]
    out = ops.linear(np.array(x), Parameter(W, "W"), Parameter(b, "b"))
    assert out.data.tolist() == expected


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        ops.linear(np.ones(3), Parameter(np.ones((2, 2)), "W"))


@pytest.mark.parametrize("x, expected", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([1000.0, 1000.0], [0.5, 0.5]),
    ([math.log(1), math.log(2), math.log(3)], [1 / 6, 2 / 6, 3 / 6]),
])
def test_softmax_examples(x, expected):
    np.testing.assert_allclose(ops.softmax(np.array(x)).data, expected, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(x, c):
    y = ops.softmax(x, axis=1).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ops.softmax(x + c, axis=1).data, y, atol=1e-12)


def test_softmax_axis_out_of_range():
    with pytest.raises(DimensionError):
        ops.softmax(np.ones((2, 2)), axis=2)


def test_softmax_mask_gives_exact_zeros():
    mask = nn.causal_mask(4)
    y = ops.softmax(np.random.default_rng(0).normal(size=(4, 4)), mask=mask).data
    assert np.all(y[mask] == 0.0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_sigmoid_tanh_at_zero():
    assert ops.sigmoid(np.array(0.0)).data == 0.5
    assert ops.tanh(np.array(0.0)).data == 0.0


def test_sigmoid_symmetry(rng):
    x = rng.normal(scale=10, size=100)
    np.testing.assert_allclose(ops.sigmoid(x).data + ops.sigmoid(-x).data, 1.0, atol=1e-15)


def test_sigmoid_extremes_are_finite():
    y = ops.sigmoid(np.array([-1000.0, 1000.0])).data
    assert y.tolist() == [0.0, 1.0]


# --- LSTM -----------------------------------------------------------------

def _scalar_lstm_step(x, h, c, W_x, W_h, b):
    """Independent loop implementation; gate blocks [i, f, g, o]."""
    hd = len(h)
    z = [b[k] + sum(x[i] * W_x[i][k] for i in range(len(x)))
         + sum(h[i] * W_h[i][k] for i in range(hd)) for k in range(4 * hd)]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h_new, c_new = [], []
    for u in range(hd):
        i, f = sig(z[u]), sig(z[hd + u])
        g, o = math.tanh(z[2 * hd + u]), sig(z[3 * hd + u])
        c_u = f * c[u] + i * g
        c_new.append(c_u)
        h_new.append(o * math.tanh(c_u))
    return h_new, c_new


def test_lstm_cell_zero_params_gives_zero_state():
    params = {"W_x": Parameter(np.zeros((3, 8)), "W_x"), "W_h": Parameter(np.zeros((2, 8)), "W_h"),
              "b": Parameter(np.zeros(8), "b")}
    h, c = nn.lstm_cell(np.ones((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)), params)
    assert np.all(h.data == 0.0) and np.all(c.data == 0.0)


def test_lstm_cell_saturated_forget_gate_keeps_cell():
    hd = 2
    b = np.zeros(4 * hd)
    b[hd:2 * hd] = 50.0
    b[:hd] = -50.0
    params = {"W_x": Parameter(np.zeros((2, 4 * hd)), "W_x"),
              "W_h": Parameter(np.zeros((hd, 4 * hd)), "W_h"), "b": Parameter(b, "b")}
    c_prev = np.array([[0.7, -1.3]])
    _, c = nn.lstm_cell(np.array([[0.4, -0.2]]), np.zeros((1, hd)), c_prev, params)
    np.testing.assert_allclose(c.data, c_prev, atol=1e-8)


def test_lstm_cell_matches_scalar_oracle(rng):
    params = nn.init_lstm(rng, 2, 2, "cell")
    x, h0, c0 = rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
    h, c = nn.lstm_cell(x, h0, c0, params)
    eh, ec = _scalar_lstm_step(x[0], h0[0], c0[0], params["W_x"].data.tolist(),
                               params["W_h"].data.tolist(), params["b"].data.tolist())
    np.testing.assert_allclose(h.data[0], eh, rtol=0, atol=1e-14)
    np.testing.assert_allclose(c.data[0], ec, rtol=0, atol=1e-14)
    assert np.all(np.abs(h.data) < 1)


def test_lstm_cell_shape_mismatch(rng):
    params = nn.init_lstm(rng, 2, 3, "cell")
    with pytest.raises(DimensionError):
        nn.lstm_cell(np.ones((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), params)


def test_bilstm_single_step_uses_same_input(rng):
    params = nn.init_bilstm(rng, 3, 2, "bi")
    x = rng.normal(size=(2, 1, 3))
    out = nn.bilstm(x, params).data
    zeros = np.zeros((2, 2))
    hf, _ = nn.lstm_cell(x[:, 0], zeros, zeros, params["fwd"])
    hb, _ = nn.lstm_cell(x[:, 0], zeros, zeros, params["bwd"])
    np.testing.assert_allclose(out[:, 0], np.concatenate([hf.data, hb.data], axis=1), atol=1e-15)


def test_bilstm_manual_unroll(rng):
    params = nn.init_bilstm(rng, 3, 2, "bi")
    x = rng.normal(size=(1, 2, 3))
    zeros = np.zeros((1, 2))
    f0, fc0 = nn.lstm_cell(x[:, 0], zeros, zeros, params["fwd"])
    f1, _ = nn.lstm_cell(x[:, 1], f0, fc0, params["fwd"])
    b1, bc1 = nn.lstm_cell(x[:, 1], zeros, zeros, params["bwd"])
    b0, _ = nn.lstm_cell(x[:, 0], b1, bc1, params["bwd"])
    out = nn.bilstm(x, params).data
    np.testing.assert_allclose(out[0, 0], np.r_[f0.data[0], b0.data[0]], atol=1e-15)
    np.testing.assert_allclose(out[0, 1], np.r_[f1.data[0], b1.data[0]], atol=1e-15)


def test_bilstm_reversal_swaps_halves(rng):
    params = nn.init_bilstm(rng, 3, 4, "bi")
    swapped = {"fwd": params["bwd"], "bwd": params["fwd"]}
    x = rng.normal(size=(2, 5, 3))
    out = nn.bilstm(x, params).data
    rev = nn.bilstm(x[:, ::-1], swapped).data
    np.testing.assert_allclose(rev[:, ::-1, :4], out[:, :, 4:], atol=1e-14)
    np.testing.assert_allclose(rev[:, ::-1, 4:], out[:, :, :4], atol=1e-14)


def test_bilstm_rejects_empty_time_axis(rng):
    with pytest.raises(DimensionError):
        nn.bilstm(np.zeros((1, 0, 3)), nn.init_bilstm(rng, 3, 2, "bi"))


# --- attention ------------------------------------------------------------

def _identity_attention(D):
    params = {}
    for k in "qkvo":
        params[f"W_{k}"] = Parameter(np.eye(D), f"W_{k}")
        params[f"b_{k}"] = Parameter(np.zeros(D), f"b_{k}")
    return params


def test_attention_single_step_weight_is_one(rng):
    _, w = nn.multi_head_self_attention(rng.normal(size=(2, 1, 4)),
                                        nn.init_attention(rng, 4, "a"), n_heads=2)
    assert np.all(w.data == 1.0)


def test_attention_identical_keys_are_uniform(rng):
    x = np.repeat(rng.normal(size=(1, 1, 4)), 3, axis=1)
    _, w = nn.multi_head_self_attention(x, nn.init_attention(rng, 4, "a"), n_heads=2)
    np.testing.assert_allclose(w.data, 1 / 3, atol=1e-15)


def test_attention_toy_matches_hand_computation():
    x = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    a = 1 / math.sqrt(2)  # q.k / sqrt(d) on the diagonal, 0 off it
    hi, lo = math.exp(a) / (math.exp(a) + 1), 1 / (math.exp(a) + 1)
    out, w = nn.multi_head_self_attention(x, _identity_attention(2), n_heads=1)
    np.testing.assert_allclose(w.data[0, 0], [[hi, lo], [lo, hi]], atol=1e-15)
    np.testing.assert_allclose(out.data[0], [[hi, lo], [lo, hi]], atol=1e-15)
    _, wc = nn.multi_head_self_attention(x, _identity_attention(2), n_heads=1, causal=True)
    np.testing.assert_allclose(wc.data[0, 0], [[1.0, 0.0], [lo, hi]], atol=1e-15)


def test_attention_errors(rng):
    with pytest.raises(DimensionError, match="divisible"):
        nn.multi_head_self_attention(np.ones((1, 2, 6)), nn.init_attention(rng, 6, "a"), 4)
    with pytest.raises(DimensionError):
        nn.multi_head_self_attention(np.ones((1, 0, 4)), nn.init_attention(rng, 4, "a"), 2)


def test_positional_encoding_values():
    pe = nn.positional_encoding(6, 8)
    assert pe[0, 0] == 0.0 and pe[0, 1] == 1.0
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[3, 5] == pytest.approx(math.cos(3 / 10000 ** (4 / 8)), abs=1e-15)
    assert np.all(np.abs(pe) <= 1)
    with pytest.raises(ValueError):
        nn.positional_encoding(4, 5)


# --- loss, backward, optimizer -------------------------------------------

@pytest.mark.parametrize("z, y, w, expected", [
    (0.0, 1.0, 1.0, math.log(2)),
    (0.0, 0.0, 1.0, math.log(2)),
    (2.0, 1.0, 3.0, 3 * math.log(1 + math.exp(-2))),
])
def test_weighted_bce_examples(z, y, w, expected):
    loss = ops.weighted_bce_loss(np.array([z]), np.array([y]), w)
    assert float(loss.data) == pytest.approx(expected, abs=1e-15)


def test_weighted_bce_extreme_logits_finite():
    loss = ops.weighted_bce_loss(np.array([800.0, -800.0]), np.array([0.0, 1.0]), 2.0)
    assert float(loss.data) == pytest.approx((800 + 2 * 800) / 2)


def test_weighted_bce_rejects_bad_labels():
    with pytest.raises(ValueError):
        ops.weighted_bce_loss(np.array([0.0]), np.array([2.0]))


def test_backward_sum_gives_ones():
    w = Parameter(np.arange(4.0), "w")
    with Tape() as tape:
        loss = ops.sum(w)
    backward(tape, loss)
    assert w.grad.tolist() == [1.0] * 4


def test_backward_square_of_product():
    w = Parameter(3.0, "w")
    with Tape() as tape:
        p = w * 2.0
        loss = p * p
    backward(tape, loss)
    assert float(w.grad) == 24.0


def test_backward_requires_scalar():
    w = Parameter(np.ones(3), "w")
    with Tape() as tape:
        out = w * 2.0
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, out)


def test_backward_accumulates_reused_parameter():
    w = Parameter(2.0, "w")
    with Tape() as tape:
        loss = w * w + w  # d/dw = 2w + 1
    backward(tape, loss)
    assert float(w.grad) == 5.0


def test_tape_replay_doubles_gradients_exactly(rng):
    params = nn.init_lstm(rng, 3, 4, "l")
    x = rng.normal(size=(2, 4, 3))

    def run():
        with Tape() as tape:
            loss = ops.sum(nn.lstm(x, params) * nn.lstm(x, params))
        backward(tape, loss)

    run()
    once = {k: p.grad.copy() for k, p in params.items()}
    run()
    for k, p in params.items():
        assert np.array_equal(p.grad, 2 * once[k])


def test_tape_records_in_execution_order():
    a = Parameter(1.0, "a")
    with Tape() as tape:
        b = a * 2.0
        c = ops.tanh(b)
        d = c + 1.0
    assert [r.out for r in tape.records] == [b, c, d]


def test_no_recording_without_tape():
    a = Parameter(1.0, "a")
    assert not (a * 2.0).requires_grad


def _gradcheck(build, tensors):
    errors = check_gradients(build, tensors)
    assert max(errors.values()) < 1e-4, errors


@pytest.mark.parametrize("name, fn", [
    ("add", lambda a, b: ops.add(a, b)),
    ("sub", lambda a, b: ops.sub(a, b)),
    ("mul", lambda a, b: ops.mul(a, b)),
    ("div", lambda a, b: ops.div(a, ops.add(ops.mul(b, b), 1.0))),
    ("matmul", lambda a, b: ops.matmul(a, ops.transpose(b, (1, 0)))),
    ("tanh", lambda a, b: ops.tanh(a) * b),
    ("sigmoid", lambda a, b: ops.sigmoid(a) * b),
    ("relu", lambda a, b: ops.relu(a) * b),
    ("exp", lambda a, b: ops.exp(a) * b),
    ("softmax0", lambda a, b: ops.softmax(a, axis=0) * b),
    ("softmax1", lambda a, b: ops.softmax(a, axis=1, mask=np.triu(np.ones((3, 4), bool), 1)) * b),
    ("concat", lambda a, b: ops.concat([a, b], axis=1)),
    ("stack", lambda a, b: ops.stack([a, b], axis=2)),
    ("flip", lambda a, b: ops.flip(a, 1) * b),
    ("getitem", lambda a, b: a[:, 1:3] * b[:, :2]),
    ("fancy_getitem", lambda a, b: a[:, [0, 0, 2]] * b[:, :3]),
    ("reshape", lambda a, b: ops.reshape(a, (4, 3)) * ops.reshape(b, (4, 3))),
    ("mean", lambda a, b: ops.mean(a * b, axis=0)),
    ("broadcast", lambda a, b: a * b[0]),
])
def test_primitive_gradients(name, fn, rng):
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.normal(size=(3, 4)), "b")
    weights = rng.normal(size=fn(a, b).shape)
    _gradcheck(lambda: ops.sum(fn(a, b) * weights), [a, b])


def test_linear_and_layer_norm_gradients(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True, name="x")
    lin = nn.init_linear(rng, 4, 5, "lin")
    gamma = Parameter(rng.normal(size=5), "gamma")
    beta = Parameter(rng.normal(size=5), "beta")
    weights = rng.normal(size=(2, 3, 5))
    _gradcheck(lambda: ops.sum(ops.layer_norm(ops.linear(x, lin["W"], lin["b"]), gamma, beta)
                               * weights), [x, lin["W"], lin["b"], gamma, beta])


def test_bce_gradient(rng):
    z = Parameter(rng.normal(scale=3, size=6), "z")
    y = np.array([0, 1, 1, 0, 0, 1], dtype=float)
    _gradcheck(lambda: ops.weighted_bce_loss(z, y, 4.0), [z])


def test_recurrent_and_attention_gradients(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True, name="x")
    bi = nn.init_bilstm(rng, 4, 3, "bi")
    g = nn.init_gru(rng, 4, 3, "gru")
    enc = nn.init_encoder_layer(rng, 4, "enc")
    w1, w2, w3 = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 4))

    def build():
        z, _ = nn.encoder_layer(x, enc, n_heads=2, causal=True)
        return (ops.sum(nn.bilstm(x, bi) * w1) + ops.sum(nn.gru(x, g, reverse=True) * w2)
                + ops.sum(z * w3))

    _gradcheck(build, [x] + nn.iter_parameters([bi, g, enc]))


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]), "p")
    opt = Adam([p], lr=0.1)
    opt.step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.zeros(3), "p")
    opt = Adam([p], lr=0.01)
    p.grad = np.array([0.5, -3.0, 1e3])
    opt.step()
    np.testing.assert_allclose(np.abs(p.data), 0.01, rtol=1e-6)
    assert np.all(np.sign(p.data) == -np.sign([0.5, -3.0, 1e3]))


def test_adam_is_deterministic(rng):
    start = rng.normal(size=(4, 4))
    grads = [rng.normal(size=(4, 4)) for _ in range(5)]

    def run():
        p = Parameter(start.copy(), "p")
        opt = Adam([p], lr=0.05)
        for g in grads:
            p.grad = g.copy()
            opt.step()
        return p.data

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_gradient():
    p = Parameter(np.zeros(2), "weights.W")
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteGradientError, match="weights.W"):
        Adam([p]).step()


def test_zero_grad_resets():
    p = Parameter(np.ones(3), "p")
    p.grad += 5
    p.zero_grad()
    assert np.all(p.grad == 0) and p.grad.shape == p.shape
