import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlstmfcn import layers as ly
from mlstmfcn import tensor as tn
from mlstmfcn import verify
from mlstmfcn.errors import ConfigurationError, DimensionError
from mlstmfcn.oracles import lstm_step_scalar


def conv_params(kernels, F=None):
    F = kernels.shape[0]
    return ly.ConvBlockParams(kernels, np.zeros(F), np.ones(F), np.zeros(F), np.zeros(F), np.ones(F))


def lstm_params(arrays):
    return ly.LSTMParams(**arrays)


def zero_lstm(H, D, **biases):
    arrays = verify._lstm_arrays(np.random.default_rng(0), H, D, scale=0.0)
    for k, v in biases.items():
        arrays[k] = np.full(H, float(v))
    return lstm_params(arrays)


# -- conv block -------------------------------------------------------------

def test_conv_block_defaults():
    p = conv_params(np.ones((2, 3, 1)))
    assert p.bn_momentum == 0.99 and p.bn_epsilon == 1e-3


def test_conv_block_zero_kernels_give_zero():
    p = conv_params(np.zeros((3, 3, 2)))
    out = ly.conv_block_forward(np.ones((4, 2, 5)), p, ly.TRAIN)
    assert np.array_equal(out.data, np.zeros((4, 3, 5)))


def test_conv_block_train_statistics(rng):
    x = rng.standard_normal((6, 2, 9))
    K = rng.standard_normal((3, 3, 2))
    p = conv_params(K)
    pre = tn.conv1d(x, K, np.zeros(3)).data
    y, mu, var = tn.batch_norm(pre, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), 1e-3, True)
    y = y.data
    assert np.abs(y.mean(axis=(0, 2))).max() < 1e-10
    expect = var / (var + 1e-3)
    assert np.allclose(y.var(axis=(0, 2)), expect, rtol=1e-6)
    out = ly.conv_block_forward(x, p, ly.TRAIN)
    assert np.array_equal(out.data, np.maximum(y, 0))


def test_conv_block_running_update(rng):
    x = rng.standard_normal((3, 2, 7))
    K = rng.standard_normal((2, 3, 2))
    p = conv_params(K)
    pre = tn.conv1d(x, K, np.zeros(2)).data
    ly.conv_block_forward(x, p, ly.TRAIN)
    assert np.allclose(p.bn_running_mean, 0.01 * pre.mean(axis=(0, 2)), rtol=1e-12)
    assert np.allclose(p.bn_running_var, 0.99 + 0.01 * pre.var(axis=(0, 2)), rtol=1e-12)
    assert np.all(p.bn_running_var > 0)


def test_conv_block_infer_closed_form(rng):
    x = rng.standard_normal((1, 6))
    p = conv_params(np.ones((1, 1, 1)))
    before = p.bn_running_mean.copy()
    out = ly.conv_block_forward(x, p, ly.INFER)
    assert np.allclose(out.data, np.maximum(x / math.sqrt(1.001), 0), rtol=1e-15, atol=0)
    assert np.array_equal(p.bn_running_mean, before)


def test_conv_block_rejects_empty_valid_positions():
    p = conv_params(np.ones((1, 1, 1)))
    with pytest.raises(DimensionError):
        ly.conv_block_forward(np.ones((1, 1, 3)), p, ly.TRAIN, np.zeros((1, 3), dtype=bool))


# -- squeeze and excite -----------------------------------------------------

def test_se_hand_example():
    p = ly.SEParams(np.array([[1.0, 0.0]]), np.array([[1.0], [0.0]]), 2)
    out = ly.se_block(np.array([[1.0, 1.0], [3.0, 5.0]]), p).data
    s1 = 1 / (1 + math.exp(-1))
    assert np.allclose(out, [[s1, s1], [1.5, 2.5]], rtol=1e-15)


def test_se_zero_weights_and_zero_input(rng):
    p = ly.SEParams(np.zeros((2, 4)), np.zeros((4, 2)), 2)
    x = rng.standard_normal((4, 6))
    assert np.array_equal(ly.se_block(x, p).data, 0.5 * x)
    q = ly.SEParams(rng.standard_normal((2, 4)), rng.standard_normal((4, 2)), 2)
    assert np.array_equal(ly.se_block(np.zeros((4, 6)), q).data, np.zeros((4, 6)))


def test_se_unit_gate_is_identity(rng):
    x = rng.standard_normal((2, 4, 5))
    assert np.array_equal(ly.se_rescale(x, np.ones((2, 4))).data, x)


def test_se_rejects_indivisible_channels():
    with pytest.raises(ConfigurationError):
        ly.SEParams(np.zeros((1, 3)), np.zeros((3, 1)), 2)


def test_se_algebra_suite():
    e1, e2, e3 = verify.se_algebra_errors()
    assert e1 <= 1e-15 and e2 == 0.0 and e3 <= 1e-15


# -- LSTM -------------------------------------------------------------------

def test_lstm_zero_fixed_point(rng):
    h, m = ly.lstm_step(rng.standard_normal(2), np.zeros(3), np.zeros(3), zero_lstm(3, 2))
    assert np.array_equal(h.data, np.zeros(3)) and np.array_equal(m.data, np.zeros(3))


def test_lstm_saturated_gates():
    p = zero_lstm(1, 1, b_u=20, b_c=20, b_f=-20, b_o=20)
    h, m = ly.lstm_step(np.zeros(1), np.zeros(1), np.zeros(1), p)
    assert abs(m.item() - 1.0) < 1e-8
    assert abs(h.item() - math.tanh(1.0)) < 1e-8


def test_lstm_matches_scalar_oracle(rng):
    arrays = verify._lstm_arrays(rng, 3, 2, scale=1.0)
    x, h0, m0 = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(3)
    h, m = ly.lstm_step(x, h0, m0, lstm_params(arrays))
    h2, m2 = lstm_step_scalar(x, h0, m0, arrays)
    assert np.abs(h.data - h2).max() <= 1e-12 and np.abs(m.data - m2).max() <= 1e-12


def test_lstm_scan_unrolls(rng):
    p = lstm_params(verify._lstm_arrays(rng, 3, 2))
    seq = rng.standard_normal((2, 2))
    h1, m1 = ly.lstm_step(seq[:, 0], np.zeros(3), np.zeros(3), p)
    h2, _ = ly.lstm_step(seq[:, 1], h1, m1, p)
    assert np.array_equal(ly.lstm_scan(seq, [True, True], p).data, h2.data)


def test_lstm_scan_all_false_mask(rng):
    p = lstm_params(verify._lstm_arrays(rng, 3, 2))
    assert np.array_equal(ly.lstm_scan(rng.standard_normal((2, 4)), [False] * 4, p).data, np.zeros(3))


def test_lstm_scan_mask_length_error(rng):
    p = lstm_params(verify._lstm_arrays(rng, 3, 2))
    with pytest.raises(DimensionError):
        ly.lstm_scan(np.ones((2, 4)), [True] * 3, p)


def test_lstm_step_shape_error(rng):
    p = lstm_params(verify._lstm_arrays(rng, 3, 2))
    with pytest.raises(DimensionError):
        ly.lstm_step(np.ones(3), np.zeros(3), np.zeros(3), p)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31))
def test_lstm_scan_padding_invariance(H, D, S, pad, seed):
    r = np.random.default_rng(seed)
    p = lstm_params(verify._lstm_arrays(r, H, D, scale=1.0))
    seq = r.standard_normal((D, S))
    padded = np.concatenate([seq, np.zeros((D, pad))], axis=1)
    mask = [True] * S + [False] * pad
    assert np.array_equal(ly.lstm_scan(seq, [True] * S, p).data, ly.lstm_scan(padded, mask, p).data)
    att = ly.AttentionParams(*verify._attn_arrays(r, H).values())
    assert np.array_equal(
        ly.attention_lstm_scan(seq, [True] * S, p, att).data,
        ly.attention_lstm_scan(padded, mask, p, att).data,
    )


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.floats(-5, 5), st.integers(0, 2**31))
def test_lstm_state_bounds(H, D, m_scale, seed):
    r = np.random.default_rng(seed)
    p = lstm_params(verify._lstm_arrays(r, H, D, scale=2.0))
    m_prev = m_scale * r.standard_normal(H)
    h, m = ly.lstm_step(r.standard_normal(D), r.uniform(-1, 1, H), m_prev, p)
    assert np.all(np.abs(m.data) <= np.abs(m_prev) + 1)
    assert np.all(np.abs(h.data) < 1)


# -- attention --------------------------------------------------------------

def test_attention_single_annotation(rng):
    att = ly.AttentionParams(*verify._attn_arrays(rng, 3).values())
    ann = rng.standard_normal((3, 1))
    ctx, w = ly.attention_context(ann, rng.standard_normal(3), att)
    assert np.array_equal(w.data, [1.0]) and np.array_equal(ctx.data, ann[:, 0])


def test_attention_identical_annotations(rng):
    att = ly.AttentionParams(*verify._attn_arrays(rng, 3).values())
    h = np.array([0.25, -1.5, 2.0])
    ctx, _ = ly.attention_context(np.repeat(h[:, None], 4, axis=1), rng.standard_normal(3), att)
    assert np.allclose(ctx.data, h, rtol=1e-15, atol=0)


def test_attention_forced_scores():
    # one-unit scorer: e_j = v * tanh(w_a h_j); choose v, w_a so that e = [ln 2, 0]
    h = np.array([[0.5, 0.0]])
    v = math.log(2) / math.tanh(0.5)
    att = ly.AttentionParams(np.zeros((1, 1)), np.ones((1, 1)), np.array([v]))
    ctx, w = ly.attention_context(h, np.zeros(1), att)
    assert np.allclose(w.data, [2 / 3, 1 / 3], rtol=1e-14)
    assert np.allclose(ctx.data, (2 * h[:, 0] + h[:, 1]) / 3, rtol=1e-14)


def test_attention_weights_are_probabilities(rng):
    for _ in range(20):
        att = ly.AttentionParams(*verify._attn_arrays(rng, 4).values())
        _, w = ly.attention_context(rng.standard_normal((4, 7)), rng.standard_normal(4), att)
        assert np.all(w.data >= 0) and abs(w.data.sum() - 1) <= 1e-12


def test_attention_lstm_single_step_and_zero_params(rng):
    p = lstm_params(verify._lstm_arrays(rng, 3, 2))
    att = ly.AttentionParams(*verify._attn_arrays(rng, 3).values())
    x = rng.standard_normal((2, 1))
    assert np.allclose(ly.attention_lstm_scan(x, [True], p, att).data, ly.lstm_scan(x, [True], p).data, rtol=1e-15)
    out = ly.attention_lstm_scan(rng.standard_normal((2, 5)), [True] * 5, zero_lstm(3, 2), att)
    assert np.array_equal(out.data, np.zeros(3))


def test_attention_lstm_composes(rng):
    p = lstm_params(verify._lstm_arrays(rng, 3, 2))
    att = ly.AttentionParams(*verify._attn_arrays(rng, 3).values())
    seq = rng.standard_normal((2, 4))
    states = [ly.lstm_scan(seq[:, : t + 1], [True] * (t + 1), p).data for t in range(4)]
    ann = np.stack(states, axis=1)
    ctx, _ = ly.attention_context(ann, states[-1], att)
    assert np.allclose(ly.attention_lstm_scan(seq, [True] * 4, p, att).data, ctx.data, rtol=1e-13, atol=1e-15)


# -- RNN and dropout --------------------------------------------------------

def test_rnn_zero_weights_uniform_prediction(rng):
    p = ly.RNNParams(np.zeros((3, 3)), np.zeros((3, 2)), np.zeros((4, 3)))
    h, pred = ly.rnn_forward(rng.standard_normal((2, 5)), p)
    assert np.array_equal(h.data, np.zeros(3)) and np.allclose(pred.data, 0.25, rtol=1e-15)


def test_rnn_closed_form():
    p = ly.RNNParams(np.zeros((1, 1)), np.ones((1, 1)), np.ones((2, 1)))
    h, _ = ly.rnn_forward(np.array([[0.5]]), p)
    assert abs(h.item() - math.tanh(0.5)) < 1e-15


def test_rnn_two_layer_matches_loops(rng):
    D, H, S = 2, 3, 4
    l0 = ly.RNNParams(rng.standard_normal((H, H)), rng.standard_normal((H, D)), rng.standard_normal((2, H)))
    l1 = ly.RNNParams(rng.standard_normal((H, H)), rng.standard_normal((H, H)), rng.standard_normal((2, H)))
    seq = rng.standard_normal((D, S))
    h0, h1 = np.zeros(H), np.zeros(H)
    for t in range(S):
        h0 = np.tanh(l0.w @ h0 + l0.i @ seq[:, t])
        h1 = 1 / (1 + np.exp(-(l1.w @ h1 + l1.i @ h0)))
    h, pred = ly.rnn_forward(seq, [l0, l1], layers=2)
    assert np.allclose(h.data, h1, rtol=1e-13)
    logits = l1.out @ h1
    assert np.allclose(pred.data, np.exp(logits) / np.exp(logits).sum(), rtol=1e-13)


def test_dropout_modes(rng):
    x = rng.standard_normal(10)
    assert np.array_equal(ly.dropout(x, 0.0, ly.TRAIN, rng).data, x)
    assert np.array_equal(ly.dropout(x, 0.8, ly.INFER).data, x)
    mean = ly.dropout(np.ones(10**5), 0.8, ly.TRAIN, np.random.default_rng(0)).data.mean()
    assert 0.97 <= mean <= 1.03
    with pytest.raises(ConfigurationError):
        ly.dropout(x, 1.0, ly.TRAIN, rng)


# -- gradients --------------------------------------------------------------

@pytest.mark.parametrize(
    "fn",
    [
        verify.grad_conv_block,
        verify.grad_se_block,
        verify.grad_lstm_step,
        verify.grad_lstm_scan,
        verify.grad_attention_context,
        verify.grad_attention_lstm,
        verify.grad_rnn,
        verify.grad_dense_softmax_ce,
    ],
    ids=lambda f: f.__name__[5:],
)
def test_layer_gradients(fn):
    assert max(fn(np.random.default_rng(s)) for s in range(3)) < 1e-4
