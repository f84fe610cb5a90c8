import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlstmfcn import checkpoint as ck
from mlstmfcn import layers as ly
from mlstmfcn import model as md
from mlstmfcn import optim as op
from mlstmfcn import verify
from mlstmfcn.errors import ConfigurationError, DimensionError, ParseError
from mlstmfcn.oracles import conv1d_loops, lstm_step_scalar


def toy_config(**kw):
    base = dict(
        num_variables=2, max_length=6, num_classes=3, conv_filters=(4, 8, 4), conv_kernel_widths=(3, 2, 2),
        se_reduction=2, lstm_cells=3, allow_offgrid=True,
    )
    base.update(kw)
    return md.ModelConfig(**base)


def randomised(config, rng):
    """Initialised params with non-trivial running statistics."""
    params = op.init_params(config, rng)
    for blk in (params.conv1, params.conv2, params.conv3):
        blk.bn_running_mean = 0.3 * rng.standard_normal(blk.bn_running_mean.shape)
        blk.bn_running_var = rng.uniform(0.5, 2.0, blk.bn_running_var.shape)
        blk.bn_gamma = 1 + 0.2 * rng.standard_normal(blk.bn_gamma.shape)
        blk.bn_beta = 0.2 * rng.standard_normal(blk.bn_beta.shape)
    return params


def test_should_shuffle():
    cfg = dict(num_classes=2, conv_filters=(16, 16, 16))
    assert md.should_shuffle(md.ModelConfig(num_variables=3, max_length=100, **cfg))
    assert not md.should_shuffle(md.ModelConfig(num_variables=5, max_length=5, **cfg))
    assert not md.should_shuffle(md.ModelConfig(num_variables=570, max_length=100, **cfg))


def test_config_defaults_and_validation():
    c = md.ModelConfig(num_variables=3, max_length=10, num_classes=2)
    assert c.conv_filters == (128, 256, 128) and c.conv_kernel_widths == (8, 5, 3)
    assert c.se_reduction == 16 and c.dropout_rate == 0.8
    with pytest.raises(ConfigurationError):
        md.ModelConfig(num_variables=3, max_length=10, num_classes=2, lstm_cells=4)
    with pytest.raises(ConfigurationError):
        md.ModelConfig(num_variables=3, max_length=10, num_classes=2, conv_filters=(12, 16, 8), se_reduction=8)
    assert md.ModelConfig(num_variables=3, max_length=10, num_classes=2, lstm_cells=4, allow_offgrid=True)


def test_zero_params_give_uniform(rng):
    config = toy_config()
    arrays = {k: np.zeros_like(v) for k, v in op.init_params(config, rng).arrays().items()}
    for k in md.RUNNING_STATS:
        if k.endswith("var"):
            arrays[k] = np.ones_like(arrays[k])
    params = md.ModelParams.from_named(config, arrays)
    pred = md.forward(params, config, rng.standard_normal((2, 6)))
    assert np.allclose(pred.class_probabilities, 1 / 3, rtol=1e-15)
    assert pred.predicted_class == 0


def test_dense_bias_monotone(rng):
    config = toy_config()
    params = randomised(config, rng)
    x = rng.standard_normal((2, 6))
    before = md.forward(params, config, x).class_probabilities
    params.dense_b = params.dense_b.copy()
    params.dense_b[1] = 2 * params.dense_b[1] + 1.0 if params.dense_b[1] >= 0 else 0.0
    after = md.forward(params, config, x).class_probabilities
    assert after[1] > before[1]


def _np_conv_block(x, blk):
    h = np.array(conv1d_loops(x, blk.kernels, blk.bias))
    y = blk.bn_gamma[:, None] * (h - blk.bn_running_mean[:, None]) / np.sqrt(blk.bn_running_var[:, None] + 1e-3)
    return np.maximum(y + blk.bn_beta[:, None], 0)


def _np_se(x, se):
    z = x.mean(axis=1)
    s = 1 / (1 + np.exp(-(se.w2 @ np.maximum(se.w1 @ z, 0))))
    return s[:, None] * x


def _np_forward(params, x):
    h = _np_se(_np_conv_block(x, params.conv1), params.se1)
    h = _np_se(_np_conv_block(h, params.conv2), params.se2)
    fcn = _np_conv_block(h, params.conv3).mean(axis=1)
    lstm = {k[5:]: v for k, v in params.arrays().items() if k.startswith("lstm.")}
    seq = x.T  # shuffled: M steps of N-vectors
    H = params.lstm.hidden_size
    hs, m = [0.0] * H, [0.0] * H
    for t in range(seq.shape[1]):
        hs, m = lstm_step_scalar(seq[:, t], hs, m, lstm)
    logits = params.dense_w @ np.concatenate([fcn, hs]) + params.dense_b
    e = np.exp(logits - logits.max())
    return e / e.sum()


def test_forward_matches_compositional_oracle(rng):
    config = toy_config()
    assert md.should_shuffle(config)
    for _ in range(5):
        params = randomised(config, rng)
        x = rng.standard_normal((2, 6))
        got = md.forward(params, config, x).class_probabilities
        assert np.abs(got - _np_forward(params, x)).max() <= 1e-12


def test_forward_shape_errors(rng):
    config = toy_config()
    params = randomised(config, rng)
    with pytest.raises(DimensionError):
        md.forward(params, config, np.zeros((3, 6)))
    with pytest.raises(DimensionError):
        md.forward(params, config, np.zeros((2, 6)), mask=np.ones(5, dtype=bool))


def test_predict_batch_contracts(rng):
    config = toy_config()
    params = randomised(config, rng)
    X = rng.standard_normal((5, 2, 6))
    assert md.predict_batch(params, config, []) == []
    one = md.predict_batch(params, config, X[:1])[0]
    assert np.array_equal(one.class_probabilities, md.forward(params, config, X[0]).class_probabilities)
    preds = md.predict_batch(params, config, X)
    perm = [3, 0, 4, 1, 2]
    permuted = md.predict_batch(params, config, X[perm])
    for i, j in enumerate(perm):
        assert np.array_equal(permuted[i].class_probabilities, preds[j].class_probabilities)
    chunked = md.predict_batch(params, config, X, chunk=2)
    assert all(np.array_equal(a.class_probabilities, b.class_probabilities) for a, b in zip(preds, chunked))
    with pytest.raises(DimensionError):
        md.predict_batch(params, config, [np.zeros((2, 6)), np.zeros((2, 5))])


def test_probabilities_sum_to_one(rng):
    config = toy_config(attention=True)
    params = randomised(config, rng)
    for p in md.predict_batch(params, config, rng.standard_normal((10, 2, 6))):
        assert abs(p.class_probabilities.sum() - 1) <= 1e-12
        assert p.predicted_class == int(np.argmax(p.class_probabilities))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_argmax_of_softmax(z):
    from mlstmfcn import tensor as tn

    z = np.array(z)
    assert int(np.argmax(tn.softmax(z).data)) == int(np.argmax(z)) or np.isclose(
        z[int(np.argmax(tn.softmax(z).data))], z.max()
    )


def test_masking_invariance_suite():
    rec, prob = verify.masking_gaps(count=20, seed=5)
    assert rec == 0.0 and prob < 1e-9


def test_masked_fcn_ignores_padding_content(rng):
    # padding is masked, so even non-zero junk in padded steps leaves the output unchanged
    kw = dict(num_variables=6, num_classes=2, conv_filters=(4, 4, 2), conv_kernel_widths=(3, 2, 2),
              se_reduction=2, lstm_cells=2, attention=True, allow_offgrid=True)
    short, long = md.ModelConfig(max_length=4, **kw), md.ModelConfig(max_length=6, **kw)
    params = randomised(short, rng)
    x = rng.standard_normal((6, 4))
    junk = np.concatenate([x, rng.standard_normal((6, 2))], axis=1)
    mask = np.array([True] * 4 + [False] * 2)
    a = md.forward(params, short, x).class_probabilities
    b = md.forward(params, long, junk, mask).class_probabilities
    assert np.abs(a - b).max() < 1e-9


def test_unmasked_fcn_sees_padding(rng):
    kw = dict(num_variables=6, num_classes=2, conv_filters=(4, 4, 2), conv_kernel_widths=(3, 2, 2),
              se_reduction=2, lstm_cells=2, allow_offgrid=True, mask_fcn=False)
    short, long = md.ModelConfig(max_length=4, **kw), md.ModelConfig(max_length=6, **kw)
    params = randomised(short, rng)
    x = rng.standard_normal((6, 4))
    padded = np.concatenate([x, np.zeros((6, 2))], axis=1)
    fa, ra = md.branch_outputs(params, short, x[None])
    fb, rb = md.branch_outputs(params, long, padded[None], np.array([[True] * 4 + [False] * 2]))
    assert np.array_equal(ra.data, rb.data)
    assert not np.array_equal(fa.data, fb.data)


def test_strided_lstm_branch(rng):
    config = toy_config(num_variables=3, max_length=9, lstm_stride=2)
    assert md.lstm_steps(config) == 5 and md.lstm_input_size(config) == 5
    params = randomised(config, rng)
    assert params.stride_kernels.shape == (3, 2, 3)
    pred = md.forward(params, config, rng.standard_normal((3, 9)))
    assert abs(pred.class_probabilities.sum() - 1) <= 1e-12


@pytest.mark.parametrize("attention", [False, True], ids=["mlstm", "malstm"])
def test_whole_model_gradient(attention):
    worst = max(verify._grad_model(attention, np.random.default_rng(s)) for s in range(2))
    assert worst < 1e-4


def test_whole_model_gradient_unshuffled_masked():
    assert verify._grad_model(True, np.random.default_rng(0), shuffle=False) < 1e-4


# -- checkpoints ------------------------------------------------------------

@pytest.mark.parametrize("attention", [False, True])
def test_checkpoint_round_trip(tmp_path, rng, attention):
    config = toy_config(attention=attention)
    params = randomised(config, rng)
    path = tmp_path / "m.ckpt"
    ck.save_checkpoint(path, config, params, {"norm_mean": np.arange(2.0)}, {"note": "x"})
    c2, p2, extras, meta = ck.load_checkpoint(path)
    assert c2 == config and meta == {"note": "x"}
    assert np.array_equal(extras["norm_mean"], np.arange(2.0))
    a, b = params.arrays(), p2.arrays()
    assert list(a) == list(b)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert ck.encode_checkpoint(config, params) == ck.encode_checkpoint(c2, p2)


def test_checkpoint_rejects_damage(tmp_path, rng):
    config = toy_config()
    blob = ck.encode_checkpoint(config, randomised(config, rng))
    with pytest.raises(ParseError):
        ck.decode_checkpoint(blob[:-8])
    with pytest.raises(ParseError):
        ck.decode_checkpoint(b"NOTACKPT" + blob[8:])
    flipped = bytearray(blob)
    flipped[-1] ^= 0xFF
    with pytest.raises(ParseError, match="checksum"):
        ck.decode_checkpoint(bytes(flipped))
    for cut in (4, 20, len(blob) // 2):
        with pytest.raises(ParseError):
            ck.decode_checkpoint(blob[:cut])
