"""Differentiable building blocks of the MLSTM-FCN family.

All layers accept either a single sample or a batch with a leading axis:
sequences are ``D×S`` or ``B×D×S`` and feature maps ``C×T`` or ``B×C×T``.
Parameters may be plain arrays (evaluation) or taped tensors (training,
gradient checks).
"""

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from . import tensor as tn
from .errors import ConfigurationError, ContractError, DimensionError

TRAIN = "train"
INFER = "infer"


def _check_mode(mode):
    if mode not in (TRAIN, INFER):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")
    return mode == TRAIN


def _batched(x, rank):
    """Promote an unbatched tensor to a batch of one. Returns (tensor, was_single)."""
    x = tn.as_tensor(x)
    if x.ndim == rank - 1:
        return tn.reshape(x, (1,) + x.shape), True
    if x.ndim != rank:
        raise DimensionError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


def _unbatched(x, single):
    return tn.reshape(x, x.shape[1:]) if single else x


def _batched_mask(mask, single, shape):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if single:
        m = m[None]
    if m.shape != shape:
        raise DimensionError(f"mask shape {np.asarray(mask).shape} does not fit input")
    return m


@dataclass
class ConvBlockParams:
    kernels: Any
    bias: Any
    bn_gamma: Any
    bn_beta: Any
    bn_running_mean: Any
    bn_running_var: Any
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    def __post_init__(self):
        f_out = np.shape(_raw(self.kernels))[0]
        for name in ("bias", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var"):
            if np.shape(_raw(getattr(self, name))) != (f_out,):
                raise DimensionError(f"{name} must have shape ({f_out},)")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ConfigurationError("bn_momentum must lie in (0, 1)")
        if self.bn_epsilon <= 0:
            raise ConfigurationError("bn_epsilon must be positive")


@dataclass
class SEParams:
    """Squeeze-and-excite weights: ``w1`` is (C/r)×C, ``w2`` is C×(C/r)."""

    w1: Any
    w2: Any
    reduction_r: int

    def __post_init__(self):
        r1, c1 = np.shape(_raw(self.w1))
        c2, r2 = np.shape(_raw(self.w2))
        if r1 != r2 or c1 != c2:
            raise DimensionError(f"SE weights {np.shape(_raw(self.w1))} and {np.shape(_raw(self.w2))} mismatch")
        if self.reduction_r < 1 or c1 % self.reduction_r or c1 // self.reduction_r != r1:
            raise ConfigurationError(
                f"channel count {c1} is not divisible into {r1} units by reduction {self.reduction_r}"
            )


@dataclass
class LSTMParams:
    w_u: Any
    w_f: Any
    w_o: Any
    w_c: Any
    i_u: Any
    i_f: Any
    i_o: Any
    i_c: Any
    b_u: Any
    b_f: Any
    b_o: Any
    b_c: Any

    def __post_init__(self):
        H, D = self.hidden_size, self.input_size
        for g in "ufoc":
            if np.shape(_raw(getattr(self, "w_" + g))) != (H, H):
                raise DimensionError(f"w_{g} must be {H}×{H}")
            if np.shape(_raw(getattr(self, "i_" + g))) != (H, D):
                raise DimensionError(f"i_{g} must be {H}×{D}")
            if np.shape(_raw(getattr(self, "b_" + g))) != (H,):
                raise DimensionError(f"b_{g} must have length {H}")

    @property
    def hidden_size(self):
        return np.shape(_raw(self.w_u))[0]

    @property
    def input_size(self):
        return np.shape(_raw(self.i_u))[1]


@dataclass
class AttentionParams:
    """One-hidden-layer alignment scorer ``v · tanh(Wq q + Wa h_j)``.

    ``w_query`` is A×H', ``w_annotation`` A×H and ``v`` has length A.
    """

    w_query: Any
    w_annotation: Any
    v: Any

    def __post_init__(self):
        a = np.shape(_raw(self.v))
        if len(a) != 1 or a[0] < 1:
            raise DimensionError("attention output vector must be a non-empty vector")
        if np.shape(_raw(self.w_query))[0] != a[0] or np.shape(_raw(self.w_annotation))[0] != a[0]:
            raise DimensionError("attention weight rows must equal the alignment width")


@dataclass
class RNNParams:
    w: Any
    i: Any
    out: Any

    def __post_init__(self):
        H = np.shape(_raw(self.w))[0]
        if np.shape(_raw(self.w)) != (H, H) or np.shape(_raw(self.i))[0] != H or np.shape(_raw(self.out))[1] != H:
            raise DimensionError("RNN parameter shapes are inconsistent")


def _raw(v):
    return v.data if isinstance(v, tn.Tensor) else v


# ----------------------------------------------------------------------------
# Convolutional branch

def conv_block_forward(x, params, mode, mask=None):
    """relu(batchnorm(conv1d(x))) with "same" padding.

    In train mode the running statistics on ``params`` are updated in place;
    in infer mode they are read and left untouched. With ``mask`` the
    normalisation statistics use valid steps only and invalid steps of the
    output are zeroed.
    """
    training = _check_mode(mode)
    xb, single = _batched(x, 3)
    mb = _batched_mask(mask, single, (xb.shape[0], xb.shape[2]))
    h = tn.conv1d(xb, params.kernels, params.bias, padding="same")
    y, mu, var = tn.batch_norm(
        h,
        params.bn_gamma,
        params.bn_beta,
        _raw(params.bn_running_mean),
        _raw(params.bn_running_var),
        params.bn_epsilon,
        training,
        mask=mb,
    )
    if training:
        mom = params.bn_momentum
        params.bn_running_mean = mom * np.asarray(_raw(params.bn_running_mean)) + (1.0 - mom) * mu
        params.bn_running_var = mom * np.asarray(_raw(params.bn_running_var)) + (1.0 - mom) * var
    out = tn.relu(y)
    if mb is not None:
        out = tn.time_mask(out, mb)
    return _unbatched(out, single)


def se_gates(x, params, mask=None):
    """Squeeze (temporal mean) then excite: returns the channel gates ``s``."""
    xb, single = _batched(x, 3)
    C = xb.shape[1]
    if C % params.reduction_r:
        raise ConfigurationError(f"{C} channels not divisible by reduction {params.reduction_r}")
    if np.shape(_raw(params.w1))[1] != C:
        raise DimensionError(f"SE weights expect {np.shape(_raw(params.w1))[1]} channels, input has {C}")
    mb = _batched_mask(mask, single, (xb.shape[0], xb.shape[2]))
    z = tn.temporal_mean(xb, mb)
    s = tn.sigmoid(tn.linear(tn.relu(tn.linear(z, params.w1)), params.w2))
    return _unbatched(s, single)


def se_rescale(x, s):
    """Channel-wise multiplication of a feature map by gates ``s``."""
    xb, single = _batched(x, 3)
    sb = tn.reshape(s, (1,) + tn.as_tensor(s).shape) if single else s
    return _unbatched(tn.channel_scale(xb, sb), single)


def se_block(x, params, mask=None):
    return se_rescale(x, se_gates(x, params, mask))


# ----------------------------------------------------------------------------
# Recurrent branch

def _gate(h, x, w, i, b):
    return tn.add(tn.linear(h, w), tn.linear(x, i, b))


def lstm_step(x, h_prev, m_prev, params):
    """One LSTM update. Vectors (D, H, H) or batches (B×D, B×H, B×H).

    Returns ``(h, m)``.
    """
    x = tn.as_tensor(x)
    single = x.ndim == 1
    if single:
        x = tn.reshape(x, (1,) + x.shape)
        h_prev = tn.reshape(h_prev, (1,) + tn.as_tensor(h_prev).shape)
        m_prev = tn.reshape(m_prev, (1,) + tn.as_tensor(m_prev).shape)
    H, D = params.hidden_size, params.input_size
    if x.shape[1] != D or tn.as_tensor(h_prev).shape[1:] != (H,) or tn.as_tensor(m_prev).shape[1:] != (H,):
        raise DimensionError(f"lstm_step: input {x.shape}, state {tn.as_tensor(h_prev).shape} vs D={D}, H={H}")
    p = params
    g_u = tn.sigmoid(_gate(h_prev, x, p.w_u, p.i_u, p.b_u))
    g_f = tn.sigmoid(_gate(h_prev, x, p.w_f, p.i_f, p.b_f))
    g_o = tn.sigmoid(_gate(h_prev, x, p.w_o, p.i_o, p.b_o))
    g_c = tn.tanh(_gate(h_prev, x, p.w_c, p.i_c, p.b_c))
    m = tn.add(tn.mul(g_f, m_prev), tn.mul(g_u, g_c))
    h = tn.tanh(tn.mul(g_o, m))
    if single:
        return tn.reshape(h, (H,)), tn.reshape(m, (H,))
    return h, m


def _scan(sequence, mask, params):
    seq, single = _batched(sequence, 3)
    B, D, S = seq.shape
    if D != params.input_size:
        raise DimensionError(f"sequence has {D} features per step, LSTM expects {params.input_size}")
    if mask is None:
        m = np.ones((B, S), dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if single:
            m = m[None]
        if m.shape != (B, S):
            raise DimensionError(f"mask length {np.asarray(mask).shape} does not match {S} steps")
    H = params.hidden_size
    h = tn.Tensor(np.zeros((B, H)))
    c = tn.Tensor(np.zeros((B, H)))
    history = []
    for t in range(S):
        valid = m[:, t]
        if valid.any():
            h_new, c_new = lstm_step(tn.take(seq, t, axis=-1), h, c, params)
            if valid.all():
                h, c = h_new, c_new
            else:
                h = tn.select_rows(valid, h_new, h)
                c = tn.select_rows(valid, c_new, c)
        history.append(h)
    return h, history, m, single


def lstm_scan(sequence, mask, params):
    """Run the LSTM over ``sequence`` (D×S or B×D×S) from a zero state.

    Steps where ``mask`` is false are skipped: the state passes through
    unchanged. Returns the hidden state after the last valid step.
    """
    h, _, _, single = _scan(sequence, mask, params)
    return _unbatched(h, single)


def alignment_scores(annotations, query, params):
    """Scores ``e_j = v · tanh(Wq q + Wa h_j)`` for B×H×S annotations, B×H' query."""
    ann = tn.as_tensor(annotations)
    q = tn.as_tensor(query)
    A = np.shape(_raw(params.v))[0]
    qp = tn.linear(q, params.w_query)
    v_row = tn.reshape(params.v, (1, A))
    scores = []
    for j in range(ann.shape[2]):
        hidden = tn.tanh(tn.add(tn.linear(tn.take(ann, j, axis=-1), params.w_annotation), qp))
        scores.append(tn.reshape(tn.linear(hidden, v_row), (ann.shape[0],)))
    return tn.stack(scores, axis=-1)


def attention_context(annotations, query_state, params, mask=None):
    """Soft alignment over annotations (H×S or B×H×S) given a query state.

    Returns ``(context, weights)`` where ``weights`` is the softmax of the
    alignment scores over valid positions and ``context`` the weighted sum
    of annotation columns.
    """
    ann, single = _batched(annotations, 3)
    q = tn.reshape(query_state, (1,) + tn.as_tensor(query_state).shape) if single else tn.as_tensor(query_state)
    if q.ndim != 2 or q.shape[0] != ann.shape[0]:
        raise DimensionError(f"query {tn.as_tensor(query_state).shape} does not match annotations {ann.shape}")
    mb = _batched_mask(mask, single, (ann.shape[0], ann.shape[2]))
    weights = tn.softmax(alignment_scores(ann, q, params), mb)
    context = tn.attend(weights, ann)
    return _unbatched(context, single), _unbatched(weights, single)


def attention_lstm_scan(sequence, mask, lstm, attn):
    """LSTM scan whose output is an attention summary of its hidden states.

    Annotations are the hidden states at every step (carried states at
    masked steps receive zero weight); the query is the final hidden state.
    """
    h, history, m, single = _scan(sequence, mask, lstm)
    annotations = tn.stack(history, axis=-1)
    context, _ = attention_context(annotations, h, attn, m)
    return _unbatched(context, single)


def rnn_forward(sequence, params, layers=1):
    """Plain (optionally stacked) RNN followed by a softmax read-out.

    The first layer uses ``tanh``; stacked layers use the logistic sigmoid.
    ``params`` is one :class:`RNNParams` or a sequence with one entry per
    layer; the read-out weight of the last layer produces the prediction.
    Returns ``(hidden, prediction)``.
    """
    if layers < 1:
        raise ContractError("layers must be at least 1")
    stack = [params] if isinstance(params, RNNParams) else list(params)
    if len(stack) != layers:
        raise ContractError(f"{layers} layers requested but {len(stack)} parameter sets given")
    seq, single = _batched(sequence, 3)
    B, D, S = seq.shape
    inputs = [tn.take(seq, t, axis=-1) for t in range(S)]
    for depth, p in enumerate(stack):
        H = np.shape(_raw(p.w))[0]
        if np.shape(_raw(p.i))[1] != inputs[0].shape[1]:
            raise DimensionError(f"layer {depth}: projection expects {np.shape(_raw(p.i))[1]} inputs, got {inputs[0].shape[1]}")
        act = tn.tanh if depth == 0 else tn.sigmoid
        h = tn.Tensor(np.zeros((B, H)))
        outs = []
        for x in inputs:
            h = act(tn.add(tn.linear(h, p.w), tn.linear(x, p.i)))
            outs.append(h)
        inputs = outs
    pred = tn.softmax(tn.linear(h, stack[-1].out))
    return _unbatched(h, single), _unbatched(pred, single)


def dropout(x, rate, mode, rng=None):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    training = _check_mode(mode)
    x = tn.as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    return tn.mul(x, tn.Tensor(keep / (1.0 - rate)))
