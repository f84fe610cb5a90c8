"""MLSTM-FCN and MALSTM-FCN assembly.

The network has two branches fed by the same ``M×N`` sample:

* FCN: three conv blocks (squeeze-and-excite after the first two) and a
  global average pool over time;
* recurrent: an LSTM (or attention LSTM) over the sample, transposed first
  when ``N > M``, followed by dropout.

Both branch outputs are concatenated (FCN features first) and mapped to
class probabilities by one affine layer and a softmax.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import layers as ly
from . import tensor as tn
from .errors import ConfigurationError, DimensionError

LSTM_CELL_RANGE = (8, 128)


@dataclass(frozen=True)
class ModelConfig:
    num_variables: int
    max_length: int
    num_classes: int
    conv_filters: tuple = (128, 256, 128)
    conv_kernel_widths: tuple = (8, 5, 3)
    se_reduction: int = 16
    lstm_cells: int = 8
    attention: bool = False
    dropout_rate: float = 0.8
    lstm_stride: int = 1
    mask_fcn: bool = True
    allow_offgrid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(v) for v in self.conv_filters))
        object.__setattr__(self, "conv_kernel_widths", tuple(int(v) for v in self.conv_kernel_widths))
        if self.num_variables < 1 or self.max_length < 1:
            raise ConfigurationError("num_variables and max_length must be positive")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2")
        if len(self.conv_filters) != 3 or len(self.conv_kernel_widths) != 3:
            raise ConfigurationError("conv_filters and conv_kernel_widths need exactly three entries")
        if min(self.conv_filters) < 1 or min(self.conv_kernel_widths) < 1:
            raise ConfigurationError("filter counts and kernel widths must be positive")
        if self.se_reduction < 1:
            raise ConfigurationError("se_reduction must be positive")
        for f in self.conv_filters[:2]:
            if f % self.se_reduction:
                raise ConfigurationError(f"{f} filters not divisible by SE reduction {self.se_reduction}")
        lo, hi = LSTM_CELL_RANGE
        if self.lstm_cells < 1:
            raise ConfigurationError("lstm_cells must be positive")
        if not self.allow_offgrid and not lo <= self.lstm_cells <= hi:
            raise ConfigurationError(f"lstm_cells {self.lstm_cells} outside [{lo}, {hi}]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.lstm_stride < 1:
            raise ConfigurationError("lstm_stride must be positive")

    def to_dict(self):
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["conv_kernel_widths"] = list(self.conv_kernel_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def should_shuffle(config):
    """Dimension shuffle applies only when there are more steps than variables."""
    return config.max_length > config.num_variables


def lstm_steps(config):
    """Number of time steps after the optional strided pre-convolution."""
    return -(-config.max_length // config.lstm_stride)


def lstm_input_size(config):
    return lstm_steps(config) if should_shuffle(config) else config.num_variables


@dataclass
class ModelParams:
    conv1: ly.ConvBlockParams
    conv2: ly.ConvBlockParams
    conv3: ly.ConvBlockParams
    se1: ly.SEParams
    se2: ly.SEParams
    lstm: ly.LSTMParams
    dense_w: object
    dense_b: object
    attention: Optional[ly.AttentionParams] = None
    stride_kernels: object = None
    stride_bias: object = None

    def named(self):
        """Flat ``{canonical name: value}`` view, in a fixed order."""
        out = {}
        for blk in ("conv1", "conv2", "conv3"):
            p = getattr(self, blk)
            for f in _CONV_FIELDS:
                out[f"{blk}.{f}"] = getattr(p, f)
        for blk in ("se1", "se2"):
            p = getattr(self, blk)
            out[f"{blk}.w1"] = p.w1
            out[f"{blk}.w2"] = p.w2
        for f in _LSTM_FIELDS:
            out[f"lstm.{f}"] = getattr(self.lstm, f)
        if self.attention is not None:
            for f in _ATTN_FIELDS:
                out[f"attention.{f}"] = getattr(self.attention, f)
        if self.stride_kernels is not None:
            out["stride.kernels"] = self.stride_kernels
            out["stride.bias"] = self.stride_bias
        out["dense.w"] = self.dense_w
        out["dense.b"] = self.dense_b
        return out

    @classmethod
    def from_named(cls, config, values):
        def conv(blk):
            return ly.ConvBlockParams(**{f: values[f"{blk}.{f}"] for f in _CONV_FIELDS})

        attention = None
        if config.attention:
            attention = ly.AttentionParams(**{f: values[f"attention.{f}"] for f in _ATTN_FIELDS})
        return cls(
            conv1=conv("conv1"),
            conv2=conv("conv2"),
            conv3=conv("conv3"),
            se1=ly.SEParams(values["se1.w1"], values["se1.w2"], config.se_reduction),
            se2=ly.SEParams(values["se2.w1"], values["se2.w2"], config.se_reduction),
            lstm=ly.LSTMParams(**{f: values[f"lstm.{f}"] for f in _LSTM_FIELDS}),
            attention=attention,
            stride_kernels=values.get("stride.kernels"),
            stride_bias=values.get("stride.bias"),
            dense_w=values["dense.w"],
            dense_b=values["dense.b"],
        )

    def arrays(self):
        return {k: np.array(ly._raw(v), dtype=np.float64) for k, v in self.named().items()}

    def copy(self, config):
        return ModelParams.from_named(config, self.arrays())


_CONV_FIELDS = ("kernels", "bias", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var")
_LSTM_FIELDS = tuple(p + g for p in ("w_", "i_", "b_") for g in "ufoc")
_ATTN_FIELDS = ("w_query", "w_annotation", "v")
RUNNING_STATS = tuple(
    f"{blk}.{f}" for blk in ("conv1", "conv2", "conv3") for f in ("bn_running_mean", "bn_running_var")
)


def learnable_names(params):
    return [k for k in params.named() if k not in RUNNING_STATS]


@dataclass
class Prediction:
    class_probabilities: np.ndarray
    predicted_class: int


def _check_input(config, x, mask):
    M, N = config.num_variables, config.max_length
    if x.shape[1:] != (M, N):
        raise DimensionError(f"samples have shape {x.shape[1:]}, model expects ({M}, {N})")
    if mask is None:
        return np.ones((x.shape[0], N), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (x.shape[0], N):
        raise DimensionError(f"mask shape {mask.shape} does not match ({x.shape[0]}, {N})")
    return mask


def branch_outputs(params, config, samples, masks=None, mode=ly.INFER, rng=None):
    """FCN features (B×F3) and recurrent-branch output (B×H) for a batch."""
    x = tn.as_tensor(samples)
    if x.ndim != 3:
        raise DimensionError(f"expected a B×M×N batch, got {x.shape}")
    masks = _check_input(config, x, masks)
    fmask = masks if config.mask_fcn else None

    xf = x if fmask is None else tn.time_mask(x, fmask)
    h = ly.conv_block_forward(xf, params.conv1, mode, fmask)
    h = ly.se_block(h, params.se1, fmask)
    h = ly.conv_block_forward(h, params.conv2, mode, fmask)
    h = ly.se_block(h, params.se2, fmask)
    h = ly.conv_block_forward(h, params.conv3, mode, fmask)
    fcn = tn.temporal_mean(h, fmask)

    seq, lmask = x, masks
    if config.lstm_stride > 1:
        s = config.lstm_stride
        seq = tn.conv1d(seq, params.stride_kernels, params.stride_bias, padding="same", stride=s)
        lmask = masks[:, ::s]
    if should_shuffle(config):
        seq, lmask = tn.transpose_last(seq), None
    if config.attention:
        rec = ly.attention_lstm_scan(seq, lmask, params.lstm, params.attention)
    else:
        rec = ly.lstm_scan(seq, lmask, params.lstm)
    rec = ly.dropout(rec, config.dropout_rate, mode, rng)
    return fcn, rec


def batch_probabilities(params, config, samples, masks=None, mode=ly.INFER, rng=None):
    """Class probabilities (B×K tensor) for a batch; records on a tape if params are taped."""
    fcn, rec = branch_outputs(params, config, samples, masks, mode, rng)
    logits = tn.linear(tn.concat([fcn, rec], axis=-1), params.dense_w, params.dense_b)
    return tn.softmax(logits)


def _to_predictions(probs):
    return [Prediction(row.copy(), int(np.argmax(row))) for row in probs]


def forward(params, config, sample, mask=None, mode=ly.INFER, rng=None):
    """Classify a single ``M×N`` sample."""
    x = np.asarray(ly._raw(sample), dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"sample must be M×N, got shape {x.shape}")
    m = None if mask is None else np.asarray(mask, dtype=bool)[None]
    probs = batch_probabilities(params, config, x[None], m, mode, rng)
    return _to_predictions(probs.data)[0]


def predict_batch(params, config, samples, masks=None, chunk=256):
    """Infer-mode predictions for each sample, in input order.

    Every computation is row-independent, so the result for a sample does
    not depend on which other samples share its batch.
    """
    if len(samples) == 0:
        return []
    try:
        x = np.asarray(samples, dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"ragged batch: {exc}") from None
    if x.ndim != 3:
        raise DimensionError(f"ragged or malformed batch of shape {x.shape}")
    m = None if masks is None else np.asarray(masks, dtype=bool)
    if m is not None and m.shape != (x.shape[0], x.shape[2]):
        raise DimensionError(f"mask batch {m.shape} does not match samples {x.shape}")
    preds = []
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        probs = batch_probabilities(params, config, x[sl], None if m is None else m[sl])
        preds.extend(_to_predictions(probs.data))
    return preds
