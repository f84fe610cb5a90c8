"""Initialisation, loss, Adam, learning-rate schedule and the training loop."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as ly
from . import model as md
from . import tensor as tn
from .errors import ConfigurationError, ContractError, DimensionError, MLSTMFCNError, ParseError


def he_init(shape, fan_in, rng):
    """Zero-mean normal samples with standard deviation ``sqrt(2 / fan_in)``."""
    if fan_in < 1:
        raise ConfigurationError("fan_in must be positive")
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def glorot_uniform(shape, rng):
    fan_out, fan_in = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


def _conv_block(f_out, width, f_in, rng):
    return {
        "kernels": he_init((f_out, width, f_in), width * f_in, rng),
        "bias": np.zeros(f_out),
        "bn_gamma": np.ones(f_out),
        "bn_beta": np.zeros(f_out),
        "bn_running_mean": np.zeros(f_out),
        "bn_running_var": np.ones(f_out),
    }


def init_params(config, rng):
    """Fresh parameters: He-normal conv and SE weights, Glorot/orthogonal LSTM.

    LSTM biases are zero except the forget gate, which starts at one.
    """
    f1, f2, f3 = config.conv_filters
    k1, k2, k3 = config.conv_kernel_widths
    M, r = config.num_variables, config.se_reduction
    H, D = config.lstm_cells, md.lstm_input_size(config)
    values = {}
    for name, (fo, k, fi) in zip(("conv1", "conv2", "conv3"), ((f1, k1, M), (f2, k2, f1), (f3, k3, f2))):
        for key, arr in _conv_block(fo, k, fi, rng).items():
            values[f"{name}.{key}"] = arr
    for name, C in (("se1", f1), ("se2", f2)):
        values[f"{name}.w1"] = he_init((C // r, C), C, rng)
        values[f"{name}.w2"] = he_init((C, C // r), C // r, rng)
    for g in "ufoc":
        values[f"lstm.w_{g}"] = orthogonal(H, rng)
        values[f"lstm.i_{g}"] = glorot_uniform((H, D), rng)
        values[f"lstm.b_{g}"] = np.ones(H) if g == "f" else np.zeros(H)
    if config.attention:
        values["attention.w_query"] = glorot_uniform((H, H), rng)
        values["attention.w_annotation"] = glorot_uniform((H, H), rng)
        values["attention.v"] = glorot_uniform((1, H), rng)[0]
    if config.lstm_stride > 1:
        s = config.lstm_stride
        values["stride.kernels"] = he_init((M, s, M), s * M, rng)
        values["stride.bias"] = np.zeros(M)
    values["dense.w"] = glorot_uniform((config.num_classes, f3 + H), rng)
    values["dense.b"] = np.zeros(config.num_classes)
    return md.ModelParams.from_named(config, values)


def class_weights(label_counts):
    """Inverse-frequency weights ``total / (K * count)``; balanced data gives ones."""
    counts = np.asarray(label_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ConfigurationError("need at least one class count")
    if np.any(counts < 1):
        raise ConfigurationError("every class needs at least one training sample")
    return counts.sum() / (counts.size * counts)


def weighted_cross_entropy(probabilities, labels, weights):
    """``mean_b weights[y_b] * -log p_b[y_b]`` as a scalar tensor."""
    p = tn.as_tensor(probabilities)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if p.ndim != 2 or weights.shape != (p.shape[1],):
        raise DimensionError(f"probabilities {p.shape} vs class weights {weights.shape}")
    if np.any(labels < 0) or np.any(labels >= p.shape[1]):
        raise ContractError(f"label out of range [0, {p.shape[1]})")
    B = p.shape[0]
    coef = tn.Tensor(-weights[labels] / B)
    return tn.tsum(tn.mul(tn.log(tn.pick(p, labels)), coef))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params, lr=1e-3):
        return cls(
            m={k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()},
            v={k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()},
            lr=lr,
        )


def adam_step(state, params, grads):
    """Bias-corrected Adam update of a ``{name: array}`` parameter dict.

    Advances ``state`` in place and returns ``(new_params, state)``.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        g = g.data if isinstance(g, tn.Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p) or state.m[k].shape != g.shape:
            raise DimensionError(f"adam: {k} parameter {np.shape(p)} vs gradient {g.shape}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, state


@dataclass
class TrainPlan:
    epochs: int = 250
    batch_size: int = 128
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    reduce_every: int = 100
    reduce_factor: float = 2.0 ** (-1.0 / 3.0)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.reduce_every < 1:
            raise ConfigurationError("epochs >= 0, batch_size >= 1 and reduce_every >= 1 required")
        if not 0.0 < self.reduce_factor < 1.0:
            raise ConfigurationError("reduce_factor must lie in (0, 1)")
        if not 0.0 < self.lr_final <= self.lr_initial:
            raise ConfigurationError("need 0 < lr_final <= lr_initial")


def lr_at_epoch(plan, epoch):
    """Step decay every ``reduce_every`` epochs, clamped below at ``lr_final``."""
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return max(plan.lr_final, plan.lr_initial * plan.reduce_factor ** (epoch // plan.reduce_every))


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float

    def line(self):
        return f"{self.epoch}\t{self.lr:.9g}\t{self.train_loss:.9g}\t{self.train_acc:.9g}"


@dataclass
class FitResult:
    params: md.ModelParams
    history: list = field(default_factory=list)


def fit(params, config, dataset, plan, rng=None, on_epoch=None, weights=None):
    """Mini-batch training with weighted cross-entropy and Adam.

    Batches are reshuffled every epoch; the last partial batch is kept.
    ``rng`` defaults to a generator seeded with ``plan.seed`` and drives both
    shuffling and dropout, so a fixed seed gives a bit-identical run.
    ``on_epoch`` is called with each :class:`EpochLog` as it completes.
    ``weights`` overrides the inverse-frequency class weights.
    The input ``params`` object is not modified.
    """
    n = len(dataset)
    if n == 0:
        raise ContractError("cannot train on an empty dataset")
    if dataset.samples.shape[1:] != (config.num_variables, config.max_length):
        raise DimensionError(
            f"dataset samples {dataset.samples.shape[1:]} vs model ({config.num_variables}, {config.max_length})"
        )
    if rng is None:
        rng = np.random.default_rng(plan.seed)
    counts = np.bincount(dataset.labels, minlength=config.num_classes)
    if counts.size > config.num_classes:
        raise ContractError(f"labels exceed the {config.num_classes} configured classes")
    if weights is None:
        weights = class_weights(counts)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (config.num_classes,) or np.any(weights <= 0):
            raise ConfigurationError(f"need {config.num_classes} positive class weights, got {weights.tolist()}")

    arrays = params.arrays()
    trainable = md.learnable_names(params)
    state = AdamState.create({k: arrays[k] for k in trainable}, plan.lr_initial)
    X, masks, y = dataset.samples, dataset.masks, dataset.labels
    history = []
    for epoch in range(plan.epochs):
        state.lr = lr_at_epoch(plan, epoch)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for bi, start in enumerate(range(0, n, plan.batch_size)):
            idx = order[start : start + plan.batch_size]
            try:
                tape = tn.Tape()
                view = md.ModelParams.from_named(
                    config, {**arrays, **{k: tape.leaf(arrays[k], k) for k in trainable}}
                )
                probs = md.batch_probabilities(view, config, X[idx], masks[idx], ly.TRAIN, rng)
                loss = weighted_cross_entropy(probs, y[idx], weights)
                grads = tn.backward(tape, loss)
            except MLSTMFCNError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise type(exc)(f"epoch {epoch} batch {bi}: {exc}") from exc
            updated, state = adam_step(state, {k: arrays[k] for k in trainable}, grads)
            arrays.update(updated)
            for k in md.RUNNING_STATS:
                arrays[k] = np.asarray(view.named()[k], dtype=np.float64)
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(probs.data, axis=1) == y[idx]))
        entry = EpochLog(epoch, state.lr, total_loss / n, correct / n)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return FitResult(md.ModelParams.from_named(config, arrays), history)


def accuracy(params, config, dataset):
    """Fraction of samples classified correctly in inference mode."""
    if len(dataset) == 0:
        raise ContractError("no samples")
    preds = md.predict_batch(params, config, dataset.samples, dataset.masks)
    return float(np.mean([p.predicted_class == t for p, t in zip(preds, dataset.labels)]))
