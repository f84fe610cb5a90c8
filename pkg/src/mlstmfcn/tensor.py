"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every layer in the package is written against the operations in this
module, so a single gradient engine (and a single finite-difference
harness) covers all of them.

A :class:`Tape` records operations whose operands include a tensor created
by :meth:`Tape.leaf`. Tensors without a tape are constants and record
nothing, which makes the same layer code usable for plain evaluation::

    tape = Tape()
    x = tape.leaf([1.0, -2.0], "x")
    loss = tsum(mul(x, x))
    backward(tape, loss)["x"].data   # array([ 2., -4.])

There is no implicit broadcasting. The few operations that combine
tensors of different ranks (``linear``, ``channel_scale``, ``time_mask``,
``select_rows``) are fused ops with explicit shape rules.
"""

from collections.abc import Mapping

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

# Backward rules named here are deliberately corrupted. Only the verification
# suite's fault-injection test touches this.
FAULTS = set()


class Tensor:
    """Immutable row-major float64 array, optionally attached to a tape."""

    __slots__ = ("_data", "tape", "slot", "name")

    def __init__(self, data, name=None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got shape {arr.shape}")
        arr.flags.writeable = False
        self._data = arr
        self.tape = None
        self.slot = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, tape=None, slot=None, name=None):
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t._data = arr
        t.tape = tape
        t.slot = slot
        t.name = name
        return t

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    def numpy(self):
        return self._data.copy()

    def item(self):
        return float(self._data.reshape(-1)[0]) if self._data.size == 1 else self._data.item()

    def __len__(self):
        return self._data.shape[0]

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        taped = ", taped" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag}{taped})\n{self._data!r}"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    __slots__ = ("op", "inputs", "out_slot", "backward")

    def __init__(self, op, inputs, out_slot, backward):
        self.op = op
        self.inputs = inputs
        self.out_slot = out_slot
        self.backward = backward


class Tape:
    """Ordered record of operations plus a registry of named leaves.

    A tape is single-owner: record on it from one thread only.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self.visits = 0
        self._next_slot = 0

    def _new_slot(self):
        slot = self._next_slot
        self._next_slot += 1
        return slot

    def leaf(self, value, name=None):
        """Register a differentiable input and return it as a taped tensor."""
        if isinstance(value, Tensor):
            value = value.data
        if name is None:
            name = f"leaf{len(self.leaves)}"
        if name in self.leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        t = Tensor(value, name=name)
        t.tape = self
        t.slot = self._new_slot()
        self.leaves[name] = t
        return t

    def record(self, op, data, inputs, rule):
        out = Tensor._wrap(data, self, self._new_slot())
        self.nodes.append(Node(op, inputs, out.slot, rule))
        return out

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tape_of(inputs):
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands belong to different tapes")
            tape = t.tape
    return tape


def _finish(op, data, inputs, rule):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor._wrap(data)
    return tape.record(op, data, inputs, rule)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _seq_matmul(a, b):
    # Accumulate over the inner index in ascending order; every output row
    # depends only on its own input row, independent of batch layout.
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


# ----------------------------------------------------------------------------
# Linear algebra and reshaping

def matmul(a, b):
    """Matrix product of ``a`` (m×k) and ``b`` (k×n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        return g @ B.T, A.T @ g

    return _finish("matmul", _seq_matmul(A, B), (a, b), rule)


def linear(x, w, b=None):
    """``x @ w.T + b`` for a batch of rows ``x`` (B×D), weights ``w`` (K×D)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weights {w.shape}")
    X, W = x.data, w.data
    out = _seq_matmul(X, W.T)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"linear: bias {b.shape} does not match weights {w.shape}")
        out = out + b.data
        inputs = (x, w, b)

    def rule(g):
        grads = (g @ W, g.T @ X)
        if b is not None:
            grads = grads + (g.sum(axis=0),)
        return grads

    return _finish("linear", out, inputs, rule)


def transpose2d(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose2d expects a rank-2 tensor, got shape {x.shape}")
    return _finish("transpose2d", x.data.T.copy(), (x,), lambda g: (g.T,))


def transpose_last(x):
    """Swap the last two axes of a rank-3 tensor (batched transpose)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"transpose_last expects a rank-3 tensor, got shape {x.shape}")
    out = np.ascontiguousarray(x.data.transpose(0, 2, 1))
    return _finish("transpose_last", out, (x,), lambda g: (g.transpose(0, 2, 1),))


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return _finish("reshape", x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(src),))


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(f"concat: shapes {[u.shape for u in ts]} disagree off axis {ax}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _finish("concat", np.concatenate([t.data for t in ts], axis=ax), tuple(ts), rule)


def stack(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise DimensionError(f"stack: shapes {ts[0].shape} and {t.shape} differ")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def rule(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _finish("stack", out, tuple(ts), rule)


def take(x, index, axis=-1):
    """Select one position along ``axis``, dropping that axis."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if not 0 <= index < x.shape[ax]:
        raise DimensionError(f"take: index {index} out of range for axis of size {x.shape[ax]}")
    if x.ndim == 1:
        raise DimensionError("take: cannot drop the only axis of a vector")
    src = x.shape

    def rule(g):
        full = np.zeros(src)
        idx = [slice(None)] * len(src)
        idx[ax] = index
        full[tuple(idx)] = g
        return (full,)

    return _finish("take", np.take(x.data, index, axis=ax).copy(), (x,), rule)


# ----------------------------------------------------------------------------
# Elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _finish("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _finish("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    """Hadamard product."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("hadamard", a, b)
    A, B = a.data, b.data
    return _finish("hadamard", A * B, (a, b), lambda g: (g * B, g * A))


hadamard = mul


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _finish("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x):
    x = as_tensor(x)
    # relu'(0) = 0
    active = x.data > 0
    return _finish("relu", np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _finish("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _finish("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x):
    x = as_tensor(x)
    e = np.exp(x.data)
    return _finish("exp", e, (x,), lambda g: (g * e,))


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        bad = np.argwhere(x.data <= 0)[0]
        raise DomainError(f"log of non-positive value at index {tuple(bad)}")
    X = x.data
    return _finish("log", np.log(X), (x,), lambda g: (g / X,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "hadamard": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "scale": scale,
}


def elementwise(op, *operands):
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}; choose from {sorted(_ELEMENTWISE)}")
    return fn(*operands)


def select_rows(cond, a, b):
    """Row-wise choice: ``out[i] = a[i] if cond[i] else b[i]`` for B×H operands."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("select_rows", a, b)
    cond = np.asarray(cond, dtype=bool)
    if cond.shape != a.shape[:1]:
        raise DimensionError(f"select_rows: condition {cond.shape} vs operands {a.shape}")
    c = cond.reshape((-1,) + (1,) * (a.ndim - 1))
    return _finish(
        "select_rows",
        np.where(c, a.data, b.data),
        (a, b),
        lambda g: (np.where(c, g, 0.0), np.where(c, 0.0, g)),
    )


def channel_scale(x, s):
    """``out[b, c, t] = s[b, c] * x[b, c, t]``."""
    x, s = as_tensor(x), as_tensor(s)
    if x.ndim != 3 or s.shape != x.shape[:2]:
        raise DimensionError(f"channel_scale: input {x.shape} vs scale {s.shape}")
    X, S = x.data, s.data
    return _finish(
        "channel_scale",
        X * S[:, :, None],
        (x, s),
        lambda g: (g * S[:, :, None], np.einsum("bct,bct->bc", g, X)),
    )


def time_mask(x, mask):
    """Zero every position ``t`` of a B×C×T tensor where ``mask[b, t]`` is false."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or m.shape != (x.shape[0], x.shape[2]):
        raise DimensionError(f"time_mask: input {x.shape} vs mask {m.shape}")
    keep = m[:, None, :]
    return _finish("time_mask", np.where(keep, x.data, 0.0), (x,), lambda g: (np.where(keep, g, 0.0),))


# ----------------------------------------------------------------------------
# Reductions

def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    src = x.shape
    return _finish("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(src, float(g)),))


def _check_mask(op, x, mask):
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape[:-2] + x.shape[-1:]:
        raise DimensionError(f"{op}: mask {m.shape} does not fit input {x.shape}")
    return m


def temporal_mean(x, mask=None):
    """Average over the last (time) axis: C×T → C, or B×C×T → B×C.

    With ``mask`` (T or B×T booleans) only valid steps are averaged.
    """
    x = as_tensor(x)
    if x.ndim not in (2, 3):
        raise DimensionError(f"temporal_mean expects C×T or B×C×T, got {x.shape}")
    if mask is None:
        T = x.shape[-1]
        src = x.shape
        return _finish(
            "temporal_mean",
            x.data.sum(axis=-1) / T,
            (x,),
            lambda g: (np.broadcast_to(g[..., None] / T, src).copy(),),
        )
    m = _check_mask("temporal_mean", x, mask)
    counts = m.sum(axis=-1).astype(np.float64)
    if np.any(counts == 0):
        raise DimensionError("temporal_mean: a sequence has zero valid time steps")
    w = m[..., None, :] / counts[..., None, None]
    X = x.data
    out = np.where(m[..., None, :], X, 0.0).sum(axis=-1) / counts[..., None]
    return _finish("temporal_mean", out, (x,), lambda g: (g[..., None] * w,))


def softmax(x, mask=None):
    """Softmax over the last axis with max-shift for stability.

    Masked-out entries receive probability exactly 0; a row with no valid
    entry is all zeros. The normaliser is accumulated position by position,
    so trailing masked entries never perturb the result.
    """
    x = as_tensor(x)
    X = x.data
    if mask is None:
        m = np.ones(X.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != X.shape:
            raise DimensionError(f"softmax: mask {m.shape} vs logits {X.shape}")
    any_valid = m.any(axis=-1, keepdims=True)
    shifted = np.where(m, X, -np.inf)
    mx = np.where(any_valid, shifted.max(axis=-1, keepdims=True), 0.0)
    e = np.where(m, np.exp(np.where(m, X - mx, 0.0)), 0.0)
    total = np.zeros(X.shape[:-1] + (1,))
    for k in range(X.shape[-1]):
        total += e[..., k : k + 1]
    y = np.where(any_valid, e / np.where(any_valid, total, 1.0), 0.0)

    def rule(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _finish("softmax", y, (x,), rule)


def attend(weights, annotations):
    """Convex combination of annotation columns.

    ``weights`` is B×S, ``annotations`` B×H×S; returns B×H with
    ``out[b] = sum_j weights[b, j] * annotations[b, :, j]`` accumulated in
    ascending ``j``.
    """
    w, a = as_tensor(weights), as_tensor(annotations)
    if w.ndim != 2 or a.ndim != 3 or a.shape[0] != w.shape[0] or a.shape[2] != w.shape[1]:
        raise DimensionError(f"attend: weights {w.shape} vs annotations {a.shape}")
    W, A = w.data, a.data
    out = np.zeros(A.shape[:2])
    for j in range(A.shape[2]):
        out += W[:, j : j + 1] * A[:, :, j]

    def rule(g):
        return np.einsum("bh,bhs->bs", g, A), g[:, :, None] * W[:, None, :]

    return _finish("attend", out, (w, a), rule)


def pick(p, labels):
    """``out[b] = p[b, labels[b]]``."""
    p = as_tensor(p)
    labels = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise DimensionError(f"pick: probabilities {p.shape} vs labels {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= p.shape[1]):
        raise ContractError(f"label out of range [0, {p.shape[1]})")
    rows = np.arange(p.shape[0])
    src = p.shape

    def rule(g):
        full = np.zeros(src)
        full[rows, labels] = g
        return (full,)

    return _finish("pick", p.data[rows, labels].copy(), (p,), rule)


# ----------------------------------------------------------------------------
# Convolution and normalisation

def same_padding(width):
    """(left, right) zero padding that keeps the length for stride 1."""
    total = width - 1
    return total // 2, total - total // 2


def conv1d(x, kernels, bias, padding="same", stride=1):
    """Temporal cross-correlation.

    ``x`` is C_in×T (or B×C_in×T), ``kernels`` C_out×d×C_in, ``bias`` C_out.
    ``out[i, t] = bias[i] + sum_{t'} sum_s kernels[i, t', s] * x[s, t*stride + t' - pad_left]``
    accumulated starting from the bias, over ``t'`` and then ``s``.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    single = x.ndim == 2
    X = x.data[None] if single else x.data
    if X.ndim != 3:
        raise DimensionError(f"conv1d input must be C×T or B×C×T, got {x.shape}")
    K, b = kernels.data, bias.data
    if K.ndim != 3:
        raise DimensionError(f"conv1d kernels must be C_out×d×C_in, got {kernels.shape}")
    c_out, d, c_in = K.shape
    if X.shape[1] != c_in:
        raise DimensionError(f"conv1d: input has {X.shape[1]} channels, kernels expect {c_in}")
    if b.shape != (c_out,):
        raise DimensionError(f"conv1d: bias {b.shape} does not match {c_out} output channels")
    if stride < 1:
        raise DimensionError(f"conv1d: stride must be >= 1, got {stride}")
    T = X.shape[2]
    if padding == "valid":
        if d > T:
            raise DimensionError(f"conv1d: kernel width {d} exceeds sequence length {T}")
        left = right = 0
        t_out = (T - d) // stride + 1
    elif padding == "same":
        t_out = -(-T // stride)
        total = max((t_out - 1) * stride + d - T, 0)
        left, right = total // 2, total - total // 2
    else:
        raise DimensionError(f"conv1d: unknown padding {padding!r}")
    Xp = np.pad(X, ((0, 0), (0, 0), (left, right))) if left or right else X
    span = stride * (t_out - 1) + 1

    out = np.empty((X.shape[0], c_out, t_out))
    out[...] = b[None, :, None]
    for tp in range(d):
        window = Xp[:, :, tp : tp + span : stride]
        for s in range(c_in):
            out += K[None, :, tp, s, None] * window[:, None, s, :]

    def rule(g):
        G = g[None] if single else g
        dK = np.empty_like(K)
        dXp = np.zeros_like(Xp)
        for tp in range(d):
            window = Xp[:, :, tp : tp + span : stride]
            dK[:, tp, :] = np.einsum("bot,bst->os", G, window)
            dXp[:, :, tp : tp + span : stride] += np.einsum("bot,os->bst", G, K[:, tp, :])
        if "conv1d" in FAULTS:
            dK = dK * 1.01
        dX = dXp[:, :, left : left + T]
        db = G.sum(axis=(0, 2))
        return (dX[0] if single else dX), dK, db

    return _finish("conv1d", out[0] if single else out, (x, kernels, bias), rule)


def batch_norm(x, gamma, beta, running_mean, running_var, epsilon, training, mask=None):
    """Per-channel normalisation of a B×C×T tensor.

    In training mode statistics are taken over the batch and time axes
    jointly (valid positions only when ``mask`` is given) and returned so
    the caller can update running averages. In inference mode the supplied
    running statistics are used.

    Returns ``(output, batch_mean, batch_var)``; the statistics are ``None``
    in inference mode.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 3:
        raise DimensionError(f"batch_norm expects B×C×T, got {x.shape}")
    C = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (C,):
            raise DimensionError(f"batch_norm: {name} {t.shape} does not match {C} channels")
    X, G = x.data, gamma.data
    if mask is None:
        valid = np.ones((X.shape[0], X.shape[2]), dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
        if valid.shape != (X.shape[0], X.shape[2]):
            raise DimensionError(f"batch_norm: mask {valid.shape} vs input {x.shape}")
    V = valid[:, None, :]

    if training:
        n = int(valid.sum())
        if n == 0:
            raise DimensionError("batch_norm: zero batch×time elements per channel")
        mu = np.where(V, X, 0.0).sum(axis=(0, 2)) / n
        centred = X - mu[None, :, None]
        var = np.where(V, centred * centred, 0.0).sum(axis=(0, 2)) / n
    else:
        mu = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
        if mu.shape != (C,) or var.shape != (C,):
            raise DimensionError("batch_norm: running statistics do not match channel count")
        centred = X - mu[None, :, None]
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = centred * inv[None, :, None]
    out = xhat * G[None, :, None] + beta.data[None, :, None]

    def rule(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        gx = g * G[None, :, None]
        dx = gx * inv[None, :, None]
        if training:
            dvar = -0.5 * (gx * centred).sum(axis=(0, 2)) * inv**3
            dmu = -(gx.sum(axis=(0, 2))) * inv
            dx = dx + np.where(V, (dmu[None, :, None] + 2.0 * dvar[None, :, None] * centred) / n, 0.0)
        return dx, dgamma, dbeta

    result = _finish("batch_norm", out, (x, gamma, beta), rule)
    if training:
        return result, mu, var
    return result, None, None


# ----------------------------------------------------------------------------
# Differentiation

def backward(tape, loss):
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Returns a dict mapping each leaf name to its gradient tensor. Leaves
    with no path to ``loss`` receive zeros.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ContractError("loss must be a tensor recorded on the given tape")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads = {loss.slot: np.ones(loss.shape)}
    visits = 0
    for node in reversed(tape.nodes):
        visits += 1
        g = grads.pop(node.out_slot, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp.tape is None or gi is None:
                continue
            prev = grads.get(inp.slot)
            grads[inp.slot] = gi if prev is None else prev + gi
    tape.visits = visits
    return {
        name: Tensor._wrap(grads[t.slot] if t.slot in grads else np.zeros(t.shape), name=name)
        for name, t in tape.leaves.items()
    }


def finite_difference_check(f, point, step=1e-5):
    """Largest relative gap between tape gradients and central differences.

    ``f`` maps a tensor (or a dict of named tensors when ``point`` is a
    mapping) to a scalar tensor. The per-coordinate error is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if step <= 0:
        raise ContractError("finite-difference step must be positive")
    named = isinstance(point, Mapping)
    raw = point if named else {"x": point}
    arrays = {
        k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for k, v in raw.items()
    }

    def call(values):
        return f(values if named else values["x"])

    tape = Tape()
    leaves = {k: tape.leaf(a, k) for k, a in arrays.items()}
    grads = backward(tape, call(leaves))

    worst = 0.0
    for k, a in arrays.items():
        analytic = grads[k].data.reshape(-1)
        flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for delta in (step, -step):
                flat[i] = orig + delta
                consts = {n: Tensor._wrap(v.copy()) for n, v in arrays.items()}
                try:
                    vals.append(call(consts).item())
                except (NumericError, DomainError) as exc:
                    raise NumericError(f"non-finite evaluation at {k}[{i}]: {exc}") from exc
            flat[i] = orig
            if not all(np.isfinite(vals)):
                raise NumericError(f"non-finite evaluation at {k}[{i}]")
            numeric = (vals[0] - vals[1]) / (2.0 * step)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, err)
    return worst
