"""MTS-CSV ingestion, z-normalisation, padding and masks.

File format (one file per split)::

    sample_id,label,variable,values...
    s0,1,0,0.5,0.25,1.0
    s0,1,1,2.0,1.5,0.0
    s1,0,0,3.5,1.0
    s1,0,1,0.75,0.5

Rows of a sample are contiguous with variables ``0..M-1`` in order; a
sample's length is the number of value columns, equal on all its rows.
A dataset directory holds ``train.csv``, ``test.csv`` and ``meta.txt``
(flat ``key=value`` lines, e.g. ``name=...`` and ``classes=a,b``).
"""

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError

HEADER = "sample_id,label,variable,values..."
STD_FLOOR = 1e-8


@dataclass
class RawSplit:
    """Unpadded series as parsed: ``series[i]`` is an M×L_i array."""

    ids: list
    labels: list
    series: list

    @property
    def lengths(self):
        return [s.shape[1] for s in self.series]

    @property
    def num_variables(self):
        return self.series[0].shape[0] if self.series else 0

    def __len__(self):
        return len(self.series)


@dataclass
class Dataset:
    samples: np.ndarray  # B×M×N, zero beyond each length
    labels: np.ndarray
    lengths: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    split: str = "train"
    ids: list = field(default_factory=list)

    @property
    def masks(self):
        N = self.samples.shape[2]
        return np.arange(N)[None, :] < self.lengths[:, None]

    @property
    def num_variables(self):
        return self.samples.shape[1]

    @property
    def max_length(self):
        return self.samples.shape[2]

    def __len__(self):
        return self.samples.shape[0]


def parse_mts_csv(stream):
    """Parse MTS-CSV text (a string or text stream) into a :class:`RawSplit`."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    ids, labels, series = [], [], []
    seen = set()
    cur = None  # [id, label, rows, first_line]
    expected_m = None

    def close(lineno):
        nonlocal expected_m
        sid, label, rows, first = cur
        if expected_m is None:
            expected_m = len(rows)
        elif len(rows) != expected_m:
            raise ParseError(
                f"sample {sid!r} (starting line {first}) has {len(rows)} variables, expected {expected_m}",
                lineno,
            )
        ids.append(sid)
        labels.append(label)
        series.append(np.array(rows, dtype=np.float64))

    lineno = 0
    header_seen = False
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not header_seen:
            if not line.startswith("sample_id,label,variable"):
                raise ParseError("missing header 'sample_id,label,variable,values...'", lineno)
            header_seen = True
            continue
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) < 4:
            raise ParseError("row needs sample_id, label, variable and at least one value", lineno)
        sid = fields[0]
        try:
            label = int(fields[1])
            var = int(fields[2])
        except ValueError:
            raise ParseError(f"label and variable must be integers, got {fields[1]!r}, {fields[2]!r}", lineno) from None
        try:
            values = [float(v) for v in fields[3:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric value: {exc}", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", lineno)
        if cur is None or cur[0] != sid:
            if cur is not None:
                close(lineno)
            if sid in seen:
                raise ParseError(f"rows of sample {sid!r} are not contiguous", lineno)
            seen.add(sid)
            cur = [sid, label, [], lineno]
        rows = cur[2]
        if var < len(rows):
            raise ParseError(f"duplicate (sample, variable) pair ({sid!r}, {var})", lineno)
        if var != len(rows):
            raise ParseError(f"sample {sid!r}: expected variable {len(rows)}, got {var}", lineno)
        if label != cur[1]:
            raise ParseError(f"sample {sid!r} changes label from {cur[1]} to {label}", lineno)
        if rows and len(values) != len(rows[0]):
            raise ParseError(
                f"sample {sid!r} variable {var} has {len(values)} values, sibling rows have {len(rows[0])}",
                lineno,
            )
        rows.append(values)
    if not header_seen:
        raise ParseError("empty file: missing header", 1)
    if cur is not None:
        close(lineno)
    return RawSplit(ids, labels, series)


def serialize_mts_csv(raw):
    """Inverse of :func:`parse_mts_csv`; floats use the shortest round-trip form."""
    lines = [HEADER]
    for sid, label, s in zip(raw.ids, raw.labels, raw.series):
        for v, row in enumerate(s):
            lines.append(",".join([str(sid), str(int(label)), str(v)] + [repr(float(x)) for x in row]))
    return "\n".join(lines) + "\n"


def normalization_stats(train):
    """Per-variable mean and population std over all unpadded training values."""
    if len(train) == 0:
        raise ContractError("training split is empty")
    joined = np.concatenate(train.series, axis=1)
    mean = joined.mean(axis=1)
    std = np.maximum(joined.std(axis=1), STD_FLOOR)
    return mean, std


def apply_stats(raw, mean, std):
    series = [(s - mean[:, None]) / std[:, None] for s in raw.series]
    return RawSplit(list(raw.ids), list(raw.labels), series)


def znormalize(train, *others):
    """Standardise every split with statistics of the training split.

    Returns ``(normalised_splits, (mean, std))`` where the first split is
    the training split.
    """
    mean, std = normalization_stats(train)
    return [apply_stats(r, mean, std) for r in (train,) + others], (mean, std)


def pad_and_mask(values, N):
    """Zero-pad an M×L series to M×N; the mask is true on ``[0, L)``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ContractError(f"series must be M×L, got shape {values.shape}")
    L = values.shape[1]
    if L < 1:
        raise ContractError("series length must be at least 1")
    if L > N:
        raise ContractError(f"series length {L} exceeds padded length {N}")
    out = np.zeros((values.shape[0], N))
    out[:, :L] = values
    return out, np.arange(N) < L


def to_dataset(raw, N, stats, split):
    mean, std = stats
    if len(raw) == 0:
        samples = np.zeros((0, len(mean), N))
    else:
        samples = np.stack([pad_and_mask(s, N)[0] for s in raw.series])
    return Dataset(
        samples=samples,
        labels=np.asarray(raw.labels, dtype=np.int64),
        lengths=np.asarray(raw.lengths, dtype=np.int64),
        mean=np.asarray(mean),
        std=np.asarray(std),
        split=split,
        ids=list(raw.ids),
    )


def read_meta(path):
    meta = {}
    if not os.path.exists(path):
        return meta
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", lineno)
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def format_meta(meta):
    return "".join(f"{k}={v}\n" for k, v in meta.items())


def read_split(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return parse_mts_csv(fh)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None


def load_dataset_dir(directory, max_length=None, stats=None):
    """Load, normalise and pad ``train.csv``/``test.csv`` from a dataset directory.

    ``max_length`` defaults to the longest series across both splits;
    ``stats`` (mean, std) defaults to those of the training split.
    Returns ``(train, test, meta)``.
    """
    meta = read_meta(os.path.join(directory, "meta.txt"))
    train_raw = read_split(os.path.join(directory, "train.csv"))
    test_path = os.path.join(directory, "test.csv")
    test_raw = read_split(test_path) if os.path.exists(test_path) else RawSplit([], [], [])
    if len(train_raw) and len(test_raw) and train_raw.num_variables != test_raw.num_variables:
        raise ParseError(
            f"train has {train_raw.num_variables} variables but test has {test_raw.num_variables}"
        )
    if stats is None:
        stats = normalization_stats(train_raw)
    if max_length is None:
        max_length = max(train_raw.lengths + test_raw.lengths)
    train = to_dataset(apply_stats(train_raw, *stats), max_length, stats, "train")
    test = to_dataset(apply_stats(test_raw, *stats), max_length, stats, "test")
    return train, test, meta


def class_names(meta, num_classes):
    names = [c for c in meta.get("classes", "").split(",") if c]
    return names if len(names) == num_classes else [str(i) for i in range(num_classes)]


def write_dataset_dir(directory, train, test, meta=None):
    from .checkpoint import atomic_write_text

    os.makedirs(directory, exist_ok=True)
    atomic_write_text(os.path.join(directory, "train.csv"), serialize_mts_csv(train))
    atomic_write_text(os.path.join(directory, "test.csv"), serialize_mts_csv(test))
    atomic_write_text(os.path.join(directory, "meta.txt"), format_meta(meta or {}))


def make_toy_splits(seed=0, n_train=40, n_test=40, num_variables=3, length=32, noise=0.3):
    """Two-class synthetic problem: noisy sines (label 0) versus noisy squares (label 1).

    Each variable gets its own random frequency and phase; classes are
    balanced and interleaved.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length)

    def sample(label):
        freq = rng.uniform(1.0, 3.0, size=(num_variables, 1))
        phase = rng.uniform(0.0, 2 * np.pi, size=(num_variables, 1))
        wave = np.sin(2 * np.pi * freq * t[None, :] / length + phase)
        if label == 1:
            wave = np.where(wave >= 0, 1.0, -1.0)
        return wave + noise * rng.standard_normal((num_variables, length))

    def split(n, prefix):
        labels = [i % 2 for i in range(n)]
        return RawSplit([f"{prefix}{i}" for i in range(n)], labels, [sample(y) for y in labels])

    return split(n_train, "tr"), split(n_test, "te")
