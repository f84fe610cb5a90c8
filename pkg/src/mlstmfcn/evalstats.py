"""Cross-dataset model comparison: PCE/MPCE, mean ranks, Wilcoxon signed-rank.

Accuracy tables are CSV with header ``dataset,classes,<model>...`` and
accuracies in percent.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ContractError, ParseError


@dataclass
class AccuracyTable:
    datasets: list
    models: list
    accuracies: np.ndarray  # datasets × models, percent
    class_counts: np.ndarray

    def __post_init__(self):
        self.accuracies = np.asarray(self.accuracies, dtype=np.float64)
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        if self.accuracies.shape != (len(self.datasets), len(self.models)):
            raise ContractError("accuracy matrix does not match dataset/model labels")
        if np.any(self.accuracies < 0) or np.any(self.accuracies > 100):
            raise ContractError("accuracies must lie in [0, 100]")
        if np.any(self.class_counts < 1):
            raise ContractError("class counts must be positive")

    def column(self, model):
        try:
            return self.accuracies[:, self.models.index(model)]
        except ValueError:
            raise KeyError(f"unknown model {model!r}") from None

    def select(self, models):
        idx = [self.models.index(m) for m in models]
        return AccuracyTable(list(self.datasets), list(models), self.accuracies[:, idx], self.class_counts)


def read_accuracy_csv(text):
    """Parse an accuracy table; errors name the offending dataset/model cell."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty accuracy table")
    header = [c.strip() for c in rows[0]]
    if header[:2] != ["dataset", "classes"] or len(header) < 3:
        raise ParseError("header must be 'dataset,classes,<model names...>'", 1)
    models = header[2:]
    datasets, counts, acc = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        name = row[0].strip() if row else ""
        if len(row) != len(header):
            missing = models[len(row) - 2] if 2 <= len(row) < len(header) else "?"
            raise ParseError(f"dataset {name!r}: expected {len(header)} cells, got {len(row)} (missing {missing!r})", lineno)
        try:
            counts.append(int(row[1]))
        except ValueError:
            raise ParseError(f"dataset {name!r}: class count {row[1]!r} is not an integer", lineno) from None
        vals = []
        for model, cell in zip(models, row[2:]):
            cell = cell.strip()
            if not cell:
                raise ParseError(f"missing cell for dataset {name!r}, model {model!r}", lineno)
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"cell ({name!r}, {model!r}) is not numeric: {cell!r}", lineno) from None
        datasets.append(name)
        acc.append(vals)
    try:
        return AccuracyTable(datasets, models, np.array(acc).reshape(len(datasets), len(models)), counts)
    except ContractError as exc:
        raise ParseError(str(exc)) from None


def load_fixture(name="uci_accuracy.csv"):
    """Text of a bundled fixture table."""
    return resources.files("mlstmfcn.fixtures").joinpath(name).read_text(encoding="utf-8")


def read_reference_csv(text):
    """Published summary values: CSV ``model,metric,value`` → ``{model: {metric: value}}``."""
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        out.setdefault(row["model"], {})[row["metric"]] = float(row["value"])
    return out


def pce(accuracy_percent, num_classes):
    """Per-class error in percent units: ``(100 - accuracy) / classes``."""
    if num_classes < 1:
        raise ContractError("num_classes must be at least 1")
    if not 0.0 <= accuracy_percent <= 100.0:
        raise ContractError("accuracy must lie in [0, 100]")
    return (100.0 - accuracy_percent) / num_classes


def mpce(table, model):
    col = table.column(model)
    return float(np.mean([pce(a, c) for a, c in zip(col, table.class_counts)]))


def average_ranks(values, descending=True):
    """Ranks 1..k with ties sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(-v if descending else v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_matrix(table):
    return np.array([average_ranks(row) for row in table.accuracies])


def mean_ranks(table):
    """``{model: (arithmetic mean rank, geometric mean rank)}``, best accuracy = rank 1."""
    if len(table.models) < 1 or len(table.datasets) < 1:
        raise ContractError("need at least one dataset and one model")
    R = rank_matrix(table)
    return {
        m: (float(R[:, j].mean()), float(math.exp(np.log(R[:, j]).mean())))
        for j, m in enumerate(table.models)
    }


@dataclass
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    pvalue: float
    n: int  # non-zero differences
    w_plus: float
    w_minus: float
    method: str


def _exact_tail(doubled_ranks, w2):
    """P(W+ <= w) under the null, with ranks and threshold in doubled units."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return int(counts[: w2 + 1].sum()), 2 ** len(doubled_ranks)


def wilcoxon_signed_rank(x, y, method="auto"):
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped and tied absolute differences share their
    average rank. ``method='auto'`` uses the exact null distribution for
    ``n <= 20`` and otherwise a normal approximation with tie-corrected
    variance and continuity correction. With no non-zero difference the
    p-value is 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"paired samples must have equal lengths, got {x.shape} and {y.shape}")
    if method not in ("auto", "exact", "normal"):
        raise ContractError(f"unknown method {method!r}")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, 0.0, 0.0, "none")
    ranks = average_ranks(np.abs(d), descending=False)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if method == "exact" or (method == "auto" and n <= 20):
        doubled = [int(round(2 * r)) for r in ranks]
        hits, total = _exact_tail(doubled, int(round(2 * w)))
        p = min(1.0, 2.0 * hits / total)
        return WilcoxonResult(w, p, n, w_plus, w_minus, "exact")
    mu = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
    if var <= 0:
        return WilcoxonResult(w, 1.0, n, w_plus, w_minus, "normal")
    z = max(abs(w_plus - mu) - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(w, min(1.0, math.erfc(z / math.sqrt(2.0))), n, w_plus, w_minus, "normal")


def win_counts(table, baseline=None):
    """Datasets on which each model matches or beats ``baseline``.

    Without a baseline, a win is achieving the best accuracy on a dataset
    (ties count for every tied model). The baseline itself gets no count.
    """
    A = table.accuracies
    if baseline is None:
        best = A.max(axis=1, keepdims=True)
        return {m: int(np.sum(A[:, j] == best[:, 0])) for j, m in enumerate(table.models)}
    ref = table.column(baseline)
    return {m: int(np.sum(A[:, j] >= ref)) for j, m in enumerate(table.models) if m != baseline}


@dataclass
class MetricsReport:
    models: list
    datasets: list
    ranks: np.ndarray
    arith_rank: dict
    geom_rank: dict
    mpce: dict
    wins: dict
    pvalues: dict  # (model_a, model_b) -> p
    alpha: float
    baseline: object = None
    notes: list = field(default_factory=list)
    reference_deltas: dict = field(default_factory=dict)

    def significant(self, a, b):
        key = (a, b) if (a, b) in self.pvalues else (b, a)
        return self.pvalues[key] < self.alpha

    def to_tsv(self):
        lines = ["model\tarith_rank\tgeom_rank\tmpce\twins"]
        for m in self.models:
            wins = self.wins.get(m)
            lines.append(
                f"{m}\t{self.arith_rank[m]:.4f}\t{self.geom_rank[m]:.4f}\t{self.mpce[m]:.4f}\t"
                + ("-" if wins is None else str(wins))
            )
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "models": list(self.models),
            "datasets": list(self.datasets),
            "alpha": self.alpha,
            "baseline": self.baseline,
            "summary": [
                {
                    "model": m,
                    "arith_rank": self.arith_rank[m],
                    "geom_rank": self.geom_rank[m],
                    "mpce": self.mpce[m],
                    "wins": self.wins.get(m),
                }
                for m in self.models
            ],
            "ranks": {d: dict(zip(self.models, map(float, row))) for d, row in zip(self.datasets, self.ranks)},
            "wilcoxon": [
                {"a": a, "b": b, "p": p, "significant": p < self.alpha} for (a, b), p in self.pvalues.items()
            ],
            "reference_deltas": self.reference_deltas,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def compare_report(table, alpha=0.05, baseline="auto", reference=None):
    """Ranks, MPCE, win counts and pairwise Wilcoxon p-values for a table.

    ``baseline='auto'`` picks a column named ``Baseline`` (any case) if
    present; pass ``None`` to count outright wins instead. ``reference``
    maps model → {metric: published value}; differences are recorded in
    ``reference_deltas`` and noted when they exceed rounding.
    """
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")
    if baseline == "auto":
        baseline = next((m for m in table.models if m.lower() == "baseline"), None)
    elif baseline is not None and baseline not in table.models:
        raise KeyError(f"unknown baseline model {baseline!r}")
    R = rank_matrix(table)
    means = mean_ranks(table)
    notes = []
    pvalues = {}
    if len(table.datasets) < 2:
        notes.append(f"Wilcoxon skipped: only {len(table.datasets)} dataset(s)")
    else:
        A = table.accuracies
        for i, a in enumerate(table.models):
            for j in range(i + 1, len(table.models)):
                key = (a, table.models[j]) if a != table.models[j] else (f"{a}#{i}", f"{a}#{j}")
                pvalues[key] = wilcoxon_signed_rank(A[:, i], A[:, j]).pvalue
    report = MetricsReport(
        models=list(table.models),
        datasets=list(table.datasets),
        ranks=R,
        arith_rank={m: v[0] for m, v in means.items()},
        geom_rank={m: v[1] for m, v in means.items()},
        mpce={m: mpce(table, m) for m in table.models},
        wins=win_counts(table, baseline),
        pvalues=pvalues,
        alpha=alpha,
        baseline=baseline,
        notes=notes,
    )
    for model, metrics in (reference or {}).items():
        if model not in table.models:
            continue
        for metric, published in metrics.items():
            computed = {
                "arith_rank": report.arith_rank,
                "geom_rank": report.geom_rank,
                "mpce": report.mpce,
                "wins": report.wins,
            }[metric].get(model)
            if computed is None:
                continue
            delta = float(computed) - published
            report.reference_deltas.setdefault(model, {})[metric] = {
                "computed": float(computed),
                "published": published,
                "delta": delta,
            }
            if abs(delta) > 0.005 + 1e-9:
                notes.append(f"{model} {metric}: computed {float(computed):.4g}, published {published:.4g}")
    return report
