"""Slow, independent reference implementations used to check the fast kernels.

Everything here works on Python floats and explicit loops so that it
shares no code path with :mod:`mlstmfcn.tensor` or :mod:`mlstmfcn.evalstats`.
"""

import itertools
import math


def matmul_loops(a, b):
    """Triple-loop product; each entry accumulates over k in order from 0.0."""
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i][p]) * float(b[p][j])
            out[i][j] = acc
    return out


def conv1d_loops(x, kernels, bias, padding="same", stride=1):
    """Nested-loop cross-correlation of a C_in×T input (lists or arrays).

    Out-of-range positions contribute ``kernel * 0.0``, matching zero padding.
    """
    c_in, T = len(x), len(x[0])
    c_out, d = len(kernels), len(kernels[0])
    if padding == "valid":
        left = 0
        t_out = (T - d) // stride + 1
    else:
        t_out = -(-T // stride)
        left = max((t_out - 1) * stride + d - T, 0) // 2
    out = []
    for i in range(c_out):
        row = []
        for t in range(t_out):
            acc = float(bias[i])
            for tp in range(d):
                pos = t * stride + tp - left
                for s in range(c_in):
                    v = float(x[s][pos]) if 0 <= pos < T else 0.0
                    acc += float(kernels[i][tp][s]) * v
            row.append(acc)
        out.append(row)
    return out


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def lstm_step_scalar(x, h_prev, m_prev, p):
    """Per-unit transcription of the LSTM update.

    ``p`` maps ``w_u, i_u, b_u, ...`` to nested lists (or arrays).
    Returns ``(h, m)`` as lists.
    """
    H, D = len(h_prev), len(x)

    def pre(g, j):
        acc = float(p["b_" + g][j])
        for k in range(H):
            acc += float(p["w_" + g][j][k]) * float(h_prev[k])
        for k in range(D):
            acc += float(p["i_" + g][j][k]) * float(x[k])
        return acc

    h, m = [], []
    for j in range(H):
        g_u = _sig(pre("u", j))
        g_f = _sig(pre("f", j))
        g_o = _sig(pre("o", j))
        g_c = math.tanh(pre("c", j))
        mj = g_f * float(m_prev[j]) + g_u * g_c
        m.append(mj)
        h.append(math.tanh(g_o * mj))
    return h, m


def average_ranks_brute(values, descending=True):
    """Rank of v = 1 + #(strictly better) + (#(equal) - 1) / 2."""
    out = []
    for v in values:
        better = sum(1 for u in values if (u > v if descending else u < v))
        equal = sum(1 for u in values if u == v)
        out.append(1 + better + (equal - 1) / 2)
    return out


def wilcoxon_enumerate(x, y):
    """Two-sided exact signed-rank p-value by listing all 2^n sign patterns."""
    d = [a - b for a, b in zip(x, y) if a - b != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = average_ranks_brute([abs(v) for v in d], descending=False)
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    w_minus = sum(r for r, v in zip(ranks, d) if v < 0)
    w = min(w_plus, w_minus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        if sum(r for r, s in zip(ranks, signs) if s) <= w + 1e-9:
            hits += 1
    return w, min(1.0, 2.0 * hits / 2**n)
