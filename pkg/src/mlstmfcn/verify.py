"""Self-checks behind ``mlstmfcn verify``: gradient checks, oracles, invariances.

Each suite returns a list of :class:`Check`; ``run_verify`` runs a chosen
subset. Instances are drawn from fixed seeds so a run is reproducible.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import evalstats as es
from . import layers as ly
from . import model as md
from . import optim as op
from . import oracles as orc
from . import tensor as tn

GRAD_TOL = 1e-4
GRAD_STEP = 1e-5
INSTANCES = 10


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.suite}/{self.name}" + (f"  ({self.detail})" if self.detail else "")


def _worst(check_fn, instances):
    return max(check_fn(np.random.default_rng(seed)) for seed in range(instances))


def _grad_check(suite, name, fn, instances=INSTANCES):
    err = _worst(fn, instances)
    return Check(suite, name, err < GRAD_TOL, f"max rel err {err:.2e}")


# ----------------------------------------------------------------------------
# Gradient instances; each builds a random point and returns the worst error.

def _lstm_arrays(rng, H, D, scale=0.5):
    out = {}
    for g in "ufoc":
        out[f"w_{g}"] = scale * rng.standard_normal((H, H))
        out[f"i_{g}"] = scale * rng.standard_normal((H, D))
        out[f"b_{g}"] = scale * rng.standard_normal(H)
    return out


def _lstm_view(v):
    return ly.LSTMParams(**{p + g: v[p + g] for p in ("w_", "i_", "b_") for g in "ufoc"})


def _attn_arrays(rng, H, A=3):
    return {
        "w_query": 0.5 * rng.standard_normal((A, H)),
        "w_annotation": 0.5 * rng.standard_normal((A, H)),
        "v": 0.5 * rng.standard_normal(A),
    }


def _readout(rng, shape):
    """Fixed random weights turning any output into a scalar loss."""
    w = tn.Tensor(rng.standard_normal(shape))
    return lambda y: tn.tsum(tn.mul(y, w))


def grad_conv_block(rng):
    B, C, T, F, d = 3, 2, 6, 3, 3
    mask = np.ones((B, T), dtype=bool)
    mask[1, 4:] = False
    read = _readout(rng, (B, F, T))
    point = {
        "x": rng.standard_normal((B, C, T)),
        "kernels": rng.standard_normal((F, d, C)),
        "bias": rng.standard_normal(F),
        "gamma": 1.0 + 0.2 * rng.standard_normal(F),
        "beta": 0.5 + 0.2 * rng.standard_normal(F),
    }

    def f(v):
        p = ly.ConvBlockParams(v["kernels"], v["bias"], v["gamma"], v["beta"], np.zeros(F), np.ones(F))
        return read(ly.conv_block_forward(v["x"], p, ly.TRAIN, mask))

    return tn.finite_difference_check(f, point, GRAD_STEP)


def grad_se_block(rng):
    B, C, T, r = 2, 4, 5, 2
    read = _readout(rng, (B, C, T))
    point = {
        "x": rng.standard_normal((B, C, T)),
        "w1": rng.standard_normal((C // r, C)),
        "w2": rng.standard_normal((C, C // r)),
    }
    return tn.finite_difference_check(lambda v: read(ly.se_block(v["x"], ly.SEParams(v["w1"], v["w2"], r))), point, GRAD_STEP)


def grad_lstm_step(rng):
    B, H, D = 2, 3, 2
    read = _readout(rng, (B, H))
    read_m = _readout(rng, (B, H))
    point = {"x": rng.standard_normal((B, D)), "h": rng.standard_normal((B, H)), "m": rng.standard_normal((B, H))}
    point.update(_lstm_arrays(rng, H, D))

    def f(v):
        p = _lstm_view(v)
        h, m = ly.lstm_step(v["x"], v["h"], v["m"], p)
        return tn.add(read(h), read_m(m))

    return tn.finite_difference_check(f, point, GRAD_STEP)


def grad_lstm_scan(rng):
    B, H, D, S = 3, 3, 2, 5
    mask = np.ones((B, S), dtype=bool)
    mask[0, 3:] = False
    read = _readout(rng, (B, H))
    point = {"seq": rng.standard_normal((B, D, S))}
    point.update(_lstm_arrays(rng, H, D))

    def f(v):
        p = _lstm_view(v)
        return read(ly.lstm_scan(v["seq"], mask, p))

    return tn.finite_difference_check(f, point, GRAD_STEP)


def grad_attention_context(rng):
    B, H, S = 2, 3, 4
    mask = np.ones((B, S), dtype=bool)
    mask[1, 3:] = False
    read = _readout(rng, (B, H))
    point = {"ann": rng.standard_normal((B, H, S)), "q": rng.standard_normal((B, H))}
    point.update(_attn_arrays(rng, H))

    def f(v):
        p = ly.AttentionParams(v["w_query"], v["w_annotation"], v["v"])
        return read(ly.attention_context(v["ann"], v["q"], p, mask)[0])

    return tn.finite_difference_check(f, point, GRAD_STEP)


def grad_attention_lstm(rng):
    B, H, D, S = 2, 3, 2, 4
    mask = np.ones((B, S), dtype=bool)
    mask[0, 3:] = False
    read = _readout(rng, (B, H))
    point = {"seq": rng.standard_normal((B, D, S))}
    point.update(_lstm_arrays(rng, H, D))
    point.update(_attn_arrays(rng, H))

    def f(v):
        lp = _lstm_view(v)
        ap = ly.AttentionParams(v["w_query"], v["w_annotation"], v["v"])
        return read(ly.attention_lstm_scan(v["seq"], mask, lp, ap))

    return tn.finite_difference_check(f, point, GRAD_STEP)


def grad_rnn(rng):
    B, D, H, S, K = 2, 2, 3, 4, 3
    labels = rng.integers(0, K, B)
    point = {"seq": rng.standard_normal((B, D, S))}
    for layer in range(2):
        point[f"w{layer}"] = 0.5 * rng.standard_normal((H, H))
        point[f"i{layer}"] = 0.5 * rng.standard_normal((H, D if layer == 0 else H))
        point[f"out{layer}"] = 0.5 * rng.standard_normal((K, H))

    def f(v):
        stack = [ly.RNNParams(v[f"w{k}"], v[f"i{k}"], v[f"out{k}"]) for k in range(2)]
        _, pred = ly.rnn_forward(v["seq"], stack, layers=2)
        return op.weighted_cross_entropy(pred, labels, np.ones(K))

    return tn.finite_difference_check(f, point, GRAD_STEP)


def grad_dense_softmax_ce(rng):
    B, D, K = 4, 5, 3
    labels = rng.integers(0, K, B)
    weights = rng.uniform(0.5, 2.0, K)
    point = {"x": rng.standard_normal((B, D)), "w": rng.standard_normal((K, D)), "b": rng.standard_normal(K)}
    return tn.finite_difference_check(
        lambda v: op.weighted_cross_entropy(tn.softmax(tn.linear(v["x"], v["w"], v["b"])), labels, weights),
        point,
        GRAD_STEP,
    )


def toy_gradient_config(attention, shuffle=True):
    """Small model used by the whole-network gradient check."""
    M, N = (2, 5) if shuffle else (5, 4)
    return md.ModelConfig(
        num_variables=M,
        max_length=N,
        num_classes=2,
        conv_filters=(4, 4, 2),
        conv_kernel_widths=(3, 2, 2),
        se_reduction=2,
        lstm_cells=2,
        attention=attention,
        dropout_rate=0.5,
        allow_offgrid=True,
    )


def _grad_model(attention, rng, shuffle=True):
    config = toy_gradient_config(attention, shuffle)
    params = op.init_params(config, rng)
    B = 3
    x = rng.standard_normal((B, config.num_variables, config.max_length))
    masks = np.ones((B, config.max_length), dtype=bool)
    if not shuffle:
        masks[1, 3:] = False
    labels = np.array([0, 1, 1])
    weights = op.class_weights([1, 2])
    arrays = params.arrays()
    trainable = md.learnable_names(params)
    seed = int(rng.integers(1 << 30))

    def f(v):
        view = md.ModelParams.from_named(config, {**arrays, **v})
        probs = md.batch_probabilities(view, config, x, masks, ly.TRAIN, np.random.default_rng(seed))
        return op.weighted_cross_entropy(probs, labels, weights)

    return tn.finite_difference_check(f, {k: arrays[k] for k in trainable}, GRAD_STEP)


def suite_gradients():
    checks = [
        _grad_check("gradients", "conv_block", grad_conv_block),
        _grad_check("gradients", "se_block", grad_se_block),
        _grad_check("gradients", "lstm_step", grad_lstm_step),
        _grad_check("gradients", "lstm_scan", grad_lstm_scan),
        _grad_check("gradients", "attention_context", grad_attention_context),
        _grad_check("gradients", "attention_lstm_scan", grad_attention_lstm),
        _grad_check("gradients", "rnn", grad_rnn),
        _grad_check("gradients", "dense_softmax_ce", grad_dense_softmax_ce),
    ]
    for attention, label in ((False, "mlstm_fcn"), (True, "malstm_fcn")):
        checks.append(_grad_check("gradients", label, lambda rng, a=attention: _grad_model(a, rng)))
    return checks


# ----------------------------------------------------------------------------
# Oracle and algebra suites

def conv_oracle_mismatches(count=100, seed=0):
    """Number of random shapes where conv1d differs in any bit from the loop oracle."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        c_in, c_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        T, d = int(rng.integers(1, 13)), int(rng.integers(1, 8))
        stride = int(rng.integers(1, 3))
        padding = "valid" if d <= T and rng.random() < 0.5 else "same"
        x = rng.standard_normal((c_in, T))
        K = rng.standard_normal((c_out, d, c_in))
        b = rng.standard_normal(c_out)
        fast = tn.conv1d(x, K, b, padding=padding, stride=stride).data
        slow = np.array(orc.conv1d_loops(x, K, b, padding, stride))
        bad += int(not np.array_equal(fast, slow))
    return bad


def suite_conv():
    bad = conv_oracle_mismatches()
    return [Check("conv", "conv1d_matches_loop_oracle", bad == 0, f"{bad}/100 shapes differ")]


def lstm_oracle_error(count=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        H, D = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        arrays = _lstm_arrays(rng, H, D, scale=1.0)
        x, h, m = rng.standard_normal(D), rng.standard_normal(H), rng.standard_normal(H)
        h1, m1 = ly.lstm_step(x, h, m, ly.LSTMParams(**arrays))
        h2, m2 = orc.lstm_step_scalar(x, h, m, arrays)
        worst = max(worst, np.abs(h1.data - h2).max(), np.abs(m1.data - m2).max())
    return float(worst)


def suite_lstm():
    err = lstm_oracle_error()
    return [Check("lstm", "lstm_step_matches_scalar_oracle", err <= 1e-12, f"max abs err {err:.1e}")]


def se_algebra_errors(seed=0):
    """(constant-squeeze error, zero-weight gate error, rescale error)."""
    rng = np.random.default_rng(seed)
    C, T, r = 8, 7, 2
    x = np.repeat(rng.standard_normal((C, 1)), T, axis=1)
    squeeze = tn.temporal_mean(x).data
    e1 = float(np.abs(squeeze - x[:, 0]).max())
    zero = ly.SEParams(np.zeros((C // r, C)), np.zeros((C, C // r)), r)
    y = rng.standard_normal((C, T))
    e2 = float(np.abs(ly.se_block(y, zero).data - 0.5 * y).max())
    p = ly.SEParams(rng.standard_normal((C // r, C)), rng.standard_normal((C, C // r)), r)
    s = ly.se_gates(y, p).data
    e3 = float(np.abs(ly.se_block(y, p).data - s[:, None] * y).max())
    return e1, e2, e3


def suite_se():
    e1, e2, e3 = se_algebra_errors()
    return [
        Check("se", "constant_squeeze", e1 <= 1e-15, f"err {e1:.1e}"),
        Check("se", "zero_weights_halve", e2 == 0.0, f"err {e2:.1e}"),
        Check("se", "channel_rescale", e3 <= 1e-15, f"err {e3:.1e}"),
    ]


def suite_attention():
    rng = np.random.default_rng(0)
    B, H, S = 3, 4, 6
    ann = rng.standard_normal((B, H, S))
    q = rng.standard_normal((B, H))
    p = ly.AttentionParams(*_attn_arrays(rng, H).values())
    mask = np.ones((B, S), dtype=bool)
    mask[0, 4:] = False
    ctx, w = ly.attention_context(ann, q, p, mask)
    sums = float(np.abs(w.data.sum(axis=1) - 1.0).max())
    padded = float(np.abs(w.data[~mask]).max())
    ctx_short, _ = ly.attention_context(ann[:1, :, :4], q[:1], p)
    gap = float(np.abs(ctx.data[0] - ctx_short.data[0]).max())
    return [
        Check("attention", "weights_sum_to_one", sums <= 1e-12, f"err {sums:.1e}"),
        Check("attention", "masked_weights_zero", padded == 0.0),
        Check("attention", "context_ignores_padding", gap == 0.0, f"gap {gap:.1e}"),
    ]


def wilcoxon_oracle_error(count=200, max_n=12, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(count):
        n = 1 + i % max_n
        # integer-valued data so zero differences and ties both occur
        x = rng.integers(0, 8, n).astype(float)
        y = rng.integers(0, 8, n).astype(float)
        fast = es.wilcoxon_signed_rank(x, y, method="exact").pvalue
        worst = max(worst, abs(fast - orc.wilcoxon_enumerate(x, y)[1]))
    return worst


def suite_wilcoxon():
    err = wilcoxon_oracle_error()
    small = es.wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0]).pvalue
    return [
        Check("wilcoxon", "exact_matches_enumeration", err <= 1e-12, f"max abs err {err:.1e}"),
        Check("wilcoxon", "n5_all_positive", abs(small - 0.0625) <= 1e-15, f"p={small}"),
        Check("wilcoxon", "identical_is_one", es.wilcoxon_signed_rank([1, 2], [1, 2]).pvalue == 1.0),
    ]


def masking_gaps(count=50, seed=0, attention=None):
    """Worst (LSTM-branch, probability) change from appending masked padding.

    Models are unshuffled (M >= N) so the LSTM runs over time with a mask.
    """
    rng = np.random.default_rng(seed)
    worst_rec, worst_prob = 0.0, 0.0
    for i in range(count):
        att = bool(i % 2) if attention is None else attention
        N = int(rng.integers(2, 6))
        extra = int(rng.integers(1, 4))
        M = N + extra + int(rng.integers(0, 3))
        kw = dict(
            num_variables=M, num_classes=3, conv_filters=(4, 4, 3), conv_kernel_widths=(3, 2, 2),
            se_reduction=2, lstm_cells=3, attention=att, allow_offgrid=True,
        )
        short = md.ModelConfig(max_length=N, **kw)
        long = md.ModelConfig(max_length=N + extra, **kw)
        assert not md.should_shuffle(long)
        params = op.init_params(short, rng)
        for blk in (params.conv1, params.conv2, params.conv3):
            blk.bn_running_mean = rng.standard_normal(blk.bn_running_mean.shape)
            blk.bn_running_var = rng.uniform(0.5, 2.0, blk.bn_running_var.shape)
        x = rng.standard_normal((1, M, N))
        xp = np.concatenate([x, np.zeros((1, M, extra))], axis=2)
        mask = np.arange(N + extra)[None] < N
        f1, r1 = md.branch_outputs(params, short, x)
        f2, r2 = md.branch_outputs(params, long, xp, mask)
        p1 = md.forward(params, short, x[0]).class_probabilities
        p2 = md.forward(params, long, xp[0], mask[0]).class_probabilities
        worst_rec = max(worst_rec, float(np.abs(r1.data - r2.data).max()))
        worst_prob = max(worst_prob, float(np.abs(p1 - p2).max()))
    return worst_rec, worst_prob


def suite_masking():
    rec, prob = masking_gaps()
    return [
        Check("masking", "lstm_branch_exact", rec == 0.0, f"max change {rec:.1e}"),
        Check("masking", "probabilities_stable", prob < 1e-9, f"max change {prob:.1e}"),
    ]


def schedule_errors():
    plan = op.TrainPlan()
    expected = {0: 1e-3, 100: 1e-3 * 2 ** (-1 / 3), 200: 1e-3 * 2 ** (-2 / 3), 1000: 1e-4, 5000: 1e-4}
    lr_err = max(abs(op.lr_at_epoch(plan, e) - v) for e, v in expected.items())
    w_err = float(np.abs(op.class_weights([10, 30, 60]) - np.array([10 / 3, 10 / 9, 5 / 9])).max())
    return lr_err, w_err


def suite_schedule():
    lr_err, w_err = schedule_errors()
    return [
        Check("schedule", "lr_at_epoch", lr_err <= 1e-12, f"max err {lr_err:.1e}"),
        Check("schedule", "class_weights", w_err <= 1e-12, f"max err {w_err:.1e}"),
    ]


SUITES = {
    "gradients": suite_gradients,
    "conv": suite_conv,
    "lstm": suite_lstm,
    "se": suite_se,
    "attention": suite_attention,
    "wilcoxon": suite_wilcoxon,
    "masking": suite_masking,
    "schedule": suite_schedule,
}


def run_verify(suites=None, report=None):
    """Run the named suites (all by default); ``report`` receives each output line."""
    names = list(SUITES) if not suites else list(suites)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    results = []
    for name in names:
        start = time.perf_counter()
        checks = SUITES[name]()
        results.extend(checks)
        if report is not None:
            for c in checks:
                report(c.line())
            report(f"suite {name}: {sum(c.passed for c in checks)}/{len(checks)} passed in {time.perf_counter() - start:.1f}s")
    return results
