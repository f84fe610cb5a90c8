"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from mlstmfcn import checkpoint as ck
from mlstmfcn import cli
from mlstmfcn import data as dt
from mlstmfcn import evalstats as es
from mlstmfcn import model as md
from mlstmfcn import optim as op
from mlstmfcn import verify as vf


def report(capsys, number, name, passed, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}")
    assert passed, detail


def test_1_gradient_fidelity(capsys):
    start = time.perf_counter()
    checks = vf.suite_gradients()
    elapsed = time.perf_counter() - start
    failed = [c.name for c in checks if not c.passed]
    names = {c.name for c in checks}
    assert {"conv_block", "se_block", "lstm_step", "lstm_scan", "attention_context",
            "attention_lstm_scan", "rnn", "dense_softmax_ce", "mlstm_fcn", "malstm_fcn"} <= names
    detail = f"{len(checks) - len(failed)}/{len(checks)} checks under {vf.GRAD_TOL:g} in {elapsed:.1f}s"
    if failed:
        detail += f"; failed {failed}"
    report(capsys, 1, "gradient fidelity", not failed and elapsed < 60.0, detail)


def test_2_oracle_equivalence(capsys):
    conv_bad = vf.conv_oracle_mismatches(count=100)
    lstm_err = vf.lstm_oracle_error()
    wil_err = vf.wilcoxon_oracle_error(count=200, max_n=12)
    ok = conv_bad == 0 and lstm_err <= 1e-12 and wil_err <= 1e-12
    detail = f"conv mismatches {conv_bad}/100, lstm err {lstm_err:.1e}, wilcoxon err {wil_err:.1e}"
    report(capsys, 2, "oracle equivalence", ok, detail)


def test_3_se_algebra(capsys):
    e1, e2, e3 = vf.se_algebra_errors()
    ok = e1 <= 1e-15 and e2 == 0.0 and e3 <= 1e-15
    report(capsys, 3, "SE algebra", ok, f"squeeze {e1:.1e}, zero gate {e2:.1e}, rescale {e3:.1e}")


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    train, test = dt.make_toy_splits(seed=0, n_train=40, n_test=40, num_variables=3, length=32)
    path = tmp_path_factory.mktemp("toy40")
    dt.write_dataset_dir(str(path), train, test)
    return dt.load_dataset_dir(str(path))


@pytest.mark.parametrize("attention", [False, True], ids=["mlstm_fcn", "malstm_fcn"])
def test_4_toy_end_to_end(capsys, toy_data, attention):
    train, test, _ = toy_data
    config = md.ModelConfig(
        num_variables=3, max_length=32, num_classes=2, conv_filters=(8, 16, 8),
        se_reduction=2, lstm_cells=8, attention=attention,
    )
    plan = op.TrainPlan(epochs=300, batch_size=16, seed=0)
    start = time.perf_counter()
    params = op.init_params(config, np.random.default_rng(0))
    fitted = op.fit(params, config, train, plan).params
    elapsed = time.perf_counter() - start
    train_acc = op.accuracy(fitted, config, train)
    test_acc = op.accuracy(fitted, config, test)
    ok = train_acc == 1.0 and test_acc >= 0.95 and elapsed < 120.0
    name = "toy end-to-end " + ("MALSTM-FCN" if attention else "MLSTM-FCN")
    detail = f"train {100 * train_acc:.1f}%, test {100 * test_acc:.1f}%, {elapsed:.1f}s"
    report(capsys, 4, name, ok, detail)


def test_5_masking_invariance(capsys):
    rec, prob = vf.masking_gaps(count=50)
    ok = rec == 0.0 and prob < 1e-9
    report(capsys, 5, "masking invariance", ok, f"LSTM-branch change {rec:.1e}, probability change {prob:.1e}")


def test_6_published_statistics(capsys):
    table = es.read_accuracy_csv(es.load_fixture("uci_accuracy.csv"))
    reference = es.read_reference_csv(es.load_fixture("uci_published.csv"))
    rep = es.compare_report(table, reference=reference)
    models = ["LSTM-FCN", "MLSTM-FCN", "ALSTM-FCN", "MALSTM-FCN"]
    wins = [rep.wins[m] for m in models]
    published = [3.92, 1.33, 3.67, 1.42]
    rank_gap = max(abs(rep.arith_rank[m] - p) for m, p in zip(models, published))
    mp = rep.mpce["MLSTM-FCN"]
    noted = any("MLSTM-FCN mpce" in n and "6.49" in n for n in rep.notes)
    ok = wins == [7, 10, 10, 10] and rank_gap <= 0.35 and abs(mp - 7.13) <= 0.01 and noted
    ranks = "/".join(f"{rep.arith_rank[m]:.2f}" for m in models)
    detail = f"wins {'/'.join(map(str, wins))}, ranks {ranks} (max gap {rank_gap:.2f}), MPCE {mp:.4f}, divergence noted {noted}"
    report(capsys, 6, "published statistics", ok, detail)


def test_7_schedule_and_weights(capsys):
    lr_err, w_err = vf.schedule_errors()
    ok = lr_err <= 1e-12 and w_err <= 1e-12
    report(capsys, 7, "schedule and weighting", ok, f"lr err {lr_err:.1e}, weight err {w_err:.1e}")


def test_8_train_determinism(capsys, toy_dir, tmp_path):
    argv = ["--data", toy_dir, "--seed", "11", "--filters", "4,8,4", "--reduction", "2",
            "--batch-size", "6", "--epochs", "3", "--attention"]
    codes = [cli.main(["train", *argv, "--out", str(tmp_path / name)]) for name in ("a", "b")]
    same = {}
    for f in ("model.ckpt", "train_log.tsv"):
        same[f] = (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    ck.load_checkpoint(str(tmp_path / "a" / "model.ckpt"))
    ok = codes == [0, 0] and all(same.values())
    report(capsys, 8, "train determinism", ok, f"exit codes {codes}, identical {same}")
