"""Command-line entry point: ``mlstmfcn {train,evaluate,gridsearch,compare,verify}``.

Settings resolve as command-line flag > ``--config`` file > built-in default.
Config files are flat ``key=value`` lines using the long flag names with
underscores (``cells=16``, ``attention=true``); ``train`` writes the fully
resolved settings to ``config.txt`` in the same format, so a run can be
repeated with ``--config out/config.txt``.

Exit status: 0 on success, 1 for data or runtime errors, 2 for usage errors.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ck
from . import data as dt
from . import evalstats as es
from . import model as md
from . import optim as op
from . import tensor as tn
from .errors import ConfigurationError, MLSTMFCNError, ParseError

OUT_ENV = "MLSTMFCN_OUT"
CHECKPOINT_NAME = "model.ckpt"
DEFAULT_GRID = (8, 16, 32, 64, 128)


class UsageError(Exception):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _text(v):
    return str(v)


def _float_list(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


# key -> (parser, default); defaults of None are filled in at resolve time
TRAIN_KEYS = {
    "data": (_text, None),
    "out": (_text, None),
    "seed": (int, 0),
    "cells": (int, 8),
    "attention": (_bool, False),
    "filters": (_int_list, (128, 256, 128)),
    "kernel_widths": (_int_list, (8, 5, 3)),
    "reduction": (int, 16),
    "dropout": (float, 0.8),
    "lstm_stride": (int, 1),
    "mask_fcn": (_bool, True),
    "allow_offgrid": (_bool, False),
    "epochs": (int, 250),
    "batch_size": (int, 128),
    "lr": (float, 1e-3),
    "lr_final": (float, 1e-4),
    "reduce_every": (int, 100),
    "class_weights": (_float_list, ()),
}


def read_config_file(path):
    """Parse a flat ``key=value`` file into raw strings."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(args, keys):
    """Merge flags over config-file values over defaults; validates types."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(from_file) - set(keys))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    settings = {}
    for key, (parse, default) in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            value = flag
        elif key in from_file:
            try:
                value = parse(from_file[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        else:
            value = default
        settings[key] = value
    if settings.get("out") is None:
        settings["out"] = os.environ.get(OUT_ENV, "out")
    return settings


def format_settings(settings):
    def show(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (tuple, list)):
            return ",".join(str(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    return "".join(f"{k}={show(v)}\n" for k, v in settings.items())


def _model_config(settings, num_variables, max_length, num_classes):
    cells = settings["cells"]
    lo, hi = md.LSTM_CELL_RANGE
    if not settings["allow_offgrid"] and not lo <= cells <= hi:
        raise UsageError(f"--cells {cells} is outside the search range [{lo}, {hi}]; pass --allow-offgrid to force it")
    try:
        return md.ModelConfig(
            num_variables=num_variables,
            max_length=max_length,
            num_classes=num_classes,
            conv_filters=settings["filters"],
            conv_kernel_widths=settings["kernel_widths"],
            se_reduction=settings["reduction"],
            lstm_cells=cells,
            attention=settings["attention"],
            dropout_rate=settings["dropout"],
            lstm_stride=settings["lstm_stride"],
            mask_fcn=settings["mask_fcn"],
            allow_offgrid=settings["allow_offgrid"],
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _plan(settings):
    try:
        return op.TrainPlan(
            epochs=settings["epochs"],
            batch_size=settings["batch_size"],
            lr_initial=settings["lr"],
            lr_final=settings["lr_final"],
            reduce_every=settings["reduce_every"],
            seed=settings["seed"],
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _require_data(settings):
    if not settings.get("data"):
        raise UsageError("--data DIR is required")
    return settings["data"]


def _num_classes(meta, *datasets):
    top = max((int(d.labels.max()) + 1 for d in datasets if len(d)), default=0)
    named = len([c for c in meta.get("classes", "").split(",") if c])
    return max(top, named, 2)


def _check_weights(settings, num_classes):
    w = settings["class_weights"]
    if w and (len(w) != num_classes or min(w) <= 0):
        raise UsageError(f"--class-weights needs {num_classes} positive values, got {len(w)}")


def train_model(settings, train, num_classes, log_path=None, echo=None):
    """Initialise and fit a model from resolved settings; returns (config, params, history)."""
    config = _model_config(settings, train.num_variables, train.max_length, num_classes)
    plan = _plan(settings)
    init_seq, fit_seq = np.random.SeedSequence(settings["seed"]).spawn(2)
    params = op.init_params(config, np.random.default_rng(init_seq))
    partial = None if log_path is None else log_path + ".partial"
    fh = None if partial is None else open(partial, "w", encoding="utf-8")
    try:
        if fh is not None:
            fh.write("epoch\tlr\ttrain_loss\ttrain_acc\n")

        def on_epoch(entry):
            if fh is not None:
                fh.write(entry.line() + "\n")
                fh.flush()
            if echo is not None:
                echo(entry)

        result = op.fit(
            params, config, train, plan, rng=np.random.default_rng(fit_seq), on_epoch=on_epoch,
            weights=settings["class_weights"] or None,
        )
    finally:
        if fh is not None:
            fh.close()
    if partial is not None:
        os.replace(partial, log_path)
    return config, result.params, result.history


def cmd_train(args):
    settings = resolve(args, TRAIN_KEYS)
    data_dir = _require_data(settings)
    _model_config(settings, 1, 1, 2)  # reject bad flags before touching data
    _plan(settings)
    train, test, meta = dt.load_dataset_dir(data_dir)
    if len(train) == 0:
        raise ParseError("training split has no samples")
    num_classes = _num_classes(meta, train, test)
    _check_weights(settings, num_classes)
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    ck.atomic_write_text(os.path.join(out, "config.txt"), format_settings(settings))
    every = max(1, settings["epochs"] // 10)

    def echo(entry):
        if args.verbose or entry.epoch % every == 0 or entry.epoch == settings["epochs"] - 1:
            print(f"epoch {entry.epoch}: loss {entry.train_loss:.4f}, train acc {100 * entry.train_acc:.2f}%")

    config, params, history = train_model(settings, train, num_classes, os.path.join(out, "train_log.tsv"), echo)
    metadata = {
        "dataset": meta.get("name", os.path.basename(os.path.normpath(data_dir))),
        "class_names": dt.class_names(meta, num_classes),
        "seed": settings["seed"],
        "epochs": settings["epochs"],
    }
    path = os.path.join(out, CHECKPOINT_NAME)
    ck.save_checkpoint(path, config, params, {"norm_mean": train.mean, "norm_std": train.std}, metadata)
    print(f"wrote {path}")
    return 0


def _per_class(preds, labels, K):
    rows = []
    for k in range(K):
        tp = int(np.sum((preds == k) & (labels == k)))
        predicted = int(np.sum(preds == k))
        actual = int(np.sum(labels == k))
        rows.append((k, tp, predicted, actual))
    return rows


def cmd_evaluate(args):
    out = args.out or os.environ.get(OUT_ENV, "out")
    ckpt = args.checkpoint or os.path.join(out, CHECKPOINT_NAME)
    data_dir = args.data
    if not data_dir:
        raise UsageError("--data DIR is required")
    try:
        config, params, extras, metadata = ck.load_checkpoint(ckpt)
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint {ckpt}: {exc.strerror}") from None
    split_path = os.path.join(data_dir, f"{args.split}.csv")
    if not os.path.exists(split_path):
        raise ParseError(f"{split_path} does not exist")
    raw = dt.read_split(split_path)
    if len(raw) == 0:
        raise ParseError(f"{split_path}: no samples")
    if raw.num_variables != config.num_variables:
        raise ParseError(
            f"dataset has M={raw.num_variables} variables but the checkpoint expects M={config.num_variables}"
        )
    longest = max(raw.lengths)
    if longest > config.max_length:
        raise ParseError(f"dataset has series of length {longest} but the checkpoint expects N<={config.max_length}")
    stats = (extras["norm_mean"], extras["norm_std"])
    ds = dt.to_dataset(dt.apply_stats(raw, *stats), config.max_length, stats, args.split)
    if np.any(ds.labels >= config.num_classes) or np.any(ds.labels < 0):
        raise ParseError(f"labels outside the checkpoint's {config.num_classes} classes")
    preds = np.array([p.predicted_class for p in md.predict_batch(params, config, ds.samples, ds.masks)])
    acc = 100.0 * float(np.mean(preds == ds.labels))
    K = config.num_classes
    names = metadata.get("class_names") or [str(k) for k in range(K)]
    print(f"accuracy\t{acc:.2f}")
    print("class\ttrue_positive\tpredicted\tactual\tprecision\trecall")
    for k, tp, predicted, actual in _per_class(preds, ds.labels, K):
        prec = f"{tp}/{predicted}"
        rec = f"{tp}/{actual}"
        print(f"{names[k]}\t{tp}\t{predicted}\t{actual}\t{prec}\t{rec}")
    print(f"pce\t{es.pce(acc, K):.4f}")
    model_name = args.model_name or ("MALSTM-FCN" if config.attention else "MLSTM-FCN")
    dataset_name = metadata.get("dataset") or os.path.basename(os.path.normpath(data_dir))
    os.makedirs(out, exist_ok=True)
    row_path = os.path.join(out, "eval_row.csv")
    ck.atomic_write_text(row_path, f"dataset,classes,{model_name}\n{dataset_name},{K},{acc:.2f}\n")
    print(f"wrote {row_path}")
    return 0


def select_best(results):
    """Pick the cell count with the highest accuracy; ties go to fewer cells."""
    if not results:
        raise ConfigurationError("empty grid")
    return min(results, key=lambda r: (-r[1], r[0]))[0]


def cmd_gridsearch(args):
    settings = resolve(args, TRAIN_KEYS)
    data_dir = _require_data(settings)
    try:
        grid = _int_list(args.grid) if args.grid else DEFAULT_GRID
    except ValueError:
        raise UsageError(f"--grid must be comma-separated integers, got {args.grid!r}") from None
    if not grid:
        raise UsageError("--grid is empty")
    for cells in grid:
        _model_config({**settings, "cells": cells}, 1, 1, 2)
    _plan(settings)
    train, test, meta = dt.load_dataset_dir(data_dir)
    if len(train) == 0:
        raise ParseError("training split has no samples")
    held_out = test if len(test) else train
    num_classes = _num_classes(meta, train, test)
    _check_weights(settings, num_classes)
    results = []
    for cells in grid:
        config, params, _ = train_model({**settings, "cells": cells}, train, num_classes)
        acc = 100.0 * op.accuracy(params, config, held_out)
        results.append((cells, acc))
        print(f"cells={cells}\taccuracy={acc:.2f}")
    best = select_best(results)
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    lines = ["cells\taccuracy\tselected"] + [f"{c}\t{a:.2f}\t{int(c == best)}" for c, a in results]
    ck.atomic_write_text(os.path.join(out, "gridsearch.tsv"), "\n".join(lines) + "\n")
    print(f"best cells\t{best}")
    return 0


def cmd_compare(args):
    if args.table:
        try:
            with open(args.table, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read {args.table}: {exc.strerror}") from None
        reference = None
    else:
        text = es.load_fixture("uci_accuracy.csv")
        reference = es.read_reference_csv(es.load_fixture("uci_published.csv"))
    if args.reference:
        with open(args.reference, encoding="utf-8") as fh:
            reference = es.read_reference_csv(fh.read())
    table = es.read_accuracy_csv(text)
    baseline = {"auto": "auto", "none": None}.get(args.baseline, args.baseline)
    if baseline not in ("auto", None) and baseline not in table.models:
        raise UsageError(f"--baseline {baseline!r} is not a column of the table")
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    report = es.compare_report(table, alpha=args.alpha, baseline=baseline, reference=reference)
    out = args.out or os.environ.get(OUT_ENV, "out")
    os.makedirs(out, exist_ok=True)
    ck.atomic_write_text(os.path.join(out, "report.tsv"), report.to_tsv())
    ck.atomic_write_text(os.path.join(out, "report.json"), report.to_json())
    sys.stdout.write(report.to_tsv())
    for (a, b), p in report.pvalues.items():
        print(f"wilcoxon\t{a}\t{b}\tp={p:.3g}" + ("\t*" if p < report.alpha else ""))
    for note in report.notes:
        print(f"note: {note}")
    return 0


def cmd_verify(args):
    from . import verify

    suites = [s for item in (args.suite or []) for s in item.split(",") if s]
    for s in suites:
        if s not in verify.SUITES:
            raise UsageError(f"unknown suite {s!r}; choose from {', '.join(verify.SUITES)}")
    if args.inject_fault:
        tn.FAULTS.add(args.inject_fault)
    try:
        results = verify.run_verify(suites or None, report=print)
    finally:
        tn.FAULTS.discard(args.inject_fault)
    failed = [c for c in results if not c.passed]
    if failed:
        print("FAILED: " + ", ".join(f"{c.suite}/{c.name}" for c in failed))
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def _add_common(p, training=False):
    p.add_argument("--data", help="dataset directory with train.csv/test.csv/meta.txt")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--config", help="flat key=value settings file")
    if not training:
        return
    p.add_argument("--cells", type=int, help="LSTM cells (default 8; grid range 8-128)")
    p.add_argument("--attention", action="store_const", const=True, help="use the attention LSTM (MALSTM-FCN)")
    p.add_argument("--filters", type=_int_list, help="three conv filter counts, e.g. 128,256,128")
    p.add_argument("--kernel-widths", dest="kernel_widths", type=_int_list, help="three kernel widths, e.g. 8,5,3")
    p.add_argument("--reduction", type=int, help="squeeze-and-excite reduction ratio (default 16)")
    p.add_argument("--dropout", type=float, help="dropout rate after the LSTM (default 0.8)")
    p.add_argument("--lstm-stride", dest="lstm_stride", type=int, help="strided conv before the LSTM (default 1: none)")
    p.add_argument("--no-mask-fcn", dest="mask_fcn", action="store_const", const=False,
                   help="let padded steps reach the convolutional branch")
    p.add_argument("--allow-offgrid", dest="allow_offgrid", action="store_const", const=True,
                   help="accept cell counts outside 8-128")
    p.add_argument("--epochs", type=int, help="training epochs (default 250)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size (default 128)")
    p.add_argument("--lr", type=float, help="initial learning rate (default 1e-3)")
    p.add_argument("--lr-final", dest="lr_final", type=float, help="learning-rate floor (default 1e-4)")
    p.add_argument("--reduce-every", dest="reduce_every", type=int, help="epochs between reductions (default 100)")
    p.add_argument("--class-weights", dest="class_weights", type=_float_list,
                   help="per-class loss weights, e.g. 1,2.5 (default: inverse frequency)")


def build_parser():
    parser = argparse.ArgumentParser(prog="mlstmfcn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p, training=True)
    p.add_argument("--verbose", action="store_true", help="print every epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", help=f"checkpoint path (default OUT/{CHECKPOINT_NAME})")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--model-name", dest="model_name", help="column name for the compare-table row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="select the LSTM cell count by held-out accuracy")
    _add_common(p, training=True)
    p.add_argument("--grid", help="comma-separated cell counts (default 8,16,32,64,128)")
    p.set_defaults(func=cmd_gridsearch, verbose=False)

    p = sub.add_parser("compare", help="ranks, MPCE, wins and Wilcoxon tests for an accuracy table")
    _add_common(p)
    p.add_argument("--table", help="accuracy CSV (default: bundled ten-dataset table)")
    p.add_argument("--reference", help="published summary CSV model,metric,value to diff against")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--baseline", default="auto", help="column wins are counted against; 'auto' or 'none'")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run gradient checks, oracles and invariance suites")
    _add_common(p)
    p.add_argument("--suite", action="append", help="suite name(s), comma-separated or repeated")
    p.add_argument("--inject-fault", dest="inject_fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mlstmfcn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (MLSTMFCNError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"mlstmfcn {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mlstmfcn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
