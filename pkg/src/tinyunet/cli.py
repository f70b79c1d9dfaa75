"""Command-line entry point: ``tinyunet <verb> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 data or model-file
error, 4 numeric failure (non-finite values).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dse, scenegen
from .bench import benchmark
from .config import ConfigError, load_config
from .metrics import confusion_matrix, evaluate_maps
from .quantize import QuantizedModel, quantize_model, quantized_predict
from .serialize import FormatError, load_model, save_model
from .trainer import predict, train
from .unet import ConfigError as ModelConfigError
from .unet import ModelConfig, build_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _emit(args, payload, text=None):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text if text is not None else payload)


def _run_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _plots():
    # matplotlib is slow to import; only pay for it when a figure is written
    from . import plots

    return plots


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _parse_dims(text):
    try:
        dims = tuple(int(d) for d in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad --dims {text!r}; expected NxCxHxW") from None
    if len(dims) != 4 or min(dims) < 1:
        raise UsageError(f"bad --dims {text!r}; expected NxCxHxW")
    return dims


def _parse_points(text):
    pts = []
    for item in text.split(";"):
        try:
            b, f = (int(v) for v in item.split(","))
        except ValueError:
            raise UsageError(f"bad grid point {item!r}; expected B,F") from None
        ModelConfig(b, f)
        pts.append((b, f))
    return pts


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _run_config(args)
    count = args.count if args.count is not None else cfg.data.count
    out = Path(args.out or "data")
    train_set, val_set = scenegen.generate_set(count, cfg.data.master_seed, cfg.scene, wind_range=cfg.wind_range)
    manifest = scenegen.save_set(out, train_set, val_set, cfg.data.master_seed, wind_range=cfg.wind_range)
    if args.pgm:
        pgm_dir = out / "pgm"
        pgm_dir.mkdir(exist_ok=True)
        for ss in (train_set, val_set):
            for idx, lab in zip(ss.indices, ss.labels):
                scenegen.write_pgm(pgm_dir / f"scene_{idx:05d}.pgm", lab)
    _emit(args, {"manifest": str(manifest), "train": len(train_set), "val": len(val_set)},
          f"{manifest}  ({len(train_set)} train / {len(val_set)} val)")
    return EXIT_OK


def cmd_train(args):
    cfg = _run_config(args)
    b = args.B if args.B is not None else cfg.model.B
    f = args.F if args.F is not None else cfg.model.F
    tc = cfg.train
    overrides = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.lr),
                                   ("batch_size", args.batch_size), ("optimizer", args.optimizer))
                 if v is not None}
    tc = replace(tc, **overrides)
    train_set, val_set = scenegen.load_set(args.data)
    model = build_model(ModelConfig(b, f), cfg.model.seed)

    def log(e):
        if not args.json:
            print(f"epoch {e.epoch:3d}  train {e.train_loss:.4f}  val {e.val_loss:.4f}  "
                  f"mIoU {e.val_miou:.4f}  ({e.seconds:.1f}s)", file=sys.stderr)

    model, report = train(model, train_set, val_set, tc, log=log)
    out = Path(args.out or "model.tunw")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    csv_path = _sibling(out, "_train.csv")
    csv_path.write_text(report.to_csv())
    if not args.no_plot:
        _plots().training_curves(report, _sibling(out, "_train.png"))
    last = report.epochs[-1] if report.epochs else None
    _emit(args, {"model": str(out), "report": str(csv_path), "epochs": len(report),
                 "val_miou": last.val_miou if last else None},
          f"wrote {out} and {csv_path}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _run_config(args)
    train_set, val_set = scenegen.load_set(args.data)
    ss = val_set if args.split == "val" else train_set
    truth = ss.targets()
    if args.truth_as_pred:
        pred = truth
    else:
        model = load_model(args.model)
        if isinstance(model, QuantizedModel):
            pred = quantized_predict(model, ss.inputs())
        elif args.quantized:
            pred = quantized_predict(quantize_model(model, val_set.inputs()), ss.inputs())
        else:
            pred = predict(model, ss.inputs())
    report = evaluate_maps(pred, truth, cfg.absent)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        if not args.no_plot:
            _plots().confusion(confusion_matrix(pred, truth), _sibling(out, "_confusion.png"))
    if args.json:
        sys.stdout.write(text)
    else:
        print(f"mean IoU {report.mean_iou:.4f}  Dice {report.mean_dice:.4f}  "
              f"precision {report.mean_precision:.4f}  recall {report.mean_recall:.4f}  "
              f"(absent classes: {report.absent_classes})")
    return EXIT_OK


def cmd_quantize(args):
    model = load_model(args.model)
    if isinstance(model, QuantizedModel):
        raise UsageError(f"{args.model} is already quantized")
    _, val_set = scenegen.load_set(args.data)
    qmodel = quantize_model(model, val_set.inputs(), quantize_activations=not args.weights_only)
    out = Path(args.out or _sibling(args.model, "_q.tunw"))
    n_bytes = save_model(qmodel, out)
    _emit(args, {"model": str(out), "bytes": n_bytes, "params": qmodel.num_params(),
                 "activation_sites": len(qmodel.activation_ranges)},
          f"wrote {out} ({n_bytes} bytes, {qmodel.num_params()} uint8 parameters)")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _run_config(args)
    tc = cfg.train if args.epochs is None else replace(cfg.train, epochs=args.epochs)
    grid = _parse_points(args.points) if args.points else dse.GRID
    train_set, val_set = scenegen.load_set(args.data)
    out = Path(args.out or "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    points_dir = _sibling(out, "_points")
    points_dir.mkdir(exist_ok=True)

    def log(row):
        (points_dir / f"B{row['B']}_F{row['F']}.json").write_text(json.dumps(row, indent=2, sort_keys=True) + "\n")
        if not args.json:
            print(f"B={row['B']} F={row['F']}  float IoU {row['float_iou']:.3f}  "
                  f"quant IoU {row['quant_iou']:.3f}  size {row['size_mib']:.4f} MiB", file=sys.stderr)

    rows = dse.sweep(train_set, val_set, tc, grid, cfg.model.seed, cfg.absent, log=log)
    out.write_text(dse.rows_to_csv(rows, dse.SWEEP_FIELDS))
    _sibling(out, ".json").write_text(dse.sweep_summary(rows))
    if not args.no_plot:
        _plots().sweep(rows, _sibling(out, ".png"))
    _emit(args, {"csv": str(out), "rows": len(rows)}, f"wrote {out} ({len(rows)} rows)")
    return EXIT_OK


def cmd_size_table(args):
    _run_config(args)  # the table is analytic, but a broken config is still an error
    rows = dse.size_rows()
    exact, reported = dse.compression_ratio()
    text = dse.rows_to_csv(rows, dse.SIZE_FIELDS)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        if not args.no_plot:
            _plots().size_table(rows, _sibling(out, ".png"))
    if args.json:
        print(json.dumps({"rows": rows, "ratio_4_1_over_2_4": {"exact": exact, "reported": reported}},
                         indent=2, sort_keys=True))
    else:
        sys.stdout.write(text)
        print(f"# size(4,1)/size(2,4): {reported:.1f} at reported precision, {exact:.1f} exact", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args):
    cfg = _run_config(args)
    bc = cfg.bench
    dims = _parse_dims(args.dims) if args.dims else (bc.batch, 9, bc.height, bc.width)
    runs = args.runs if args.runs is not None else bc.runs
    warmup = args.warmup if args.warmup is not None else bc.warmup
    if args.model:
        model = load_model(args.model)
    else:
        b = args.B if args.B is not None else cfg.model.B
        f = args.F if args.F is not None else cfg.model.F
        model = build_model(ModelConfig(b, f), cfg.model.seed)
    if args.quantized and not isinstance(model, QuantizedModel):
        # calibration on synthetic standard-normal inputs (inputs are already normalised)
        calib = np.random.default_rng(cfg.model.seed).standard_normal((4,) + dims[1:]).astype(np.float32)
        model = quantize_model(model, calib)
    report = benchmark(model, dims, runs, warmup, seed=cfg.model.seed)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        if not args.no_plot:
            _plots().latency([report], _sibling(out, ".png"))
    if args.json:
        sys.stdout.write(text)
    else:
        kind = "uint8" if report.quantized else "float32"
        print(f"B={report.config['B']} F={report.config['F']} {kind}  median {report.median_ms:.2f} ms  "
              f"p95 {report.p95_ms:.2f} ms  {report.macs:,} MACs")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    def add_globals(p, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=d(None), help="override every seed in the config")
        p.add_argument("--config", default=d(None), help="INI run configuration")
        p.add_argument("--out", default=d(None), help="output path")
        p.add_argument("--json", action="store_true", default=d(False), help="machine-readable stdout")
        p.add_argument("--no-plot", action="store_true", default=d(False), help="skip figure rendering")

    parser = argparse.ArgumentParser(prog="tinyunet", description=__doc__.splitlines()[0])
    add_globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic scene set")
    p.add_argument("--count", type=int)
    p.add_argument("--pgm", action="store_true", help="also export label maps as PGM")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one (B, F) model")
    p.add_argument("--data", required=True)
    p.add_argument("--B", type=int)
    p.add_argument("--F", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on a split")
    p.add_argument("--model")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("val", "train"), default="val")
    p.add_argument("--quantized", action="store_true", help="quantize a float model before evaluating")
    p.add_argument("--truth-as-pred", action="store_true", help="debug: score the labels against themselves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", parents=[common], help="8-bit post-training quantization")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="scene set whose validation split calibrates activations")
    p.add_argument("--weights-only", action="store_true")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("sweep", parents=[common], help="train and evaluate the (B, F) grid")
    p.add_argument("--data", required=True)
    p.add_argument("--points", help="subset of the grid, e.g. '4,1;2,4'")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("size-table", parents=[common], help="analytic parameter count and size per grid point")
    p.set_defaults(func=cmd_size_table)

    p = sub.add_parser("bench", parents=[common], help="CPU inference latency")
    p.add_argument("--model")
    p.add_argument("--B", type=int)
    p.add_argument("--F", type=int)
    p.add_argument("--quantized", action="store_true")
    p.add_argument("--dims", help="input dims NxCxHxW")
    p.add_argument("--runs", type=int)
    p.add_argument("--warmup", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb == "eval" and not args.truth_as_pred and not args.model:
        parser.error("eval needs --model (or --truth-as-pred)")
    try:
        return args.func(args)
    except (ConfigError, ModelConfigError, UsageError) as exc:
        print(f"tinyunet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (scenegen.DataError, FormatError, FileNotFoundError) as exc:
        print(f"tinyunet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"tinyunet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"tinyunet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
