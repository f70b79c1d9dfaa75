"""Design-space exploration over the (B, F) grid."""

from __future__ import annotations

import csv
import io
import json

from .quantize import quantize_model, quantized_predict
from .metrics import evaluate_maps
from .trainer import TrainConfig, predict, train
from .unet import VALID_F, ModelConfig, build_model, param_count, model_size_mib

GRID = tuple((b, f) for b in (4, 3, 2, 1) for f in VALID_F)
BASELINE = (4, 1)

SIZE_FIELDS = ("B", "F", "params", "size_mib", "size_mb_reported")
SWEEP_FIELDS = ("B", "F",
                "float_iou", "float_dice", "float_precision", "float_recall",
                "quant_iou", "quant_dice", "quant_precision", "quant_recall",
                "size_mib", "highlight")

PROVENANCE = {
    "metrics": "desk-scale synthetic radar surrogate; not comparable to externally published metric values",
    "size_mib": "analytic: trainable parameter count x 4 bytes / 2^20, skip buffers and BN running stats excluded",
}


def reported_size(mib):
    """Round like a published size column: 2 decimals, 3 below 0.005."""
    return round(mib, 3) if mib < 0.005 else round(mib, 2)


def size_rows(grid=GRID):
    rows = []
    for b, f in grid:
        cfg = ModelConfig(b, f)
        mib = model_size_mib(cfg)
        rows.append({"B": b, "F": f, "params": param_count(cfg), "size_mib": mib,
                     "size_mb_reported": reported_size(mib)})
    return rows


def compression_ratio(a=BASELINE, b=(2, 4)):
    """``(exact, reported)`` size ratio of two grid points.

    ``reported`` divides the sizes after rounding them to the precision of
    the size column.
    """
    sa, sb = model_size_mib(ModelConfig(*a)), model_size_mib(ModelConfig(*b))
    return sa / sb, reported_size(sa) / reported_size(sb)


def rows_to_csv(rows, fieldnames):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def rows_from_csv(text):
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in r.items():
            if k in ("B", "F", "params"):
                row[k] = int(v)
            elif k == "highlight":
                row[k] = v
            else:
                row[k] = float(v)
        out.append(row)
    return out


def sweep_point(b, f, train_set, val_set, train_cfg: TrainConfig, seed=0, absent="exclude"):
    """Train, quantize and evaluate one grid point; deterministic given the seeds."""
    cfg = ModelConfig(b, f)
    model, report = train(build_model(cfg, seed), train_set, val_set, train_cfg)
    truth = val_set.targets()
    flt = evaluate_maps(predict(model, val_set.inputs()), truth, absent)
    qmodel = quantize_model(model, val_set.inputs())
    qnt = evaluate_maps(quantized_predict(qmodel, val_set.inputs()), truth, absent)
    row = {"B": b, "F": f, **flt.csv_fields("float_"), **qnt.csv_fields("quant_"),
           "size_mib": model_size_mib(cfg), "highlight": ""}
    return row


def mark_highlights(rows):
    """Tag the best float IoU row and the (4, 1) baseline."""
    for r in rows:
        r["highlight"] = ""
    if not rows:
        return rows
    best = max(rows, key=lambda r: (r["float_iou"], -r["size_mib"]))
    best["highlight"] = "best_iou"
    for r in rows:
        if (r["B"], r["F"]) == BASELINE:
            r["highlight"] = "baseline" if r is not best else "best_iou+baseline"
    return rows


def sweep(train_set, val_set, train_cfg: TrainConfig, grid=GRID, seed=0, absent="exclude", log=None):
    rows = []
    for b, f in grid:
        rows.append(sweep_point(b, f, train_set, val_set, train_cfg, seed, absent))
        if log:
            log(rows[-1])
    return mark_highlights(rows)


def sweep_summary(rows):
    return json.dumps({"provenance": PROVENANCE, "rows": rows}, indent=2, sort_keys=True) + "\n"
