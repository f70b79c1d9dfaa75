"""Figures written next to the CSV/JSON reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def new_figure(width=5.0, ratio=0.62, ncols=1):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, ncols, figsize=(width, width * ratio))
    return fig, ax


def save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def training_curves(report, path):
    ep = [e.epoch for e in report.epochs]
    fig, (ax1, ax2) = new_figure(7.0, 0.4, ncols=2)
    ax1.plot(ep, [e.train_loss for e in report.epochs], "o-", label="train")
    ax1.plot(ep, [e.val_loss for e in report.epochs], "s--", label="validation")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy")
    ax1.legend(frameon=False)
    ax2.plot(ep, [e.val_miou for e in report.epochs], "o-", color="C2")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation mean IoU")
    ax2.set_ylim(0, 1)
    return save(fig, path)


def size_table(rows, path):
    """Heat map of model size (MiB) over the B x F grid."""
    bs = sorted({r["B"] for r in rows}, reverse=True)
    fs = sorted({r["F"] for r in rows})
    grid = np.full((len(bs), len(fs)), np.nan)
    for r in rows:
        grid[bs.index(r["B"]), fs.index(r["F"])] = r["size_mib"]
    fig, ax = new_figure(4.5, 0.75)
    im = ax.imshow(np.log10(grid), cmap="viridis")
    for i in range(len(bs)):
        for j in range(len(fs)):
            v = grid[i, j]
            ax.text(j, i, f"{v:.3g}", ha="center", va="center", color="w" if np.log10(v) < -0.5 else "k", fontsize=7)
    ax.set_xticks(range(len(fs)), [str(f) for f in fs])
    ax.set_yticks(range(len(bs)), [str(b) for b in bs])
    ax.set_xlabel("channel divisor F")
    ax.set_ylabel("levels B")
    fig.colorbar(im, ax=ax, label="log10 size (MiB)")
    return save(fig, path)


def sweep(rows, path):
    """Mean IoU against model size, float and quantized."""
    fig, ax = new_figure(5.0)
    size = [r["size_mib"] for r in rows]
    ax.scatter(size, [r["float_iou"] for r in rows], marker="o", label="float32")
    ax.scatter(size, [r["quant_iou"] for r in rows], marker="x", label="uint8")
    for r in rows:
        if r.get("highlight"):
            ax.annotate(f"B{r['B']} F{r['F']} ({r['highlight']})", (r["size_mib"], r["float_iou"]),
                        textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xscale("log")
    ax.set_xlabel("model size (MiB, analytic)")
    ax.set_ylabel("validation mean IoU (surrogate data)")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    return save(fig, path)


def confusion(cm, path):
    cm = np.asarray(cm, dtype=float)
    norm = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    fig, ax = new_figure(4.2, 0.9)
    im = ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
    ax.set_xlabel("predicted thickness class")
    ax.set_ylabel("true thickness class")
    ticks = range(cm.shape[0])
    ax.set_xticks(ticks)
    ax.set_yticks(ticks)
    fig.colorbar(im, ax=ax, label="row-normalised fraction")
    return save(fig, path)


def latency(reports, path):
    fig, ax = new_figure(4.5)
    labels = [f"B{r.config['B']} F{r.config['F']}" + (" q" if r.quantized else "") for r in reports]
    med = [r.median_ms for r in reports]
    p95 = [r.p95_ms for r in reports]
    x = np.arange(len(reports))
    ax.bar(x, med, color="C0", label="median")
    ax.scatter(x, p95, color="C3", marker="_", s=200, label="p95")
    ax.set_xticks(x, labels)
    ax.set_ylabel("latency per inference (ms)")
    ax.legend(frameon=False)
    return save(fig, path)
