"""Mini-batch training with categorical cross-entropy and Adam (or plain SGD)."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import tensor as K
from .unet import NormStats, UNetModel, backward, forward, normalize_input

TRAIN_CSV_FIELDS = ("epoch", "train_loss", "val_loss", "val_miou", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.0008
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_miou: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAIN_CSV_FIELDS)
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.val_miou), f"{e.seconds:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([EpochStats(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                               float(r["val_miou"]), float(r["seconds"])) for r in rows])


def cross_entropy_loss(logits, labels):
    """Mean pixel cross-entropy and its gradient w.r.t. the logits."""
    logits = K.check_tensor(logits, "logits")
    labels = np.asarray(labels)
    n, c, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise K.ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in 0..{c - 1}")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    lab = labels.astype(np.intp)[:, None]
    loss = -np.take_along_axis(log_p, lab, axis=1).mean()
    grad = np.exp(log_p)
    np.put_along_axis(grad, lab, np.take_along_axis(grad, lab, axis=1) - 1.0, axis=1)
    grad /= n * h * w
    return float(loss), grad.astype(logits.dtype)


def fit_norm_stats(inputs) -> NormStats:
    """Per-channel mean and (population) std over every training pixel."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] == 0:
        raise ValueError("need a non-empty (n, c, h, w) training array")
    mean = x.mean(axis=(0, 2, 3))
    std = np.sqrt(((x - mean[None, :, None, None]) ** 2).mean(axis=(0, 2, 3)))
    if np.any(std == 0):
        bad = np.flatnonzero(std == 0).tolist()
        raise ValueError(f"zero-variance input channel(s) {bad}")
    return NormStats(mean, std)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            g = g.astype(np.float64)
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = (params[k] - upd).astype(params[k].dtype)


class SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] = (params[k] - self.lr * g.astype(np.float64)).astype(params[k].dtype)


def make_optimizer(model: UNetModel, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(model.params, cfg.learning_rate)
    return Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def train_step(model: UNetModel, optimizer, x, y):
    """One optimiser step on a normalised batch; returns the pre-step loss."""
    logits, trace = forward(model, x, "train", keep_trace=True)
    loss, d_logits = cross_entropy_loss(logits, y)
    if not np.isfinite(loss):
        raise FloatingPointError("training loss is not finite")
    optimizer.step(model.params, backward(model, trace, d_logits))
    return loss


def predict(model: UNetModel, raw, batch_size=16):
    """Class map ``(n, h, w)`` for raw (un-normalised) inputs, infer mode."""
    out = []
    for i in range(0, len(raw), batch_size):
        x = normalize_input(np.asarray(raw[i:i + batch_size], dtype=np.float32), model.norm_stats)
        out.append(K.assert_finite(forward(model, x, "infer"), "logits").argmax(axis=1))
    return np.concatenate(out).astype(np.uint8)


def evaluate(model: UNetModel, raw, labels, batch_size=16, absent="exclude"):
    """``(mean loss, MetricsReport)`` over a raw input set in infer mode."""
    counts = metrics.ConfusionCounts.zeros(model.config.num_classes)
    loss_sum, n_pix = 0.0, 0
    for i in range(0, len(raw), batch_size):
        x = normalize_input(np.asarray(raw[i:i + batch_size], dtype=np.float32), model.norm_stats)
        y = np.asarray(labels[i:i + batch_size])
        logits = forward(model, x, "infer")
        loss, _ = cross_entropy_loss(logits, y)
        loss_sum += loss * y.size
        n_pix += y.size
        counts = counts + metrics.confusion(logits.argmax(axis=1), y, model.config.num_classes)
    return loss_sum / max(n_pix, 1), metrics.MetricsReport.from_counts(counts, absent)


def epoch_batches(n, batch_size, rng):
    """Index arrays for one epoch: a fresh permutation cut into batches."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(model: UNetModel, train_set, val_set, config: TrainConfig, log=None):
    """Train a copy of ``model``; returns ``(trained_model, TrainReport)``.

    Normalisation statistics are fitted on the training split and stored in
    the returned model. Each epoch visits every training scene once in a
    seeded shuffled order; the last partial batch is kept.
    """
    model = model.copy()
    x_raw = train_set.inputs()
    y_all = train_set.targets()
    if len(x_raw) == 0:
        raise ValueError("empty training set")
    model.norm_stats = fit_norm_stats(x_raw)
    x_all = normalize_input(x_raw, model.norm_stats)
    val_x = val_set.inputs() if val_set is not None and len(val_set) else None
    val_y = val_set.targets() if val_x is not None else None

    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(model, config)
    report = TrainReport()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses, weights = [], []
        for b in epoch_batches(len(x_all), config.batch_size, rng):
            losses.append(train_step(model, opt, x_all[b], y_all[b]))
            weights.append(len(b))
        train_loss = float(np.average(losses, weights=weights))
        if val_x is not None:
            val_loss, rep = evaluate(model, val_x, val_y)
            val_miou = rep.mean_iou
        else:
            val_loss, val_miou = float("nan"), float("nan")
        stats = EpochStats(epoch, train_loss, float(val_loss), float(val_miou), time.perf_counter() - t0)
        report.epochs.append(stats)
        if log:
            log(stats)
    return model, report
