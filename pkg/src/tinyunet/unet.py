"""Compression-parameterised U-Net: topology, forward/backward, size accounting.

A model is fully determined by ``(B, F)``: ``B`` encoder levels (and as many
decoder stages) around one bottleneck block, with every channel width
divided by ``F``. Convolutions that feed a batch norm carry no bias, since
the norm's shift makes one redundant. Only the 1x1 classification head has a
bias.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as K

VALID_F = (1, 2, 4, 8, 16)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ConfigError(ValueError):
    """Invalid (B, F) point or derived channel schedule."""


@dataclass(frozen=True)
class ModelConfig:
    B: int = 2
    F: int = 4
    in_channels: int = 9
    num_classes: int = 11
    base_width: int = 32

    def __post_init__(self):
        if not 1 <= self.B <= 4:
            raise ConfigError(f"B must be in 1..4, got {self.B}")
        if self.F not in VALID_F:
            raise ConfigError(f"F must be one of {VALID_F}, got {self.F}")
        if self.base_width % self.F or self.base_width // self.F < 1:
            raise ConfigError(f"base width {self.base_width} not divisible by F={self.F}")

    def to_dict(self):
        return {"B": self.B, "F": self.F, "in_channels": self.in_channels,
                "num_classes": self.num_classes, "base_width": self.base_width}


@dataclass(frozen=True)
class ChannelSchedule:
    encoder: tuple
    bottleneck: int

    @property
    def decoder(self):
        return tuple(reversed(self.encoder))

    def to_dict(self):
        return {"encoder": list(self.encoder), "bottleneck": self.bottleneck, "decoder": list(self.decoder)}


def channel_schedule(config: ModelConfig) -> ChannelSchedule:
    w0 = config.base_width // config.F
    return ChannelSchedule(tuple(w0 * 2**i for i in range(config.B)), w0 * 2**config.B)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("norm stats need matching 1-D mean and std")
        if np.any(self.std <= 0) or not np.all(np.isfinite(self.std)):
            raise ValueError("norm stats std must be positive and finite")

    @classmethod
    def identity(cls, channels=9):
        return cls(np.zeros(channels), np.ones(channels))


@dataclass
class UNetModel:
    config: ModelConfig
    params: dict
    buffers: dict
    norm_stats: NormStats = field(default_factory=NormStats.identity)

    @property
    def schedule(self):
        return channel_schedule(self.config)

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        out = self.copy()
        out.params = {k: v.astype(dtype) for k, v in out.params.items()}
        out.buffers = {k: v.astype(dtype) for k, v in out.buffers.items()}
        return out


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def blocks(config: ModelConfig):
    """Ordered ``(prefix, in_c, out_c)`` for every double-conv block."""
    sched = channel_schedule(config)
    out, c = [], config.in_channels
    for i, e in enumerate(sched.encoder, 1):
        out.append((f"enc{i}", c, e))
        c = e
    out.append(("bottleneck", c, sched.bottleneck))
    for i in range(config.B, 0, -1):
        e = sched.encoder[i - 1]
        out.append((f"dec{i}", 2 * e, e))
    return out


def param_shapes(config: ModelConfig):
    """Trainable parameter shapes in execution (and serialisation) order."""
    sched = channel_schedule(config)
    shapes = {}

    def double_conv(prefix, cin, cout):
        shapes[f"{prefix}.conv1.weight"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.bn1.gamma"] = (cout,)
        shapes[f"{prefix}.bn1.beta"] = (cout,)
        shapes[f"{prefix}.conv2.weight"] = (cout, cout, 3, 3)
        shapes[f"{prefix}.bn2.gamma"] = (cout,)
        shapes[f"{prefix}.bn2.beta"] = (cout,)

    c = sched.bottleneck
    for prefix, cin, cout in blocks(config):
        if prefix.startswith("dec"):
            shapes[f"{prefix}.up.weight"] = (c, cout, 2, 2)
            c = cout
        double_conv(prefix, cin, cout)
    shapes["head.weight"] = (config.num_classes, sched.encoder[0], 1, 1)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def buffer_shapes(config: ModelConfig):
    shapes = {}
    for prefix, _, cout in blocks(config):
        for bn in ("bn1", "bn2"):
            shapes[f"{prefix}.{bn}.running_mean"] = (cout,)
            shapes[f"{prefix}.{bn}.running_var"] = (cout,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Trainable parameters: conv/transpose weights, head bias, BN gamma and beta.

    Batch-norm running statistics and activation/skip buffers are not counted.
    """
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def model_size_mib(config: ModelConfig, bytes_per_param=4) -> float:
    return param_count(config) * bytes_per_param / 2**20


def mac_count(config: ModelConfig, height=32, width=32) -> int:
    """Multiply-accumulates for one forward pass on an ``height x width`` input."""
    check_spatial(config, height, width)
    macs = 0
    pixels = height * width
    for prefix, cin, cout in blocks(config):
        level = int(prefix[3:]) if prefix[:3] in ("enc", "dec") else config.B + 1
        p = pixels // 4 ** (level - 1)
        macs += p * 9 * (cin * cout + cout * cout)
    shapes = param_shapes(config)
    for i in range(1, config.B + 1):
        cin, cout = shapes[f"dec{i}.up.weight"][:2]
        macs += (pixels // 4**i) * cin * cout * 4
    macs += pixels * config.num_classes * channel_schedule(config).encoder[0]
    return macs


def check_spatial(config: ModelConfig, h, w):
    step = 2**config.B
    if h % step or w % step:
        raise K.ShapeError(f"spatial dims {h}x{w} must be divisible by 2^B = {step}")


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_model(config: ModelConfig, seed=0, dtype=np.float32) -> UNetModel:
    """Fresh model; conv weights uniform in +-1/sqrt(fan_in), BN gamma=1, beta=0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            if name.endswith("up.weight"):
                fan_in = shape[0] * 4
            elif name == "head.bias":
                fan_in = params["head.weight"].shape[1]
            else:
                fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    buffers = {
        name: (np.zeros(shape, dtype=dtype) if name.endswith("mean") else np.ones(shape, dtype=dtype))
        for name, shape in buffer_shapes(config).items()
    }
    return UNetModel(config, params, buffers, NormStats.identity(config.in_channels))


def normalize_input(raw, norm_stats: NormStats):
    raw = K.check_tensor(raw)
    if raw.shape[1] != norm_stats.mean.size:
        raise K.ShapeError(f"input has {raw.shape[1]} channels, norm stats cover {norm_stats.mean.size}")
    if np.any(norm_stats.std == 0):
        raise ValueError("zero std in norm stats")
    out = (raw.astype(np.float64) - norm_stats.mean[None, :, None, None]) / norm_stats.std[None, :, None, None]
    return out.astype(raw.dtype if raw.dtype == np.float64 else np.float32)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _identity(site, x):
    return x


class Trace:
    """Intermediate values recorded by :func:`forward` for :func:`backward`."""

    def __init__(self, mode):
        self.mode = mode
        self.records = []

    def push(self, kind, name, *data):
        self.records.append((kind, name, data))


def _conv_block(prefix, x, p, buffers, mode, update_stats, hook, trace):
    for k in ("1", "2"):
        conv, bn = f"{prefix}.conv{k}", f"{prefix}.bn{k}"
        y = hook(conv, K.conv2d_forward(x, p[f"{conv}.weight"]))
        if trace is not None:
            trace.push("conv", conv, x)
        out = K.batchnorm_forward(y, p[f"{bn}.gamma"], p[f"{bn}.beta"],
                                  buffers[f"{bn}.running_mean"], buffers[f"{bn}.running_var"],
                                  mode, BN_MOMENTUM, BN_EPS)
        if mode == "train" and update_stats:
            buffers[f"{bn}.running_mean"] = out.running_mean
            buffers[f"{bn}.running_var"] = out.running_var
        z = hook(bn, out.y)
        if trace is not None:
            trace.push("bn", bn, out.cache)
            trace.push("relu", bn, z)
        x = K.relu(z)
    return x


def run_graph(model: UNetModel, x, mode="infer", *, params=None, hook=None, update_stats=True, trace=None):
    """Walk the network. ``hook(site, activation)`` may replace any activation.

    Sites are named after the layer that produced them: ``input``, every
    ``*.conv*`` output, every ``*.bn*`` output (before ReLU), every ``*.up``
    output and ``head``.
    """
    cfg = model.config
    x = K.check_tensor(x)
    if x.shape[1] != cfg.in_channels:
        raise K.ShapeError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
    check_spatial(cfg, x.shape[2], x.shape[3])
    p = model.params if params is None else params
    hook = hook or _identity
    x = hook("input", x)
    skips = []
    for i in range(1, cfg.B + 1):
        x = _conv_block(f"enc{i}", x, p, model.buffers, mode, update_stats, hook, trace)
        skips.append(x)
        shape = x.shape
        x, idx = K.maxpool2x2(x)
        if trace is not None:
            trace.push("pool", f"enc{i}", idx, shape)
    x = _conv_block("bottleneck", x, p, model.buffers, mode, update_stats, hook, trace)
    for i in range(cfg.B, 0, -1):
        up = f"dec{i}.up"
        if trace is not None:
            trace.push("up", up, x)
        x = hook(up, K.transpose_conv2x2(x, p[f"{up}.weight"]))
        skip = skips.pop()
        if trace is not None:
            trace.push("concat", f"dec{i}", skip.shape[1])
        x = K.concat_channels(skip, x)
        x = _conv_block(f"dec{i}", x, p, model.buffers, mode, update_stats, hook, trace)
    if trace is not None:
        trace.push("head", "head", x)
    return hook("head", K.conv1x1_forward(x, p["head.weight"], p["head.bias"]))


def forward(model: UNetModel, x, mode="infer", *, update_stats=True, keep_trace=False):
    """Logits ``(n, num_classes, h, w)`` for an already-normalised input.

    In train mode batch-norm running statistics are updated on the model
    unless ``update_stats`` is False. With ``keep_trace`` returns
    ``(logits, trace)``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    trace = Trace(mode) if keep_trace else None
    logits = run_graph(model, x, mode, update_stats=update_stats, trace=trace)
    return (logits, trace) if keep_trace else logits


def _backprop(model: UNetModel, trace: Trace, d_logits):
    p = model.params
    grads = {}
    g = np.asarray(d_logits)
    skip_grads = {}
    for kind, name, data in reversed(trace.records):
        if kind == "head":
            lg = K.conv1x1_backward(data[0], p["head.weight"], g)
            grads["head.weight"], grads["head.bias"], g = lg.d_weights, lg.d_bias, lg.d_input
        elif kind == "relu":
            g = K.relu_backward(g, data[0])
        elif kind == "bn":
            g, grads[f"{name}.gamma"], grads[f"{name}.beta"] = K.batchnorm_backward(g, data[0])
        elif kind == "conv":
            lg = K.conv2d_backward(data[0], p[f"{name}.weight"], g, with_bias=False)
            grads[f"{name}.weight"], g = lg.d_weights, lg.d_input
        elif kind == "concat":
            g_skip, g = K.split_channels(g, data[0])
            skip_grads[name.replace("dec", "enc")] = g_skip
        elif kind == "up":
            lg = K.transpose_conv2x2_backward(data[0], p[f"{name}.weight"], g, with_bias=False)
            grads[f"{name}.weight"], g = lg.d_weights, lg.d_input
        elif kind == "pool":
            idx, shape = data
            # the encoder output feeds both the pool and the skip connection
            g = K.maxpool2x2_backward(g, idx, shape) + skip_grads.pop(name)
    return {k: grads[k] for k in p}, g


def backward(model: UNetModel, trace: Trace, d_logits):
    """Gradients of every trainable parameter, keyed like ``model.params``.

    Batch-norm running statistics get no gradient.
    """
    d_logits = K.check_tensor(d_logits, "d_logits")
    expected = trace.records[-1][2][0].shape
    if d_logits.shape[0] != expected[0] or d_logits.shape[2:] != expected[2:] \
            or d_logits.shape[1] != model.config.num_classes:
        raise K.ShapeError(f"d_logits {d_logits.shape} inconsistent with forward trace")
    return _backprop(model, trace, d_logits)[0]


def input_gradient(model: UNetModel, trace: Trace, d_logits):
    """Gradient w.r.t. the (normalised) network input."""
    return _backprop(model, trace, d_logits)[1]
