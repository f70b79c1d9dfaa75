"""NCHW compute kernels: forward and backward for every layer type in the U-Net.

Tensors are plain numpy arrays of rank 4 ``(n, c, h, w)``. Every kernel
accumulates in float64 and returns the input's floating dtype, so float32
models stay float32 while gradient checks can run entirely in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested kernel."""


@dataclass
class LayerGrad:
    d_input: np.ndarray
    d_weights: np.ndarray
    d_bias: Optional[np.ndarray] = None


def _out_dtype(*arrays):
    return np.result_type(np.float32, *(a.dtype for a in arrays if a is not None))


def check_tensor(x, name="input"):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 NCHW, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    return x


def _check_bias(bias, out_c):
    if bias is not None and np.shape(bias) != (out_c,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match {out_c} output channels")


# ---------------------------------------------------------------------------
# 3x3 convolution, stride 1, zero padding 1
# ---------------------------------------------------------------------------

def _im2col3(x64):
    n, c, h, w = x64.shape
    xp = np.pad(x64, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv2d_forward(x, weights, bias=None):
    """Same-padded 3x3 convolution. ``weights`` is ``(out_c, in_c, 3, 3)``."""
    x = check_tensor(x)
    weights = np.asarray(weights)
    if weights.ndim != 4 or weights.shape[2:] != (3, 3) or weights.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {weights.shape}")
    _check_bias(bias, weights.shape[0])
    n, _, h, w = x.shape
    out_c = weights.shape[0]
    cols = _im2col3(x.astype(np.float64))
    out = cols @ weights.reshape(out_c, -1).astype(np.float64).T
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    out = out.reshape(n, h, w, out_c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out, dtype=_out_dtype(x, weights))


def conv2d_backward(x, weights, d_out, with_bias=True):
    x = check_tensor(x)
    weights = np.asarray(weights)
    d_out = check_tensor(d_out, "d_output")
    n, c, h, w = x.shape
    out_c = weights.shape[0]
    if d_out.shape != (n, out_c, h, w):
        raise ShapeError(f"conv2d_backward: d_output {d_out.shape} != forward output {(n, out_c, h, w)}")
    dt = _out_dtype(x, weights, d_out)
    g = d_out.astype(np.float64).transpose(0, 2, 3, 1).reshape(n * h * w, out_c)
    cols = _im2col3(x.astype(np.float64))
    d_w = (g.T @ cols).reshape(weights.shape)
    d_cols = (g @ weights.reshape(out_c, -1).astype(np.float64)).reshape(n, h, w, c, 3, 3)
    d_xp = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            d_xp[:, :, i:i + h, j:j + w] += d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    d_b = g.sum(axis=0).astype(dt) if with_bias else None
    return LayerGrad(d_xp[:, :, 1:-1, 1:-1].astype(dt), d_w.astype(dt), d_b)


# ---------------------------------------------------------------------------
# 1x1 convolution (classification head)
# ---------------------------------------------------------------------------

def conv1x1_forward(x, weights, bias=None):
    x = check_tensor(x)
    weights = np.asarray(weights)
    if weights.ndim != 4 or weights.shape[2:] != (1, 1) or weights.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1x1: input {x.shape} incompatible with weights {weights.shape}")
    _check_bias(bias, weights.shape[0])
    out = np.einsum("oc,nchw->nohw", weights[:, :, 0, 0].astype(np.float64), x.astype(np.float64))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out.astype(_out_dtype(x, weights))


def conv1x1_backward(x, weights, d_out, with_bias=True):
    x = check_tensor(x)
    d_out = check_tensor(d_out, "d_output")
    if d_out.shape != (x.shape[0], weights.shape[0]) + x.shape[2:]:
        raise ShapeError(f"conv1x1_backward: d_output {d_out.shape} inconsistent with input {x.shape}")
    dt = _out_dtype(x, weights, d_out)
    g = d_out.astype(np.float64)
    w2 = weights[:, :, 0, 0].astype(np.float64)
    d_x = np.einsum("oc,nohw->nchw", w2, g)
    d_w = np.einsum("nohw,nchw->oc", g, x.astype(np.float64))[:, :, None, None]
    d_b = g.sum(axis=(0, 2, 3)).astype(dt) if with_bias else None
    return LayerGrad(d_x.astype(dt), d_w.astype(dt), d_b)


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2
# ---------------------------------------------------------------------------

def maxpool2x2(x):
    """Return ``(pooled, argmax)``; argmax holds the row-major window slot 0..3."""
    x = check_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def maxpool2x2_backward(d_out, argmax, input_shape):
    d_out = check_tensor(d_out, "d_output")
    n, c, h, w = input_shape
    if d_out.shape != (n, c, h // 2, w // 2) or argmax.shape != d_out.shape:
        raise ShapeError(f"maxpool2x2_backward: d_output {d_out.shape} vs input {tuple(input_shape)}")
    win = np.zeros(d_out.shape + (4,), dtype=d_out.dtype)
    np.put_along_axis(win, argmax[..., None].astype(np.intp), d_out[..., None], axis=-1)
    return win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


# ---------------------------------------------------------------------------
# 2x2 transpose convolution, stride 2 (upsampling)
# ---------------------------------------------------------------------------

def transpose_conv2x2(x, weights, bias=None):
    """Stride-2 transposed convolution. ``weights`` is ``(in_c, out_c, 2, 2)``."""
    x = check_tensor(x)
    weights = np.asarray(weights)
    if weights.ndim != 4 or weights.shape[2:] != (2, 2) or weights.shape[0] != x.shape[1]:
        raise ShapeError(f"transpose_conv2x2: input {x.shape} incompatible with weights {weights.shape}")
    _check_bias(bias, weights.shape[1])
    n, _, h, w = x.shape
    out_c = weights.shape[1]
    out = np.einsum("nchw,coab->nohawb", x.astype(np.float64), weights.astype(np.float64))
    out = out.reshape(n, out_c, 2 * h, 2 * w)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out.astype(_out_dtype(x, weights))


def transpose_conv2x2_backward(x, weights, d_out, with_bias=True):
    x = check_tensor(x)
    d_out = check_tensor(d_out, "d_output")
    n, c, h, w = x.shape
    out_c = weights.shape[1]
    if d_out.shape != (n, out_c, 2 * h, 2 * w):
        raise ShapeError(f"transpose_conv2x2_backward: d_output {d_out.shape} != {(n, out_c, 2 * h, 2 * w)}")
    dt = _out_dtype(x, weights, d_out)
    g = d_out.astype(np.float64).reshape(n, out_c, h, 2, w, 2)
    d_x = np.einsum("nohawb,coab->nchw", g, weights.astype(np.float64))
    d_w = np.einsum("nchw,nohawb->coab", x.astype(np.float64), g)
    d_b = d_out.astype(np.float64).sum(axis=(0, 2, 3)).astype(dt) if with_bias else None
    return LayerGrad(d_x.astype(dt), d_w.astype(dt), d_b)


# ---------------------------------------------------------------------------
# Batch normalisation
# ---------------------------------------------------------------------------

class BatchNormOut(NamedTuple):
    y: np.ndarray
    cache: tuple
    running_mean: np.ndarray
    running_var: np.ndarray


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train", momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation.

    Train mode normalises with biased batch statistics and returns running
    statistics updated with the unbiased batch variance; infer mode uses the
    running statistics and returns them unchanged. Inputs are never mutated.
    """
    x = check_tensor(x)
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if np.shape(v) != (c,):
            raise ShapeError(f"batchnorm: {name} shape {np.shape(v)} does not match {c} channels")
    x64 = x.astype(np.float64)
    if mode == "train":
        mean = x64.mean(axis=(0, 2, 3))
        var = ((x64 - mean[None, :, None, None]) ** 2).mean(axis=(0, 2, 3))
        m = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * m / max(m - 1, 1)
        new_mean = ((1 - momentum) * running_mean + momentum * mean).astype(running_mean.dtype)
        new_var = ((1 - momentum) * running_var + momentum * unbiased).astype(running_var.dtype)
    elif mode == "infer":
        mean = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x64 - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = x_hat * np.asarray(gamma, dtype=np.float64)[None, :, None, None] + np.asarray(beta, dtype=np.float64)[None, :, None, None]
    cache = (mode, x_hat, inv_std, np.asarray(gamma, dtype=np.float64))
    return BatchNormOut(y.astype(_out_dtype(x, gamma)), cache, new_mean, new_var)


def batchnorm_backward(d_out, cache):
    """Return ``(d_input, d_gamma, d_beta)``."""
    mode, x_hat, inv_std, gamma = cache
    d_out = check_tensor(d_out, "d_output")
    if d_out.shape != x_hat.shape:
        raise ShapeError(f"batchnorm_backward: d_output {d_out.shape} != {x_hat.shape}")
    dt = d_out.dtype
    g = d_out.astype(np.float64)
    d_beta = g.sum(axis=(0, 2, 3))
    d_gamma = (g * x_hat).sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if mode == "train":
        m = g.shape[0] * g.shape[2] * g.shape[3]
        d_x = scale / m * (m * g - d_beta[None, :, None, None] - x_hat * d_gamma[None, :, None, None])
    else:
        d_x = scale * g
    return d_x.astype(dt), d_gamma.astype(dt), d_beta.astype(dt)


# ---------------------------------------------------------------------------
# Pointwise and channel ops
# ---------------------------------------------------------------------------

def relu(x):
    x = np.asarray(x)
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(d_out, x):
    return np.where(np.asarray(x) > 0, d_out, 0).astype(np.asarray(d_out).dtype, copy=False)


def concat_channels(a, b):
    a, b = check_tensor(a, "a"), check_tensor(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: {a.shape} and {b.shape} differ outside the channel axis")
    return np.concatenate([a, b], axis=1)


def split_channels(t, first_c):
    """Inverse of :func:`concat_channels`; also routes concat gradients."""
    t = check_tensor(t)
    if not 0 < first_c < t.shape[1]:
        raise ShapeError(f"cannot split {t.shape[1]} channels at {first_c}")
    return t[:, :first_c], t[:, first_c:]


def softmax_channels(x):
    x = check_tensor(x)
    z = x.astype(np.float64)
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return (z / z.sum(axis=1, keepdims=True)).astype(_out_dtype(x))


def softmax_channels_backward(d_out, y):
    g = np.asarray(d_out, dtype=np.float64)
    y64 = np.asarray(y, dtype=np.float64)
    d_x = y64 * (g - (g * y64).sum(axis=1, keepdims=True))
    return d_x.astype(_out_dtype(np.asarray(d_out)))


def assert_finite(t, where="tensor"):
    if not np.all(np.isfinite(t)):
        raise FloatingPointError(f"non-finite values in {where}")
    return t
