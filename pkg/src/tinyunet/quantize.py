"""Post-training 8-bit quantization with per-tensor asymmetric affine parameters.

The reference semantics are simulated quantization: every parameter tensor
is stored as uint8 and dequantized before use, and (optionally) every
activation site passes through quantize -> dequantize using ranges gathered
by min/max calibration. Arithmetic stays in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as K
from .unet import ModelConfig, NormStats, UNetModel, normalize_input, run_graph

QMIN, QMAX = 0, 255
_FMAX = float(np.finfo(np.float32).max)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero point {self.zero_point} outside {QMIN}..{QMAX}")

    @classmethod
    def from_range(cls, lo, hi):
        """Affine parameters for ``[lo, hi]`` widened to contain 0.

        An empty range (both ends 0) gets the degenerate ``scale=1, zp=0``.
        """
        lo = min(max(float(lo), -_FMAX), 0.0)
        hi = max(min(float(hi), _FMAX), 0.0)
        if hi == lo:
            return cls(1.0, 0)
        scale = (hi - lo) / (QMAX - QMIN)
        zp = int(np.clip(np.round(QMIN - lo / scale), QMIN, QMAX))
        return cls(scale, zp)

    def to_dict(self):
        return {"scale": self.scale, "zero_point": self.zero_point}


def quantize(x, qp: QuantParams):
    q = np.round(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.uint8)


def dequantize(q, qp: QuantParams, dtype=np.float32):
    return ((np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale).astype(dtype)


def quantize_tensor(t):
    """Return ``(uint8 payload, QuantParams)`` from the tensor's own min/max."""
    t = np.asarray(t)
    if t.size == 0 or not np.all(np.isfinite(t)):
        raise ValueError("quantize_tensor needs a non-empty finite tensor")
    qp = QuantParams.from_range(t.min(), t.max())
    return quantize(t, qp), qp


def fake_quant(x, qp: QuantParams):
    return dequantize(quantize(x, qp), qp, dtype=np.asarray(x).dtype)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def merge_ranges(a, b):
    if not a:
        return dict(b)
    return {k: (min(a[k][0], b[k][0]), max(a[k][1], b[k][1])) for k in a}


def calibrate(model: UNetModel, raw_inputs, batch_size=16):
    """Running min/max of every activation site over a calibration set (infer mode)."""
    raw_inputs = np.asarray(raw_inputs)
    if len(raw_inputs) == 0:
        raise ValueError("calibration set is empty")
    ranges = {}

    def record(site, a):
        lo, hi = float(a.min()), float(a.max())
        if site in ranges:
            lo, hi = min(lo, ranges[site][0]), max(hi, ranges[site][1])
        ranges[site] = (lo, hi)
        return a

    for i in range(0, len(raw_inputs), batch_size):
        x = normalize_input(raw_inputs[i:i + batch_size].astype(np.float32), model.norm_stats)
        run_graph(model, x, "infer", hook=record)
    return ranges


# ---------------------------------------------------------------------------
# Quantized model
# ---------------------------------------------------------------------------

@dataclass
class QuantizedModel:
    config: ModelConfig
    norm_stats: NormStats
    payloads: dict
    qparams: dict
    buffers: dict
    activation_ranges: dict = field(default_factory=dict)
    quantize_activations: bool = True

    def dequantized_params(self, dtype=np.float32):
        return {k: dequantize(self.payloads[k], self.qparams[k], dtype) for k in self.payloads}

    def activation_qparams(self):
        return {k: QuantParams.from_range(lo, hi) for k, (lo, hi) in self.activation_ranges.items()}

    def num_params(self):
        return sum(p.size for p in self.payloads.values())

    def float_shell(self) -> UNetModel:
        """Float model holding the dequantized weights (for graph walking)."""
        return UNetModel(self.config, self.dequantized_params(), dict(self.buffers), self.norm_stats)


def quantize_model(model: UNetModel, calibration_inputs=None, quantize_activations=True) -> QuantizedModel:
    """Quantize every trainable tensor; calibrate activations when inputs are given."""
    payloads, qparams = {}, {}
    for name, t in model.params.items():
        payloads[name], qparams[name] = quantize_tensor(t)
    ranges = calibrate(model, calibration_inputs) if calibration_inputs is not None else {}
    if quantize_activations and not ranges:
        raise ValueError("activation quantization needs a calibration set")
    return QuantizedModel(model.config, model.norm_stats, payloads, qparams,
                          {k: v.copy() for k, v in model.buffers.items()}, ranges, quantize_activations)


def quantized_forward(qmodel: QuantizedModel, x, activations=None, observer=None):
    """Logits for a normalised input under simulated 8-bit quantization.

    ``activations`` overrides ``qmodel.quantize_activations``. ``observer``
    is called as ``observer(site, before, after, qparams)`` at every
    quantized activation site.
    """
    shell = qmodel.float_shell()
    quant_act = qmodel.quantize_activations if activations is None else activations
    hook = None
    if quant_act:
        aq = qmodel.activation_qparams()

        def hook(site, a):
            qp = aq[site]
            out = fake_quant(a, qp)
            if observer is not None:
                observer(site, a, out, qp)
            return out

    logits = run_graph(shell, K.check_tensor(x), "infer", hook=hook)
    return K.assert_finite(logits, "quantized logits")


def quantized_predict(qmodel: QuantizedModel, raw, batch_size=16, activations=None):
    out = []
    for i in range(0, len(raw), batch_size):
        x = normalize_input(np.asarray(raw[i:i + batch_size], dtype=np.float32), qmodel.norm_stats)
        out.append(quantized_forward(qmodel, x, activations).argmax(axis=1))
    return np.concatenate(out).astype(np.uint8)
