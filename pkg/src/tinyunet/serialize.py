"""TUNW v1 model container.

Layout::

    b"TUNW v1\\n"                 8-byte magic
    uint64 little-endian         length of the header in bytes
    header                       UTF-8 JSON text (config, channel schedule,
                                 tensor manifest, norm stats, optional
                                 quantization block)
    data                         raw tensors in manifest order; float tensors
                                 are little-endian float32, quantized
                                 payloads are uint8

The header is written with sorted keys and compact separators, so
``to_bytes(from_bytes(b)) == b`` for any file this module wrote.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .quantize import QuantizedModel, QuantParams
from .unet import ModelConfig, NormStats, UNetModel, buffer_shapes, channel_schedule, param_shapes

MAGIC = b"TUNW v1\n"
QUANT_MODE = "per-tensor-asymmetric-uint8"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class FormatError(ValueError):
    """Bytes are not a valid TUNW v1 container."""


def _entries(model):
    if isinstance(model, QuantizedModel):
        for name, q in model.payloads.items():
            yield name, "param", "u8", np.ascontiguousarray(q, dtype=np.uint8)
    else:
        for name, p in model.params.items():
            yield name, "param", "f32", np.ascontiguousarray(p, dtype="<f4")
    for name, b in model.buffers.items():
        yield name, "buffer", "f32", np.ascontiguousarray(b, dtype="<f4")


def to_bytes(model) -> bytes:
    cfg = model.config
    manifest, chunks, offset = [], [], 0
    for name, kind, dtype, arr in _entries(model):
        data = arr.tobytes()
        manifest.append({"name": name, "kind": kind, "dtype": dtype, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": "TUNW",
        "version": 1,
        "config": cfg.to_dict(),
        "schedule": channel_schedule(cfg).to_dict(),
        "norm_stats": {"mean": model.norm_stats.mean.tolist(), "std": model.norm_stats.std.tolist()},
        "tensors": manifest,
        "quantization": None,
    }
    if isinstance(model, QuantizedModel):
        header["quantization"] = {
            "mode": QUANT_MODE,
            "quantize_activations": bool(model.quantize_activations),
            "params": {k: v.to_dict() for k, v in model.qparams.items()},
            "activation_ranges": {k: [float(lo), float(hi)] for k, (lo, hi) in model.activation_ranges.items()},
        }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(text)) + text + b"".join(chunks)


def read_header(blob: bytes):
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError("missing TUNW v1 magic")
    (n,) = struct.unpack("<Q", blob[8:16])
    if 16 + n > len(blob):
        raise FormatError("truncated header")
    try:
        header = json.loads(blob[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if header.get("format") != "TUNW" or header.get("version") != 1:
        raise FormatError("unsupported container version")
    return header, 16 + n


def from_bytes(blob: bytes):
    """Decode to :class:`UNetModel` or, when a quantization block is present, :class:`QuantizedModel`."""
    header, start = read_header(blob)
    try:
        cfg = ModelConfig(**header["config"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad model config in header: {exc}") from exc
    expected = dict(param_shapes(cfg))
    expected.update(buffer_shapes(cfg))
    tensors = {}
    for e in header["tensors"]:
        name, shape = e["name"], tuple(e["shape"])
        if name not in expected or shape != tuple(expected[name]):
            raise FormatError(f"tensor {name} has unexpected shape {list(shape)}")
        dt = _DTYPES.get(e["dtype"])
        if dt is None or e["nbytes"] != int(np.prod(shape)) * dt.itemsize:
            raise FormatError(f"tensor {name}: dtype/size mismatch")
        lo = start + e["offset"]
        if lo + e["nbytes"] > len(blob):
            raise FormatError(f"tensor {name} runs past end of file")
        tensors[name] = (e["kind"], np.frombuffer(blob[lo:lo + e["nbytes"]], dtype=dt).reshape(shape))
    if set(tensors) != set(expected):
        raise FormatError("tensor manifest does not match the model configuration")
    norm = NormStats(header["norm_stats"]["mean"], header["norm_stats"]["std"])
    buffers = {k: a.astype(np.float32) for k, (kind, a) in tensors.items() if kind == "buffer"}
    params = {k: a for k, (kind, a) in tensors.items() if kind == "param"}
    q = header["quantization"]
    if q is None:
        return UNetModel(cfg, {k: params[k].astype(np.float32) for k in param_shapes(cfg)}, buffers, norm)
    if q["mode"] != QUANT_MODE:
        raise FormatError(f"unknown quantization mode {q['mode']!r}")
    qparams = {k: QuantParams(v["scale"], v["zero_point"]) for k, v in q["params"].items()}
    ranges = {k: (lo, hi) for k, (lo, hi) in q["activation_ranges"].items()}
    return QuantizedModel(cfg, norm, {k: params[k].copy() for k in param_shapes(cfg)}, qparams, buffers,
                          ranges, q["quantize_activations"])


def save_model(model, path):
    data = to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    return from_bytes(p.read_bytes())
