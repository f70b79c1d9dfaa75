"""CPU latency benchmark for float and quantized models."""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass

import jsonschema
import numpy as np

from .quantize import QuantizedModel, quantized_forward
from .unet import forward, mac_count, param_count

MIN_RUNS = 30

BENCH_SCHEMA = {
    "type": "object",
    "required": ["config", "quantized", "input_dims", "runs", "warmup", "mean_ms", "median_ms",
                 "p95_ms", "macs", "params", "host"],
    "properties": {
        "config": {
            "type": "object",
            "required": ["B", "F"],
            "properties": {"B": {"type": "integer", "minimum": 1, "maximum": 4},
                           "F": {"type": "integer", "enum": [1, 2, 4, 8, 16]}},
        },
        "quantized": {"type": "boolean"},
        "input_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4, "maxItems": 4},
        "runs": {"type": "integer", "minimum": MIN_RUNS},
        "warmup": {"type": "integer", "minimum": 0},
        "mean_ms": {"type": "number", "exclusiveMinimum": 0},
        "median_ms": {"type": "number", "exclusiveMinimum": 0},
        "p95_ms": {"type": "number", "exclusiveMinimum": 0},
        "macs": {"type": "integer", "minimum": 1},
        "params": {"type": "integer", "minimum": 1},
        "host": {"type": "object", "required": ["python", "numpy", "machine", "system"]},
    },
}


@dataclass
class BenchReport:
    config: dict
    quantized: bool
    input_dims: list
    runs: int
    warmup: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    macs: int
    params: int
    host: dict

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        validate_report(d)
        return cls(**d)


def validate_report(d):
    jsonschema.validate(d, BENCH_SCHEMA)


def host_descriptor():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
    }


def benchmark(model, dims=(1, 9, 32, 32), runs=MIN_RUNS, warmup=3, seed=0) -> BenchReport:
    """Time single inferences on a fixed random normalised input."""
    if runs < MIN_RUNS:
        raise ValueError(f"need at least {MIN_RUNS} timed runs, got {runs}")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    dims = tuple(int(d) for d in dims)
    quantized = isinstance(model, QuantizedModel)
    x = np.random.default_rng(seed).standard_normal(dims).astype(np.float32)
    if quantized:
        def infer():
            return quantized_forward(model, x)
    else:
        def infer():
            return forward(model, x, "infer")
    for _ in range(warmup):
        infer()
    times = np.empty(runs)
    for i in range(runs):
        t0 = time.perf_counter()
        infer()
        times[i] = (time.perf_counter() - t0) * 1e3
    cfg = model.config
    return BenchReport(
        config={"B": cfg.B, "F": cfg.F},
        quantized=quantized,
        input_dims=list(dims),
        runs=runs,
        warmup=warmup,
        mean_ms=float(times.mean()),
        median_ms=float(np.median(times)),
        p95_ms=float(np.percentile(times, 95)),
        macs=int(dims[0] * mac_count(cfg, dims[2], dims[3])),
        params=param_count(cfg),
        host=host_descriptor(),
    )
