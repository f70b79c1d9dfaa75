"""Compression-parameterised Tiny U-Net for oil-slick thickness segmentation.

Numpy-only micro-framework: kernels, model graph, training, 8-bit
post-training quantization, segmentation metrics, a synthetic radar scene
generator and a (B, F) design-space sweep.
"""

import os

# single-threaded BLAS keeps float64 reductions bit-reproducible
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .unet import ModelConfig, UNetModel, build_model, forward, backward, param_count, model_size_mib  # noqa: E402

__all__ = ["ModelConfig", "UNetModel", "build_model", "forward", "backward", "param_count", "model_size_mib"]
__version__ = "0.1.0"
