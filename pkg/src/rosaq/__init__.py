"""PCA-rotated, salience-aware mixed-precision weight quantization.

Weights are rotated into the principal basis of their calibration
activations; the channels with the largest eigenvalues stay in full
precision and the rest are quantized per group to INT3/INT4.
"""

from ._backend import NAME as BACKEND
from .errors import ConvergenceError, FormatError
from .linalg import EigenDecomposition, eig_sym, gram, matmul, pca_rotation
from .model import BlockConfig, BlockWeights, QuantizedBlock, block_forward, capture_calibration
from .pipeline import (
    CalibrationAccumulator,
    LayerQuantPlan,
    MixedPrecisionWeight,
    SalientSelection,
    quantize_model,
    select_salient,
    transform_weight,
)
from .quant import QuantConfig, QuantizedGroup, dequantize_group, quantize_group

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConvergenceError", "FormatError",
    "EigenDecomposition", "eig_sym", "gram", "matmul", "pca_rotation",
    "BlockConfig", "BlockWeights", "QuantizedBlock", "block_forward", "capture_calibration",
    "CalibrationAccumulator", "LayerQuantPlan", "MixedPrecisionWeight", "SalientSelection",
    "quantize_model", "select_salient", "transform_weight",
    "QuantConfig", "QuantizedGroup", "dequantize_group", "quantize_group",
]
