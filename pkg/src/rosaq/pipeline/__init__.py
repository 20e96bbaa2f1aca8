"""Calibration, PCA rotations, salient selection and mixed-precision splitting."""

from .calibration import (
    CalibrationAccumulator,
    SiteStats,
    accumulate,
    compute_rotation,
    global_mhsa_rotation,
    headwise_rotations,
)
from .mixed import (
    SELECTION_MODES,
    MixedPrecisionWeight,
    SalientSelection,
    select_salient,
    transform_weight,
)
from .plan import LayerPlan, LayerQuantPlan, quantize_model, scaled_budget

__all__ = [
    "CalibrationAccumulator", "SiteStats", "accumulate", "compute_rotation",
    "global_mhsa_rotation", "headwise_rotations", "SELECTION_MODES",
    "MixedPrecisionWeight", "SalientSelection", "select_salient", "transform_weight",
    "LayerPlan", "LayerQuantPlan", "quantize_model", "scaled_budget",
]
