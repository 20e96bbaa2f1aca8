"""File formats, persistence, synthetic data, metrics, ablations, benchmarks and the CLI."""

from .ablation import run_ablation_headwise, run_ablation_salient, run_magnitude_study
from .metrics import magnitude_stats, reconstruction_error, spearman
from .store import load_accumulator, load_model, load_quantized, save_accumulator, save_model, save_quantized

__all__ = [
    "run_ablation_headwise", "run_ablation_salient", "run_magnitude_study",
    "magnitude_stats", "reconstruction_error", "spearman",
    "load_accumulator", "load_model", "load_quantized",
    "save_accumulator", "save_model", "save_quantized",
]
