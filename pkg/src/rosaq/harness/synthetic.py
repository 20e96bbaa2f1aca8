"""Seeded synthetic activations standing in for real calibration data.

The default anisotropic ensemble draws Gaussian vectors whose covariance has
eigenvalues ``lambda_i ~ i**-exponent`` in a random orthogonal basis, scaled
so the average per-channel variance is 1.
"""

from __future__ import annotations

import os

import numpy as np

from ..linalg import random_orthogonal

DEFAULT_SEED = 0


def default_seed() -> int:
    """``ROSAQ_SEED`` from the environment, else 0."""
    raw = os.environ.get("ROSAQ_SEED")
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"ROSAQ_SEED must be an integer, got {raw!r}") from None


def power_spectrum(d: int, exponent: float = 2.0) -> np.ndarray:
    lam = np.arange(1, d + 1, dtype=np.float64) ** -exponent
    return lam / lam.mean()


class Anisotropic:
    """Gaussian (or Student-t) source with a power-law spectrum in a random basis."""

    def __init__(self, d: int, rng: np.random.Generator, exponent: float = 2.0,
                 isotropic: bool = False, df: float | None = None):
        self.d = d
        self.basis = random_orthogonal(d, rng)
        self.spectrum = np.ones(d) if isotropic else power_spectrum(d, exponent)
        self.df = df

    def latent(self, rng, shape) -> np.ndarray:
        if self.df is None:
            return rng.standard_normal(shape)
        # unit-variance Student-t
        return rng.standard_t(self.df, shape) * np.sqrt((self.df - 2.0) / self.df)

    def sample(self, rng: np.random.Generator, *shape) -> np.ndarray:
        z = self.latent(rng, (*shape, self.d)) * np.sqrt(self.spectrum)
        return z @ self.basis.T


def head_representations(rng: np.random.Generator, n_heads: int, d_head: int, n_rows: int,
                         sources=None, exponent: float = 2.0, identical: bool = False):
    """Independent per-head activations, one covariance per head.

    With ``identical`` every head shares one covariance; otherwise each head
    gets its own random eigenbasis. Returns ``(sources, [n_rows x d_head] * H)``
    so a later held-out draw can reuse the same sources.
    """
    if sources is None:
        if identical:
            shared = Anisotropic(d_head, rng, exponent)
            sources = [shared] * n_heads
        else:
            sources = [Anisotropic(d_head, rng, exponent) for _ in range(n_heads)]
    return sources, [s.sample(rng, n_rows) for s in sources]
