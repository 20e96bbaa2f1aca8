"""Streaming calibration statistics and the PCA rotations derived from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..linalg import EigenDecomposition, as_matrix, pca_rotation


@dataclass
class SiteStats:
    dim: int
    gram: np.ndarray
    count: int = 0
    abs_sum: np.ndarray = None
    samples: list = field(default_factory=list)

    @property
    def mean_abs(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("site has no samples")
        return self.abs_sum / self.count

    def sample_matrix(self) -> np.ndarray:
        if not self.samples:
            raise ValueError("raw samples were not retained for this site")
        return np.vstack(self.samples)


class CalibrationAccumulator:
    """Per-site Gram matrices ``sum X^T X``, token counts and ``sum |x|``.

    Sites are created on first use (or with :meth:`register`). With
    ``keep_samples=True`` the raw activation rows are also retained, which the
    rotated-space magnitude statistics need.
    """

    def __init__(self, keep_samples: bool = False):
        self.keep_samples = keep_samples
        self.sites: dict[str, SiteStats] = {}
        self._rotations: dict[str, EigenDecomposition] = {}

    def register(self, site: str, dim: int) -> SiteStats:
        if site in self.sites:
            if self.sites[site].dim != dim:
                raise ValueError(f"site {site!r} already registered with dim {self.sites[site].dim}")
            return self.sites[site]
        stats = SiteStats(dim, np.zeros((dim, dim)), 0, np.zeros(dim))
        self.sites[site] = stats
        return stats

    def accumulate(self, site: str, activations) -> "CalibrationAccumulator":
        x = as_matrix(activations, f"activations[{site}]")
        stats = self.sites.get(site) or self.register(site, x.shape[1])
        if x.shape[1] != stats.dim:
            raise ValueError(f"site {site!r} expects {stats.dim} columns, got {x.shape[1]}")
        if x.shape[0] == 0:
            return self
        g = x.T @ x
        stats.gram += 0.5 * (g + g.T)
        stats.abs_sum += np.abs(x).sum(axis=0)
        stats.count += x.shape[0]
        if self.keep_samples:
            stats.samples.append(x.copy())
        self._rotations.pop(site, None)
        return self

    def merge(self, other: "CalibrationAccumulator") -> "CalibrationAccumulator":
        """Fold ``other`` into this accumulator (associative, order-free)."""
        for site, st in other.sites.items():
            mine = self.register(site, st.dim)
            mine.gram += st.gram
            mine.abs_sum += st.abs_sum
            mine.count += st.count
            if self.keep_samples:
                mine.samples.extend(s.copy() for s in st.samples)
            self._rotations.pop(site, None)
        return self

    def __getitem__(self, site: str) -> SiteStats:
        try:
            return self.sites[site]
        except KeyError:
            raise ValueError(f"unknown calibration site {site!r}") from None

    def rotation(self, site: str) -> EigenDecomposition:
        """PCA rotation of ``site``, computed once and cached."""
        stats = self[site]
        if stats.count == 0:
            raise ValueError(f"calibration site {site!r} is empty")
        if site not in self._rotations:
            self._rotations[site] = pca_rotation(stats.gram)
        return self._rotations[site]


def accumulate(acc: CalibrationAccumulator, site: str, activations) -> CalibrationAccumulator:
    return acc.accumulate(site, activations)


def compute_rotation(acc: CalibrationAccumulator, site: str) -> EigenDecomposition:
    return acc.rotation(site)


def headwise_rotations(acc: CalibrationAccumulator, head_sites) -> list[EigenDecomposition]:
    """One PCA rotation per head site; all heads must share a width."""
    head_sites = list(head_sites)
    if not head_sites:
        raise ValueError("no head sites given")
    for s in head_sites:
        if s not in acc.sites:
            raise ValueError(f"missing head site {s!r}")
    dims = {acc[s].dim for s in head_sites}
    if len(dims) != 1:
        raise ValueError(f"head sites have differing widths {sorted(dims)}")
    return [acc.rotation(s) for s in head_sites]


def global_mhsa_rotation(acc: CalibrationAccumulator, concat_site: str) -> EigenDecomposition:
    """Single rotation over the concatenated head outputs (ablation only)."""
    return acc.rotation(concat_site)
