"""Salient channel selection and mixed-precision weight splitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..linalg import EigenDecomposition, as_matrix
from ..quant import QuantConfig, QuantizedGroup, dequantize_rows, quantize_rows

SALIENT_ALIGN = 32
SELECTION_MODES = ("top", "bottom", "random", "top_and_bottom")


@dataclass(frozen=True)
class SalientSelection:
    mode: str = "top"
    k: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"selection mode must be one of {SELECTION_MODES}, got {self.mode!r}")
        if self.k < 0:
            raise ValueError("salient count must be non-negative")


def select_salient(eigenvalues, selection: SalientSelection, align: int = SALIENT_ALIGN) -> np.ndarray:
    """Indices (into the descending eigenvalue order) of the salient channels.

    ``align`` is the multiple ``k`` must respect; pass 1 to lift the rule.
    Equal eigenvalues resolve to the lower index because the order itself is
    a stable sort.
    """
    d = len(eigenvalues)
    k = selection.k
    if k > d:
        raise ValueError(f"salient count {k} exceeds dimension {d}")
    if align > 1 and k % align:
        raise ValueError(f"salient count {k} is not a multiple of {align}")
    if selection.mode == "top":
        return np.arange(k)
    if selection.mode == "bottom":
        return np.arange(d - k, d)
    if selection.mode == "random":
        start = int(np.random.default_rng(selection.seed).integers(0, d - k + 1))
        return np.arange(start, start + k)
    if k % 2:
        raise ValueError("top_and_bottom needs an even salient count")
    return np.concatenate([np.arange(k // 2), np.arange(d - k // 2, d)])


@dataclass(frozen=True, eq=False)
class MixedPrecisionWeight:
    """``R^T W`` split into a full-precision salient block and quantized groups.

    Row ``i`` of the stacked matrix ``[salient; dequantized groups]`` is row
    ``permutation[i]`` of ``R^T W``. When ``absorbed`` is set the input
    rotation has been folded into the producer of this layer's input, so
    :meth:`forward` does not apply it.
    """

    rotation: EigenDecomposition | None
    salient: np.ndarray
    groups: tuple
    permutation: np.ndarray
    cfg: QuantConfig
    n_in: int
    n_out: int
    absorbed: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        k = self.salient.shape[0]
        if self.salient.shape[1] != self.n_out and k:
            raise ValueError("salient block has the wrong width")
        if sorted(self.permutation.tolist()) != list(range(self.n_in)):
            raise ValueError("permutation is not a permutation of the input channels")
        n_norm = self.n_in - k
        blocks = -(-n_norm // self.cfg.group_size) if n_norm else 0
        if len(self.groups) != blocks * self.n_out:
            raise ValueError(f"expected {blocks * self.n_out} quantized groups, got {len(self.groups)}")
        if self.rotation is not None and self.rotation.dim != self.n_in:
            raise ValueError("rotation dimension does not match the weight")

    @property
    def k(self) -> int:
        return self.salient.shape[0]

    def normal(self) -> np.ndarray:
        """Dequantized non-salient rows, in permuted order."""
        if "normal" not in self._cache:
            self._cache["normal"] = dequantize_rows(
                self.groups, self.n_in - self.k, self.n_out, self.cfg.group_size)
        return self._cache["normal"]

    def stacked(self) -> np.ndarray:
        if "stacked" not in self._cache:
            if self.k == self.n_in:
                self._cache["stacked"] = self.salient
            else:
                self._cache["stacked"] = np.vstack([self.salient, self.normal()])
        return self._cache["stacked"]

    def reconstruct_rotated(self) -> np.ndarray:
        """Approximation of ``R^T W`` in the rotated channel order."""
        out = np.empty((self.n_in, self.n_out))
        out[self.permutation] = self.stacked()
        return out

    def reconstruct(self) -> np.ndarray:
        """Approximation of ``W`` itself (rotation undone)."""
        rot = self.reconstruct_rotated()
        if self.rotation is None:
            return rot
        return self.rotation.eigenvectors @ rot

    def _identity_perm(self) -> bool:
        if "ident" not in self._cache:
            self._cache["ident"] = bool(np.array_equal(self.permutation, np.arange(self.n_in)))
        return self._cache["ident"]

    def rotate_input(self, x: np.ndarray) -> np.ndarray:
        if self.rotation is None or self.absorbed:
            return x
        return x @ self.rotation.eigenvectors

    def forward_rotated(self, xr: np.ndarray) -> np.ndarray:
        """Apply the layer to an input that is already in the rotated basis."""
        if not self._identity_perm():
            xr = xr[..., self.permutation]
        return xr @ self.stacked()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_rotated(self.rotate_input(x))

    def to_storage(self) -> "MixedPrecisionWeight":
        """Copy with every real-valued field rounded to binary32, as stored on disk."""
        groups = tuple(
            QuantizedGroup(g.bits, float(np.float32(g.scale)), float(np.float32(g.offset)),
                           g.count, g.codes)
            for g in self.groups)
        rot = None
        if self.rotation is not None:
            rot = EigenDecomposition(
                self.rotation.eigenvectors.astype(np.float32).astype(np.float64),
                self.rotation.eigenvalues.astype(np.float32).astype(np.float64),
                self.rotation.sweeps)
        return replace(self, rotation=rot, groups=groups,
                       salient=self.salient.astype(np.float32).astype(np.float64),
                       _cache={})


def transform_weight(w, rotation: EigenDecomposition | None, selected, cfg: QuantConfig,
                     absorbed: bool = False) -> MixedPrecisionWeight:
    """Rotate ``w`` into the PCA basis and split it into salient / quantized rows.

    ``selected`` indexes rows of ``R^T W`` (rotated channels). Those rows are
    kept exactly; the rest, in ascending order, are quantized per group of
    ``cfg.group_size`` rows, each output column separately.
    """
    w = as_matrix(w, "w")
    d, d_out = w.shape
    if rotation is not None and rotation.dim != d:
        raise ValueError(f"rotation of dim {rotation.dim} cannot rotate a weight with {d} inputs")
    selected = np.asarray(selected, dtype=np.int64).reshape(-1)
    if len(set(selected.tolist())) != selected.size or (selected.size and
                                                         (selected.min() < 0 or selected.max() >= d)):
        raise ValueError("salient indices must be distinct and within range")
    rotated = w if rotation is None else rotation.eigenvectors.T @ w
    mask = np.ones(d, dtype=bool)
    mask[selected] = False
    rest = np.flatnonzero(mask)
    perm = np.concatenate([selected, rest])
    salient = rotated[selected].copy()
    groups, deq = quantize_rows(rotated[rest], cfg)
    mpw = MixedPrecisionWeight(rotation, salient, tuple(groups), perm, cfg, d, d_out, absorbed)
    mpw._cache["normal"] = deq
    return mpw
