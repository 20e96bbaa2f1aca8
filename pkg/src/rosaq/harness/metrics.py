"""Error metrics and channel-magnitude statistics."""

from __future__ import annotations

import numpy as np

from ..linalg import EigenDecomposition
from ..pipeline.calibration import CalibrationAccumulator


def reconstruction_error(reference, candidate) -> float:
    """Relative Frobenius error ``||ref - cand|| / ||ref||``.

    Exactly 0.0 for bitwise-equal inputs; ``inf`` when the reference is all
    zeros but the candidate is not.
    """
    ref = np.asarray(reference, dtype=np.float64)
    cand = np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {cand.shape}")
    if np.array_equal(ref, cand):
        return 0.0
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        return float("inf")
    return float(np.linalg.norm(ref - cand) / denom)


def rank_of(values) -> np.ndarray:
    """Average ranks (1 = smallest), ties sharing their mean rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    ranks[order] = np.arange(1, len(v) + 1)
    _, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
    if np.any(counts > 1):
        sums = np.bincount(inv, weights=ranks)
        ranks = (sums / counts)[inv]
    return ranks


def spearman(a, b) -> float:
    ra, rb = rank_of(a), rank_of(b)
    return float(np.corrcoef(ra, rb)[0, 1])


def magnitude_stats(acc: CalibrationAccumulator, site: str,
                    rotation: EigenDecomposition | None = None, top: int | None = 10) -> list:
    """Channels ranked by mean absolute activation.

    Without a rotation this uses the running ``sum |x|``; with one it projects
    the retained raw samples (``keep_samples=True``) onto the eigenvectors and
    adds each channel's eigenvalue. Rows are dicts with ``rank``,
    ``magnitude``, ``channel`` and, when rotated, ``eigenvalue``.
    """
    st = acc[site]
    if st.count == 0:
        raise ValueError(f"calibration site {site!r} is empty")
    if rotation is None:
        mags = st.mean_abs
    else:
        mags = np.mean(np.abs(st.sample_matrix() @ rotation.eigenvectors), axis=0)
    order = np.argsort(-mags, kind="stable")
    if top is not None:
        order = order[:top]
    rows = []
    for rank, ch in enumerate(order, start=1):
        row = {"rank": rank, "magnitude": float(mags[ch]), "channel": int(ch)}
        if rotation is not None:
            row["eigenvalue"] = float(rotation.eigenvalues[ch])
        rows.append(row)
    return rows


def top_ratio(rows) -> float:
    """Top-1 over top-2 magnitude of a :func:`magnitude_stats` table."""
    return rows[0]["magnitude"] / rows[1]["magnitude"]
