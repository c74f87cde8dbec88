"""Weighted median and the weighted-MAD depth normalizer.

The normalizer makes two depth maps comparable regardless of any positive
affine transform between them: subtract the weighted median, divide by the
weighted median absolute deviation. Low-weight pixels barely influence the
statistics, which is the point: unreliable regions must not distort the
normalization of everything else.
"""

from __future__ import annotations

import numpy as np

# Floor on the MAD so the normalizer stays finite on (near-)constant maps.
MAD_EPS = 1e-6


def weighted_median(values, weights) -> float:
    """Smallest value whose cumulative weight reaches half the total.

    Samples are sorted by value (stable), so the result is always one of
    the inputs and deterministic under permutation.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("weighted_median of empty input")
    if values.shape != weights.shape:
        raise ValueError(f"length mismatch: {values.shape} vs {weights.shape}")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    total = float(weights.sum())
    if total <= 0:
        raise ValueError("total weight must be positive")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, 0.5 * total, side="left"))
    return float(values[order[min(idx, values.size - 1)]])


def wmad_stats(values, weights) -> tuple[float, float]:
    """(weighted median, max(weighted MAD, MAD_EPS)) of a value map."""
    m = weighted_median(values, weights)
    s = weighted_median(np.abs(np.asarray(values, dtype=np.float64) - m), weights)
    return m, max(s, MAD_EPS)


def wmad_normalize(values, weights) -> np.ndarray:
    """Center by weighted median, scale by weighted MAD (floored).

    Invariant under ``values -> a * values + b`` for any a > 0, which is
    what makes the depth comparison scale- and shift-free.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.shape != weights.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {weights.shape}")
    m, s = wmad_stats(values, weights)
    return (values - m) / s
