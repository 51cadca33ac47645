"""Exact and relaxed sorting machinery.

``argsort_desc`` / ``permutation_matrix`` implement descending argsort and
its permutation-matrix form. ``softsort`` is the temperature-controlled
row-stochastic relaxation: row i is a softmax over the negative distances
between the i-th largest value and every entry, so it peaks where the sorted
and unsorted vectors coincide and sharpens toward the exact permutation as
the temperature tends to zero.

Ties are broken deterministically (smaller original index wins) so no input
ever aborts; gap-based diagnostics downstream report a zero gap instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_real_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a nonempty 1-D real vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("sort input must be finite")
    return v


def argsort_desc(v) -> np.ndarray:
    """Indices sorting ``v`` in descending order (stable; ties keep lower index first)."""
    v = _as_real_vector(v)
    return np.argsort(-v, kind="stable")


def permutation_matrix(v) -> np.ndarray:
    """0/1 matrix P with P @ v = sort(v) and P @ (1..N) = 1-based argsort(v)."""
    order = argsort_desc(v)
    n = order.size
    p = np.zeros((n, n))
    p[np.arange(n), order] = 1.0
    return p


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction.

    For softsort rows the row maximum is exactly 0 (it occurs where the
    sorted value meets its own entry), so the subtraction is an identity
    that only guards against degenerate inputs.
    """
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SoftPermutation:
    """Row-stochastic relaxation of a permutation matrix.

    The temperature that produced the matrix travels with it so downstream
    bound checks can audit which relaxation they are looking at.
    """

    matrix: np.ndarray
    tau: float


def _soft_rows(v: np.ndarray, tau: float, k: int):
    """First ``k`` softsort rows plus the pivots (sorted original indices)."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    order = argsort_desc(v)
    pivots = order[:k]
    logits = -np.abs(v[pivots][:, None] - v[None, :]) / tau
    return softmax_rows(logits), pivots


def softsort(v, tau: float) -> SoftPermutation:
    """Full N x N softsort matrix of ``v`` at temperature ``tau``."""
    v = _as_real_vector(v)
    rows, _ = _soft_rows(v, tau, v.size)
    return SoftPermutation(rows, float(tau))


def softsort_first_row(v, tau: float) -> np.ndarray:
    """Row 1 of the softsort matrix, computed without materializing N x N.

    Equals softmax(-|v_max - v| / tau) where v_max is the largest entry.
    """
    v = _as_real_vector(v)
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    j = int(np.argmax(v))
    logits = -np.abs(v[j] - v) / tau
    return softmax_rows(logits)


def softsort_top_rows(v, tau: float, k: int) -> np.ndarray:
    """First ``k`` softsort rows, the only part the masked updates consume."""
    v = _as_real_vector(v)
    if not 1 <= k <= v.size:
        raise ValueError(f"k={k} out of range [1, {v.size}]")
    rows, _ = _soft_rows(v, tau, k)
    return rows


def top_k_mask(p, k: int) -> np.ndarray:
    """Sum of the first ``k`` rows of a (soft) permutation matrix.

    For an exact permutation this is the 0/1 mask selecting the k largest
    entries of the source vector; for a soft permutation it is the smooth
    mask with entries in [0, k].
    """
    mat = p.matrix if isinstance(p, SoftPermutation) else np.asarray(p)
    n = mat.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    return mat[:k].sum(axis=0)
