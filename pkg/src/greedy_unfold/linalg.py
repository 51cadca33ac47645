"""Dense linear algebra for the recovery algorithms and their error constants.

Conventions used across the package:

* vectors are 1-D ``float64`` or ``complex128`` numpy arrays,
* matrices are 2-D arrays of a homogeneous scalar field (a matrix is either
  all-real or all-complex; mixed arithmetic promotes to complex),
* the least-squares path is Householder QR; the normal equations appear only
  as an independent oracle inside the test suite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

#: Relative rank tolerance for least-squares solves. A QR factor whose
#: smallest diagonal magnitude falls at or below ``RANK_RTOL * ||B||_F`` is
#: treated as rank deficient. (The Frobenius norm stands in for the operator
#: norm here; they differ by at most sqrt(n), immaterial at this scale.)
RANK_RTOL = 1e-12

#: Exact restricted-isometry scans are refused above this support count.
RIC_EXACT_LIMIT = 10**6


class RankDeficientError(ValueError):
    """Least-squares matrix is numerically rank deficient."""

    def __init__(self, pivot: float, tol: float):
        self.pivot = float(pivot)
        self.tol = float(tol)
        super().__init__(
            f"rank-deficient least-squares matrix: smallest QR pivot "
            f"{self.pivot:.3e} <= tolerance {self.tol:.3e}"
        )


class PowerIterationError(RuntimeError):
    """Operator-norm power iteration failed to converge."""

    def __init__(self, last: float, previous: float, iterations: int):
        self.last = float(last)
        self.previous = float(previous)
        super().__init__(
            f"power iteration did not converge in {iterations} iterations; "
            f"last two Rayleigh quotients: {previous!r}, {last!r}"
        )


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Dense matrix-vector product with an explicit shape check."""
    a = np.asarray(a)
    v = np.asarray(v)
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ValueError(f"matvec shape mismatch: matrix {a.shape} x vector {v.shape}")
    return a @ v


def qr_lstsq(b: np.ndarray, y: np.ndarray, rank_rtol: float = RANK_RTOL):
    """Least squares via reduced Householder QR, returning (z, Q, R).

    Raises RankDeficientError when the smallest |R_ii| falls below
    ``rank_rtol * ||B||_F``.
    """
    b = np.asarray(b)
    y = np.asarray(y)
    if b.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {b.shape}")
    m, n = b.shape
    if m < n:
        raise ValueError(f"least squares needs rows >= cols, got {b.shape}")
    if y.shape != (m,):
        raise ValueError(f"rhs shape {y.shape} does not match matrix {b.shape}")
    q, r = np.linalg.qr(b, mode="reduced")
    pivots = np.abs(np.diagonal(r))
    tol = rank_rtol * np.linalg.norm(b)
    smallest = float(pivots.min()) if pivots.size else 0.0
    if smallest <= tol:
        raise RankDeficientError(smallest, tol)
    z = solve_triangular(r, q.conj().T @ y, lower=False, check_finite=False)
    return z, q, r


def least_squares(b: np.ndarray, y: np.ndarray, rank_rtol: float = RANK_RTOL) -> np.ndarray:
    """Minimizer of ||y - Bz||_2 for a full-column-rank B (rows >= cols)."""
    z, _, _ = qr_lstsq(b, y, rank_rtol)
    return z


def operator_norm(a: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value via power iteration on A*A.

    The start vector is the normalized all-ones vector, so the result is
    reproducible bit-for-bit given A.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"operator_norm needs a nonempty matrix, got shape {a.shape}")
    n = a.shape[1]
    x = np.full(n, 1.0 / math.sqrt(n))
    if np.iscomplexobj(a):
        x = x.astype(np.complex128)
    prev = None
    rq = 0.0
    for _ in range(max_iter):
        z = a.conj().T @ (a @ x)
        rq = float(np.real(np.vdot(x, z)))
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            return 0.0
        x = z / nz
        if prev is not None and abs(rq - prev) <= tol * max(abs(rq), 1e-300):
            return math.sqrt(max(rq, 0.0))
        prev = rq
    raise PowerIterationError(rq, prev if prev is not None else math.nan, max_iter)


def coherence(a: np.ndarray) -> float:
    """Largest |<a_i, a_j>| over distinct columns (columns must be nonzero)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[1] < 2:
        raise ValueError(f"coherence needs at least two columns, got shape {a.shape}")
    col_norms = np.linalg.norm(a, axis=0)
    if np.any(col_norms == 0.0):
        raise ValueError("coherence is undefined for matrices with a zero column")
    gram = np.abs(a.conj().T @ a)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max())


@dataclass
class RicEstimate:
    """Restricted-isometry estimate for one sparsity level.

    ``lower_bound_only`` is True for sampled (monte_carlo) scans, which can
    only bound the true constant from below.
    """

    value: float
    sparsity: int
    mode: str
    n_supports: int
    lower_bound_only: bool

    def __float__(self) -> float:
        return self.value


def _support_distortion(a: np.ndarray, support) -> float:
    sv = np.linalg.svd(a[:, list(support)], compute_uv=False)
    return max(abs(sv[0] ** 2 - 1.0), abs(1.0 - sv[-1] ** 2))


def ric_surrogate(
    a: np.ndarray,
    s: int,
    mode: str = "exact",
    n_samples: int = 1000,
    seed: int = 0,
) -> RicEstimate:
    """Restricted-isometry constant of order ``s``.

    ``exact`` mode scans every support of size s (refused when the count
    exceeds RIC_EXACT_LIMIT); ``monte_carlo`` scans ``n_samples`` seeded
    random supports and therefore yields a lower bound.
    """
    a = np.asarray(a)
    n = a.shape[1]
    if not 1 <= s <= n:
        raise ValueError(f"sparsity {s} out of range for {n} columns")
    if mode == "exact":
        count = math.comb(n, s)
        if count > RIC_EXACT_LIMIT:
            raise ValueError(
                f"exact restricted-isometry scan over {count} supports exceeds "
                f"{RIC_EXACT_LIMIT}; use mode='monte_carlo'"
            )
        value = max(_support_distortion(a, sup) for sup in itertools.combinations(range(n), s))
        return RicEstimate(float(value), s, "exact", count, lower_bound_only=False)
    if mode == "monte_carlo":
        from .rng import substream

        rng = substream(seed, "ric", s)
        value = 0.0
        for _ in range(n_samples):
            sup = rng.choice(n, size=s, replace=False)
            value = max(value, _support_distortion(a, sup))
        return RicEstimate(float(value), s, "monte_carlo", n_samples, lower_bound_only=True)
    raise ValueError(f"unknown mode {mode!r}; expected 'exact' or 'monte_carlo'")


def validate_support(indices, n: int) -> np.ndarray:
    """Check a support (strictly increasing, within [0, n)) and return it."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"support must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"support index out of range [0, {n}): {idx}")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError(f"support must be strictly increasing, got {idx}")
    return idx


def restrict_columns(a: np.ndarray, support, n: int | None = None) -> np.ndarray:
    """Submatrix of the columns indexed by ``support``."""
    a = np.asarray(a)
    idx = validate_support(support, a.shape[1])
    return a[:, idx]


def embed(xs: np.ndarray, support, n: int) -> np.ndarray:
    """Zero-padded vector equal to ``xs`` on ``support``."""
    xs = np.asarray(xs)
    idx = validate_support(support, n)
    if xs.shape != (idx.size,):
        raise ValueError(f"values shape {xs.shape} does not match support of size {idx.size}")
    out = np.zeros(n, dtype=xs.dtype)
    out[idx] = xs
    return out
