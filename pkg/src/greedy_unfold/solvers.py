"""Greedy sparse recovery solvers and their differentiable relaxations.

Six solvers share one trace format:

* ``omp`` / ``iht``          - the classical greedy iterations,
* ``p_omp`` / ``p_iht``      - the same iterations rewritten so every
                               selection is an explicit permutation row /
                               top-k mask (identical iterates),
* ``soft_omp`` / ``soft_iht`` - the permutation rows replaced with softsort
                               rows, making every step differentiable.

All solvers accept an optional nonnegative weight vector that biases the
selection (OMP family) or the thresholding order (IHT family) without
changing the retained values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import qr_lstsq
from .sortops import argsort_desc, softsort_first_row, softsort_top_rows


@dataclass
class SolverConfig:
    """Knobs shared by the solver family.

    k        : target sparsity (OMP family runs exactly k iterations)
    eta      : step size (IHT family)
    n_iter   : iteration budget (IHT family)
    tau      : softsort temperature (soft variants only)
    weights  : optional nonnegative per-index selection weights
    x0       : optional starting iterate (IHT family; defaults to zero)
    """

    k: int
    eta: float | None = None
    n_iter: int | None = None
    tau: float | None = None
    weights: np.ndarray | None = None
    x0: np.ndarray | None = None


@dataclass
class SolverTrace:
    """Per-iteration record of a solve.

    ``iterates[0]`` is the starting point; ``sort_targets[i]`` is the vector
    whose ordering drove iteration i+1. OMP-family traces carry supports and
    the selection order; IHT-family traces carry the 0/1 (or soft) masks.
    Soft solvers additionally keep the softsort rows they actually used.
    """

    iterates: list = field(default_factory=list)
    sort_targets: list = field(default_factory=list)
    supports: list | None = None
    selected: list | None = None
    masks: list | None = None
    residual_norms: list = field(default_factory=list)
    soft_rows: list | None = None
    ties: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def _check_weights(weights, n):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights shape {w.shape} does not match signal length {n}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return w


def _check_omp_cfg(a, cfg, soft):
    m, n = a.shape
    if cfg.k < 1 or cfg.k > min(m, n):
        raise ValueError(f"sparsity k={cfg.k} out of range [1, {min(m, n)}]")
    if soft:
        if cfg.tau is None or cfg.tau <= 0:
            raise ValueError("soft solvers need a positive temperature tau")
    elif cfg.tau is not None:
        raise ValueError("tau is only meaningful for soft solvers")
    return _check_weights(cfg.weights, n)


def _check_iht_cfg(a, cfg, soft):
    m, n = a.shape
    if cfg.k < 1 or cfg.k > n:
        raise ValueError(f"sparsity k={cfg.k} out of range [1, {n}]")
    if cfg.eta is None or cfg.eta <= 0:
        raise ValueError("IHT needs a positive step size eta")
    if cfg.n_iter is None or cfg.n_iter < 1:
        raise ValueError("IHT needs a positive iteration budget n_iter")
    if soft:
        if cfg.tau is None or cfg.tau <= 0:
            raise ValueError("soft solvers need a positive temperature tau")
    elif cfg.tau is not None:
        raise ValueError("tau is only meaningful for soft solvers")
    w = _check_weights(cfg.weights, n)
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0)
        if x0.shape != (n,):
            raise ValueError(f"x0 shape {x0.shape} does not match signal length {n}")
    return w


def _selection_target(a, ah, y, x, weights):
    """Weighted correlation magnitudes |W A*(y - Ax)| and the residual."""
    r = y - a @ x
    v = np.abs(ah @ r)
    if weights is not None:
        v = weights * v
    return v, r


def hard_threshold(u: np.ndarray, k: int, weights: np.ndarray | None = None) -> np.ndarray:
    """Keep the k largest-magnitude entries of ``u`` (by |w_j u_j| when weighted).

    The retained entries keep their original values; ties are broken toward
    the smaller index.
    """
    u = np.asarray(u)
    n = u.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    w = _check_weights(weights, n)
    key = np.abs(u)
    if w is not None:
        key = w * key
    keep = np.argsort(-key, kind="stable")[:k]
    out = np.zeros_like(u)
    out[keep] = u[keep]
    return out


def _top_index(v):
    """Argmax plus a flag for exact ties at the top."""
    j = int(np.argmax(v))
    tied = int(np.count_nonzero(v == v[j])) > 1
    return j, tied


def omp(a: np.ndarray, y: np.ndarray, cfg: SolverConfig) -> SolverTrace:
    """Orthogonal matching pursuit: greedy support growth + least squares.

    Each iteration adds the index with the largest (weighted) correlation to
    the residual, then re-solves the least-squares problem on the enlarged
    support. The output is exactly k-sparse.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    w = _check_omp_cfg(a, cfg, soft=False)
    m, n = a.shape
    ah = a.conj().T
    x = np.zeros(n, dtype=np.result_type(a.dtype, y.dtype))
    trace = SolverTrace(supports=[], selected=[])
    trace.iterates.append(x)
    trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    selected: list[int] = []
    for it in range(cfg.k):
        v, _ = _selection_target(a, ah, y, x, w)
        j, tied = _top_index(v)
        if tied:
            trace.ties.append(it)
        selected.append(j)
        z, _, _ = qr_lstsq(a[:, selected], y)
        x = np.zeros(n, dtype=z.dtype)
        x[selected] = z
        trace.sort_targets.append(v)
        trace.selected.append(j)
        trace.supports.append(np.array(sorted(selected), dtype=np.int64))
        trace.iterates.append(x)
        trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    return trace


def p_omp(a: np.ndarray, y: np.ndarray, cfg: SolverConfig) -> SolverTrace:
    """OMP with the selection written as stacked permutation rows.

    The growing row stack Pi carries one one-hot row per selected index;
    the solve runs on B = A Pi^T and maps back through Pi^T. The iterates
    coincide with ``omp``'s.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    w = _check_omp_cfg(a, cfg, soft=False)
    m, n = a.shape
    ah = a.conj().T
    x = np.zeros(n, dtype=np.result_type(a.dtype, y.dtype))
    pi = np.zeros((cfg.k, n))
    b = np.zeros((m, cfg.k), dtype=np.result_type(a.dtype, y.dtype))
    trace = SolverTrace(supports=[], selected=[])
    trace.iterates.append(x)
    trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    selected: list[int] = []
    for it in range(cfg.k):
        v, _ = _selection_target(a, ah, y, x, w)
        j, tied = _top_index(v)
        if tied:
            trace.ties.append(it)
        selected.append(j)
        row = np.zeros(n)
        row[j] = 1.0
        pi[it] = row
        b[:, it] = a @ row
        z, _, _ = qr_lstsq(b[:, : it + 1], y)
        x = pi[: it + 1].T @ z
        trace.sort_targets.append(v)
        trace.selected.append(j)
        trace.supports.append(np.array(sorted(selected), dtype=np.int64))
        trace.iterates.append(x)
        trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    return trace


def soft_omp(a: np.ndarray, y: np.ndarray, cfg: SolverConfig) -> SolverTrace:
    """OMP with each selection row replaced by a softsort first row.

    Only row 1 of the softsort matrix is ever formed (O(N) per iteration).
    The output is approximately k-sparse: dense but concentrated on the
    indices an exact run would select, with off-support mass controlled by
    the temperature.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    w = _check_omp_cfg(a, cfg, soft=True)
    m, n = a.shape
    ah = a.conj().T
    x = np.zeros(n, dtype=np.result_type(a.dtype, y.dtype))
    pi = np.zeros((cfg.k, n))
    b = np.zeros((m, cfg.k), dtype=np.result_type(a.dtype, y.dtype))
    trace = SolverTrace(soft_rows=[])
    trace.iterates.append(x)
    trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    for it in range(cfg.k):
        v, _ = _selection_target(a, ah, y, x, w)
        row = softsort_first_row(v, cfg.tau)
        pi[it] = row
        b[:, it] = a @ row
        z, _, _ = qr_lstsq(b[:, : it + 1], y)
        x = pi[: it + 1].T @ z
        trace.sort_targets.append(v)
        trace.soft_rows.append(row)
        trace.iterates.append(x)
        trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    return trace


def iht(a: np.ndarray, y: np.ndarray, cfg: SolverConfig) -> SolverTrace:
    """Iterative hard thresholding: gradient step + best k-term projection.

    Runs exactly ``cfg.n_iter`` iterations of
    ``x <- H_k(x + eta A*(y - Ax))``; divergence shows up in the recorded
    residual norms rather than as an error.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    w = _check_iht_cfg(a, cfg, soft=False)
    m, n = a.shape
    ah = a.conj().T
    dtype = np.result_type(a.dtype, y.dtype)
    x = np.zeros(n, dtype=dtype) if cfg.x0 is None else np.asarray(cfg.x0, dtype=dtype)
    trace = SolverTrace(masks=[])
    trace.iterates.append(x)
    trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    for _ in range(cfg.n_iter):
        r = y - a @ x
        u = x + cfg.eta * (ah @ r)
        v = np.abs(u)
        if w is not None:
            v = w * v
        keep = np.argsort(-v, kind="stable")[: cfg.k]
        x = np.zeros_like(u)
        x[keep] = u[keep]
        mask = np.zeros(n)
        mask[keep] = 1.0
        trace.sort_targets.append(v)
        trace.masks.append(mask)
        trace.iterates.append(x)
        trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    return trace


def p_iht(a: np.ndarray, y: np.ndarray, cfg: SolverConfig) -> SolverTrace:
    """IHT with the thresholding written as a top-k permutation-row mask.

    The mask is the sum of the first k rows of the descending permutation
    matrix of |u|, applied as a pointwise multiplier. Iterates coincide with
    ``iht``'s.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    w = _check_iht_cfg(a, cfg, soft=False)
    m, n = a.shape
    ah = a.conj().T
    dtype = np.result_type(a.dtype, y.dtype)
    x = np.zeros(n, dtype=dtype) if cfg.x0 is None else np.asarray(cfg.x0, dtype=dtype)
    trace = SolverTrace(masks=[])
    trace.iterates.append(x)
    trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    for _ in range(cfg.n_iter):
        r = y - a @ x
        u = x + cfg.eta * (ah @ r)
        v = np.abs(u)
        if w is not None:
            v = w * v
        order = argsort_desc(v)
        q = np.zeros(n)
        q[order[: cfg.k]] = 1.0
        x = q * u
        trace.sort_targets.append(v)
        trace.masks.append(q)
        trace.iterates.append(x)
        trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    return trace


def soft_iht(a: np.ndarray, y: np.ndarray, cfg: SolverConfig) -> SolverTrace:
    """IHT with the top-k mask replaced by summed softsort rows.

    Only the first k rows of the softsort matrix are materialized; their sum
    is the smooth mask (entries in [0, k]) multiplying the gradient-step
    vector.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    w = _check_iht_cfg(a, cfg, soft=True)
    m, n = a.shape
    ah = a.conj().T
    dtype = np.result_type(a.dtype, y.dtype)
    x = np.zeros(n, dtype=dtype) if cfg.x0 is None else np.asarray(cfg.x0, dtype=dtype)
    trace = SolverTrace(masks=[], soft_rows=[])
    trace.iterates.append(x)
    trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    for _ in range(cfg.n_iter):
        r = y - a @ x
        u = x + cfg.eta * (ah @ r)
        v = np.abs(u)
        if w is not None:
            v = w * v
        rows = softsort_top_rows(v, cfg.tau, cfg.k)
        q = rows.sum(axis=0)
        x = q * u
        trace.sort_targets.append(v)
        trace.masks.append(q)
        trace.soft_rows.append(rows)
        trace.iterates.append(x)
        trace.residual_norms.append(float(np.linalg.norm(y - a @ x)))
    return trace
