"""Approximation-bound machinery for the soft solvers.

Everything an exact-vs-soft tracking claim needs is computed here from
solver traces:

* min-gaps of the sorted vectors (distance from the winner for the OMP
  family, minimum pairwise distance for the IHT family),
* the per-family error-amplification constants,
* the admissible softsort temperature for a requested accuracy,
* and ``verify_theorem``, which runs both solvers and confirms the soft run
  tracks the exact one within that accuracy.

A zero (or near-zero, below ``TIE_TOL``) gap is a tie: the machinery then
refuses to emit a temperature bound instead of dividing by garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import coherence, operator_norm, ric_surrogate
from .solvers import SolverConfig, p_iht, p_omp, soft_iht, soft_omp

#: Gaps at or below this threshold are treated as exact ties.
TIE_TOL = 1e-13


class NoValidTauError(ValueError):
    """The requested accuracy violates a precondition of the bound."""


@dataclass
class GapReport:
    """Per-iteration and global minimum gaps of a solver trace."""

    family: str
    local_gaps: list
    global_gap: float
    has_tie: bool
    soft_gaps: list | None = None
    soft_global_gap: float | None = None


@dataclass
class BoundReport:
    """Outcome of one tracking check at a prescribed accuracy."""

    family: str
    epsilon: float
    constant: float
    tau: float
    amplifier: float
    gap: float
    precondition_ok: bool
    observed_max_error: float
    index_tracking_ok: bool
    satisfied: bool
    sigma_min_mode: str
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "family": self.family,
            "epsilon": self.epsilon,
            "constant": self.constant,
            "tau": self.tau,
            "amplifier": self.amplifier,
            "gap": self.gap,
            "precondition_ok": self.precondition_ok,
            "observed_max_error": self.observed_max_error,
            "index_tracking_ok": self.index_tracking_ok,
            "satisfied": self.satisfied,
            "sigma_min_mode": self.sigma_min_mode,
            "notes": list(self.notes),
        }


def _winner_gap(v: np.ndarray) -> float:
    """Distance between the largest entry and its closest competitor."""
    if v.size < 2:
        return math.inf
    top2 = np.partition(v, v.size - 2)[-2:]
    return float(top2[1] - top2[0])


def _pairwise_gap(v: np.ndarray) -> float:
    """Minimum |v_i - v_j| over distinct pairs, via one sort and a scan."""
    if v.size < 2:
        return math.inf
    s = np.sort(v)
    return float(np.min(np.diff(s)))


def omp_gaps(trace, soft_trace=None) -> GapReport:
    """Winner gaps of an OMP-family trace (optionally with soft-trace gaps)."""
    gaps = [_winner_gap(v) for v in trace.sort_targets]
    report = GapReport(
        family="omp",
        local_gaps=gaps,
        global_gap=min(gaps),
        has_tie=any(g <= TIE_TOL for g in gaps),
    )
    if soft_trace is not None:
        soft = [_winner_gap(v) for v in soft_trace.sort_targets]
        report.soft_gaps = soft
        report.soft_global_gap = min(soft)
    return report


def iht_gaps(trace, soft_trace=None) -> GapReport:
    """Pairwise min-gaps of an IHT-family trace."""
    gaps = [_pairwise_gap(v) for v in trace.sort_targets]
    report = GapReport(
        family="iht",
        local_gaps=gaps,
        global_gap=min(gaps),
        has_tie=any(g <= TIE_TOL for g in gaps),
    )
    if soft_trace is not None:
        soft = [_pairwise_gap(v) for v in soft_trace.sort_targets]
        report.soft_gaps = soft
        report.soft_global_gap = min(soft)
    return report


def omp_constant(
    a,
    y,
    n: int,
    sigma_min_mode: str = "empirical",
    trace=None,
    ric_mode: str = "exact",
    ric_samples: int = 1000,
) -> float:
    """Error-amplification constant of the OMP tracking bound after n steps.

        sqrt(2n) (N - 1) (sigma + (sqrt(n) + 1) ||A||) / sigma^2 * ||y||

    where sigma lower-bounds the smallest singular value of the selected
    submatrices: sqrt(1 - delta_n) in ``ric`` mode (restricted isometry, only
    tractable on small instances), or the smallest observed sigma_min over
    the trace's supports in ``empirical`` mode (tighter; the bound only ever
    consumes the realized supports).
    """
    a = np.asarray(a)
    y = np.asarray(y)
    if n < 1:
        raise ValueError("need at least one iteration")
    big_n = a.shape[1]
    if sigma_min_mode == "ric":
        delta = ric_surrogate(a, n, mode=ric_mode, n_samples=ric_samples).value
        if delta >= 1.0:
            raise ValueError(f"restricted isometry constant {delta:.3f} >= 1; bound hypothesis violated")
        sigma = math.sqrt(1.0 - delta)
    elif sigma_min_mode == "empirical":
        if trace is None or trace.supports is None:
            raise ValueError("empirical mode needs an OMP-family trace with supports")
        sigma = math.inf
        for sup in trace.supports[:n]:
            s_min = float(np.linalg.svd(a[:, sup], compute_uv=False)[-1])
            sigma = min(sigma, s_min)
        if sigma <= 0.0:
            raise ValueError("selected submatrix is singular; bound hypothesis violated")
    else:
        raise ValueError(f"unknown sigma_min_mode {sigma_min_mode!r}")
    norm_a = operator_norm(a)
    return float(
        math.sqrt(2 * n)
        * (big_n - 1)
        * (sigma + (math.sqrt(n) + 1.0) * norm_a)
        / sigma**2
        * np.linalg.norm(y)
    )


def _geometric_sum(ratio: float, n: int) -> float:
    """1 + ratio + ... + ratio^(n-1), +inf when the closed form overflows."""
    if abs(ratio - 1.0) <= 1e-12:
        return float(n)
    if ratio > 1.0 and n * math.log(ratio) > math.log(np.finfo(float).max) - 1.0:
        return math.inf
    return (ratio**n - 1.0) / (ratio - 1.0)


def iht_constant(a, y, trace, n: int) -> float:
    """Error-amplification constant of the IHT tracking bound after n steps.

        2 s N * geom(sL, n) * (||y|| + s mu max_k ||x^(k)||)

    with L = ||I - A*A||, mu the coherence of A, s the mask sparsity, and
    the max running over the exact iterates feeding steps 2..n. An
    overflowing geometric sum yields +inf (a vacuous but honest bound).
    """
    a = np.asarray(a)
    y = np.asarray(y)
    if n < 1:
        raise ValueError("need at least one iteration")
    if trace.masks is None:
        raise ValueError("need an IHT-family trace")
    s = int(round(float(np.sum(trace.masks[0]))))
    big_n = a.shape[1]
    lip = operator_norm(np.eye(big_n) - a.conj().T @ a)
    mu = coherence(a)
    geom = _geometric_sum(s * lip, n)
    x_max = max((float(np.linalg.norm(x)) for x in trace.iterates[1:n]), default=0.0)
    return float(2 * s * big_n * geom * (np.linalg.norm(y) + s * mu * x_max))


def tau_bound(gap: float, epsilon: float, amplifier: float, constant: float):
    """Largest admissible temperature for accuracy ``epsilon``.

        (gap - 2 * amplifier * epsilon) / log(constant / epsilon)

    where ``amplifier`` is ||A|| for the OMP family and L = ||I - A*A|| for
    the IHT family. Returns (value, checked_preconditions). Raises
    NoValidTauError naming the violated inequality.
    """
    checked = [
        f"0 < epsilon < gap / (2 * amplifier) = {gap / (2 * amplifier):.6e}",
        f"constant > epsilon (constant = {constant:.6e})",
    ]
    if not 0.0 < epsilon < gap / (2.0 * amplifier):
        raise NoValidTauError(
            f"epsilon={epsilon:.6e} violates 0 < epsilon < gap/(2*amplifier) "
            f"= {gap / (2.0 * amplifier):.6e}"
        )
    if not constant > epsilon:
        raise NoValidTauError(
            f"constant={constant:.6e} violates constant > epsilon={epsilon:.6e}"
        )
    value = (gap - 2.0 * amplifier * epsilon) / math.log(constant / epsilon)
    return float(value), checked


def _omp_tracking_ok(exact_trace, soft_trace) -> bool:
    """Row-wise argmax agreement of the exact and soft selection rows."""
    for j, row in zip(exact_trace.selected, soft_trace.soft_rows):
        if int(np.argmax(row)) != j:
            return False
    return True


def _iht_tracking_ok(exact_trace, soft_trace) -> bool:
    """Full descending-order agreement of the sorted vectors per iteration."""
    from .sortops import argsort_desc

    for v, v_soft in zip(exact_trace.sort_targets, soft_trace.sort_targets):
        if not np.array_equal(argsort_desc(v), argsort_desc(v_soft)):
            return False
    return True


def verify_theorem(family: str, a, y, cfg: SolverConfig, epsilon: float | None = None) -> BoundReport:
    """Run the exact solver, derive a temperature from its gaps, and check
    that the soft solver tracks it within epsilon.

    ``epsilon`` defaults to a quarter of the open-interval limit
    gap / (2 * amplifier). The report records the observed maximum iterate
    deviation, whether the soft run followed the exact selection order, and
    whether the accuracy claim held.
    """
    a = np.asarray(a)
    y = np.asarray(y)
    notes = []
    if family == "omp":
        exact = p_omp(a, y, cfg)
        gaps = omp_gaps(exact)
        amplifier = operator_norm(a)
        n_steps = cfg.k
    elif family == "iht":
        exact = p_iht(a, y, cfg)
        gaps = iht_gaps(exact)
        amplifier = operator_norm(np.eye(a.shape[1]) - a.conj().T @ a)
        n_steps = cfg.n_iter
        if cfg.eta != 1.0:
            notes.append("step size != 1: the stated constant presumes a unit gradient step")
    else:
        raise ValueError(f"unknown family {family!r}")

    if gaps.has_tie:
        return BoundReport(
            family=family,
            epsilon=float("nan") if epsilon is None else epsilon,
            constant=float("nan"),
            tau=float("nan"),
            amplifier=amplifier,
            gap=gaps.global_gap,
            precondition_ok=False,
            observed_max_error=float("nan"),
            index_tracking_ok=False,
            satisfied=False,
            sigma_min_mode="empirical",
            notes=notes + ["tie detected (zero min-gap); no temperature bound emitted"],
        )

    if epsilon is None:
        epsilon = gaps.global_gap / (4.0 * amplifier)

    if family == "omp":
        constant = omp_constant(a, y, n_steps, sigma_min_mode="empirical", trace=exact)
    else:
        constant = iht_constant(a, y, exact, n_steps)

    precondition_ok = 0.0 < epsilon < gaps.global_gap / (2.0 * amplifier) and constant > epsilon
    if not precondition_ok:
        return BoundReport(
            family=family,
            epsilon=epsilon,
            constant=constant,
            tau=float("nan"),
            amplifier=amplifier,
            gap=gaps.global_gap,
            precondition_ok=False,
            observed_max_error=float("nan"),
            index_tracking_ok=False,
            satisfied=False,
            sigma_min_mode="empirical",
            notes=notes + ["accuracy precondition failed; no temperature bound emitted"],
        )

    tau, checked = tau_bound(gaps.global_gap, epsilon, amplifier, constant)
    notes.extend(checked)

    soft_cfg = SolverConfig(
        k=cfg.k, eta=cfg.eta, n_iter=cfg.n_iter, tau=tau, weights=cfg.weights, x0=cfg.x0
    )
    soft = soft_omp(a, y, soft_cfg) if family == "omp" else soft_iht(a, y, soft_cfg)

    observed = max(
        float(np.linalg.norm(xe - xs)) for xe, xs in zip(exact.iterates, soft.iterates)
    )
    tracking = _omp_tracking_ok(exact, soft) if family == "omp" else _iht_tracking_ok(exact, soft)

    return BoundReport(
        family=family,
        epsilon=float(epsilon),
        constant=float(constant),
        tau=float(tau),
        amplifier=float(amplifier),
        gap=float(gaps.global_gap),
        precondition_ok=True,
        observed_max_error=observed,
        index_tracking_ok=tracking,
        satisfied=observed <= epsilon,
        sigma_min_mode="empirical",
        notes=notes,
    )


@dataclass
class ProjectorBoundCheck:
    """Frobenius-norm tracking of the stacked selection rows (OMP family)."""

    hypothesis_ok: bool
    reason: str
    n: int
    soft_norm: float
    soft_norm_bound: float
    diff_norm: float
    diff_bound: float
    ok: bool


def frobenius_bounds_check(trace_exact, trace_soft, tau: float) -> ProjectorBoundCheck:
    """Check the projector norms of an exact/soft OMP pair.

    Requires row-argmax agreement (otherwise returns a skipped report).
    Verifies ||soft rows||_F <= sqrt(n) and
    ||exact - soft||_F <= sqrt(2n) (N - 1) exp(-soft_gap / tau).
    """
    n = len(trace_soft.soft_rows)
    if not _omp_tracking_ok(trace_exact, trace_soft):
        return ProjectorBoundCheck(
            hypothesis_ok=False,
            reason="argmax rows disagree; bound hypothesis not met",
            n=n,
            soft_norm=float("nan"),
            soft_norm_bound=float("nan"),
            diff_norm=float("nan"),
            diff_bound=float("nan"),
            ok=False,
        )
    big_n = trace_soft.soft_rows[0].size
    soft_rows = np.stack(trace_soft.soft_rows)
    exact_rows = np.zeros_like(soft_rows)
    for i, j in enumerate(trace_exact.selected[:n]):
        exact_rows[i, j] = 1.0
    soft_gap = min(_winner_gap(v) for v in trace_soft.sort_targets[:n])
    soft_norm = float(np.linalg.norm(soft_rows))
    diff_norm = float(np.linalg.norm(exact_rows - soft_rows))
    diff_bound = float(math.sqrt(2 * n) * (big_n - 1) * math.exp(-soft_gap / tau))
    return ProjectorBoundCheck(
        hypothesis_ok=True,
        reason="",
        n=n,
        soft_norm=soft_norm,
        soft_norm_bound=math.sqrt(n),
        diff_norm=diff_norm,
        diff_bound=diff_bound,
        ok=(soft_norm <= math.sqrt(n) + 1e-9) and (diff_norm <= diff_bound + 1e-9),
    )


@dataclass
class SingleStepCheck:
    """One-step tracking inequality for the masked (IHT-style) update."""

    argsort_ok: bool
    lhs: float
    rhs: float
    slack: float
    ok: bool


def iht_single_step_check(a, y, x, x_tilde, k: int, tau: float) -> SingleStepCheck:
    """Evaluate the one-step bound for a unit-step masked update.

    Starting from an exact k-sparse x and a nearby x~, one exact and one
    soft thresholded step are taken; the deviation of the outputs must stay
    below 2 k N (k mu ||x||_inf + ||y||) exp(-gap~/tau) + k L ||x - x~||,
    provided the two sorted orders agree.
    """
    from .sortops import argsort_desc, softsort_top_rows

    a = np.asarray(a)
    y = np.asarray(y)
    x = np.asarray(x)
    x_tilde = np.asarray(x_tilde)
    big_n = a.shape[1]

    u = x + a.conj().T @ (y - a @ x)
    v = np.abs(u)
    u_tilde = x_tilde + a.conj().T @ (y - a @ x_tilde)
    v_tilde = np.abs(u_tilde)

    argsort_ok = bool(np.array_equal(argsort_desc(v), argsort_desc(v_tilde)))

    order = argsort_desc(v)
    q = np.zeros(big_n)
    q[order[:k]] = 1.0
    x_plus = q * u

    rows = softsort_top_rows(v_tilde, tau, k)
    x_tilde_plus = rows.sum(axis=0) * u_tilde

    lip = operator_norm(np.eye(big_n) - a.conj().T @ a)
    mu = coherence(a)
    gap_tilde = _pairwise_gap(v_tilde)

    lhs = float(np.linalg.norm(x_plus - x_tilde_plus))
    rhs = float(
        2 * k * big_n * (k * mu * np.max(np.abs(x)) + np.linalg.norm(y)) * math.exp(-gap_tilde / tau)
        + k * lip * np.linalg.norm(x - x_tilde)
    )
    slack = rhs - lhs
    return SingleStepCheck(argsort_ok=argsort_ok, lhs=lhs, rhs=rhs, slack=slack, ok=slack >= -1e-9)
