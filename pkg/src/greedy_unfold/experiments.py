"""Problem generation, the temperature-sweep study, and network training.

Random compressed-sensing setup: an s-sparse real signal with standard
normal nonzeros is observed through A = A'/sqrt(m), where A' is an i.i.d.
Gaussian matrix (real) or a partial Fourier matrix (complex), plus Gaussian
noise scaled by sigma/sqrt(m). Every draw comes from a named substream of
one user seed, so runs are bit-reproducible regardless of worker counts.

The training pipeline unrolls the soft solvers with a single weight vector
shared across layers, optimizes the mean squared reconstruction loss with
RMSprop under global gradient-norm clipping, clamps the weights to stay
nonnegative, and snapshots checkpoints; the final model is the checkpoint
with the best training MSE.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np

from .batched import batch_loss_and_grad, batch_net_forward
from .gradients import NetSpec
from .rng import substream
from .solvers import SolverConfig, iht, omp, soft_iht, soft_omp

#: Additive guard inside logarithms of relative errors.
LOG_GUARD = 1e-12


@dataclass
class InstanceParams:
    """Shape of one random compressed-sensing task."""

    n: int
    m: int
    s: int
    sigma: float = 0.0
    family: str = "gaussian"  # | "fourier"
    superset_factor: int | None = None
    normalize_columns: bool = False

    def validate(self):
        if not (1 <= self.s <= self.n and 1 <= self.m):
            raise ValueError(f"invalid dimensions n={self.n} m={self.m} s={self.s}")
        if self.family not in ("gaussian", "fourier"):
            raise ValueError(f"unknown matrix family {self.family!r}")
        if self.superset_factor is not None and self.superset_factor * self.s > self.n:
            raise ValueError("superset would exceed the ambient dimension")


@dataclass
class ProblemInstance:
    """One generated task: y = A x_true + e with known support."""

    a: np.ndarray
    x_true: np.ndarray
    support: np.ndarray
    superset: np.ndarray | None
    y: np.ndarray
    noise_sigma: float
    matrix_family: str
    seed: int


def _draw_matrix(params: InstanceParams, rng) -> np.ndarray:
    m, n = params.m, params.n
    if params.family == "gaussian":
        a = rng.standard_normal((m, n)) / math.sqrt(m)
    else:
        freqs = np.arange(n) - (n // 2 - 1)
        rows = np.sort(rng.choice(freqs, size=m, replace=False))
        grid = np.arange(n)
        a = np.exp(-2j * np.pi * np.outer(rows, grid) / n) / math.sqrt(m)
    if params.normalize_columns:
        a = a / np.linalg.norm(a, axis=0)
    return a


def _draw_superset(params: InstanceParams, rng) -> np.ndarray | None:
    if params.superset_factor is None:
        return None
    size = params.superset_factor * params.s
    return np.sort(rng.choice(params.n, size=size, replace=False))


def _draw_signal_and_noise(params: InstanceParams, rng, superset):
    pool = superset if superset is not None else np.arange(params.n)
    support = np.sort(rng.choice(pool, size=params.s, replace=False))
    x = np.zeros(params.n)
    x[support] = rng.standard_normal(params.s)
    noise = rng.standard_normal(params.m)
    if params.family == "fourier":
        noise = (noise + 1j * rng.standard_normal(params.m)) / math.sqrt(2)
    return support, x, noise


def generate_instance(params: InstanceParams, seed: int, index: int = 0) -> ProblemInstance:
    """One fully seeded instance (matrix, superset, signal, and noise)."""
    params.validate()
    a = _draw_matrix(params, substream(seed, index, "matrix"))
    superset = _draw_superset(params, substream(seed, index, "superset"))
    support, x, noise = _draw_signal_and_noise(
        params, substream(seed, index, "signal"), superset
    )
    # noise entries are N(0, sigma^2/m): scale the unit draw once
    y = a @ x + (params.sigma / math.sqrt(params.m)) * noise
    return ProblemInstance(a, x, support, superset, y, params.sigma, params.family, seed)


def generate_dataset(
    params: InstanceParams, seed: int, count: int, split: str = "train"
) -> list[ProblemInstance]:
    """``count`` instances sharing one matrix (and superset) per seed.

    The matrix and superset are drawn once; each sample then draws its own
    support within the superset, nonzero values, and noise from the stream
    ``(seed, split, i)``.
    """
    params.validate()
    a = _draw_matrix(params, substream(seed, "matrix"))
    superset = _draw_superset(params, substream(seed, "superset"))
    out = []
    for i in range(count):
        support, x, noise = _draw_signal_and_noise(
            params, substream(seed, split, i), superset
        )
        y = a @ x + (params.sigma / math.sqrt(params.m)) * noise
        out.append(ProblemInstance(a, x, support, superset, y, params.sigma, params.family, seed))
    return out


def oracle_weights(superset, n: int) -> np.ndarray:
    """0/1 weights marking the superset known to contain every support."""
    w = np.zeros(n)
    w[np.asarray(superset, dtype=np.int64)] = 1.0
    return w


# ---------------------------------------------------------------------------
# Temperature sweep
# ---------------------------------------------------------------------------


@dataclass
class Exp1Row:
    family: str
    trial: int
    n_iter: int
    tau: float
    rel_error: float


@dataclass
class Exp1Stat:
    family: str
    n_iter: int
    tau: float
    log_mean: float
    log_std: float
    n_ok: int
    n_failed: int
    std_degenerate: bool = False


@dataclass
class ExperimentStats:
    """Aggregate statistics of an experiment run.

    Temperature sweeps fill ``exp1``; evaluation runs fill the per-sample
    errors and boxplot quantiles; training runs fill the MSE curves.
    """

    exp1: list | None = None
    errors: np.ndarray | None = None
    quantiles: dict | None = None
    mse_train: list | None = None
    mse_val: list | None = None


def _run_family(solver_family, a, y, cfg_base, n_iter, tau=None, weights=None):
    if solver_family == "omp":
        cfg = SolverConfig(k=n_iter, tau=tau, weights=weights)
        return (soft_omp if tau is not None else omp)(a, y, cfg)
    cfg = SolverConfig(
        k=cfg_base.k, eta=cfg_base.eta, n_iter=n_iter, tau=tau, weights=weights
    )
    return (soft_iht if tau is not None else iht)(a, y, cfg)


def experiment_one(
    params: InstanceParams,
    solver_family: str,
    tau_grid,
    iter_counts,
    n_trials: int,
    seed: int,
    eta: float = 0.6,
    threads: int = 1,
):
    """Relative soft-vs-exact error sweep over the temperature grid.

    For each trial an instance is generated, the exact solver is run to the
    largest requested iteration count, and the soft solver is re-run at
    every temperature; rows record
    ||x_exact^(n) - x_soft^(n)|| / ||x_exact^(n)||. Statistics aggregate
    log10(error + 1e-12) per (iteration count, temperature). Failed trials
    are excluded from the aggregates but counted.
    """
    if solver_family not in ("omp", "iht"):
        raise ValueError(f"unknown solver family {solver_family!r}")
    taus = [float(t) for t in tau_grid]
    counts = sorted(int(n) for n in iter_counts)
    max_n = counts[-1]
    cfg_base = SolverConfig(k=params.s, eta=eta)

    def run_trial(trial):
        inst = generate_instance(params, seed, index=trial)
        exact = _run_family(solver_family, inst.a, inst.y, cfg_base, max_n)
        rows = []
        for tau in taus:
            soft = _run_family(solver_family, inst.a, inst.y, cfg_base, max_n, tau=tau)
            for n in counts:
                xe = exact.iterates[n]
                xs = soft.iterates[n]
                err = float(np.linalg.norm(xe - xs) / np.linalg.norm(xe))
                rows.append(Exp1Row(solver_family, trial, n, tau, err))
        return rows

    results: list = [None] * n_trials
    failures: list = []
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(run_trial, t): t for t in range(n_trials)}
            for fut in concurrent.futures.as_completed(futures):
                t = futures[fut]
                try:
                    results[t] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                    failures.append((t, repr(exc)))
    else:
        for t in range(n_trials):
            try:
                results[t] = run_trial(t)
            except Exception as exc:  # noqa: BLE001
                failures.append((t, repr(exc)))

    rows = [row for trial_rows in results if trial_rows is not None for row in trial_rows]
    n_failed = len(failures)

    stats = []
    for n in counts:
        for tau in taus:
            errs = np.array(
                [r.rel_error for r in rows if r.n_iter == n and r.tau == tau]
            )
            logs = np.log10(errs + LOG_GUARD)
            mean = float(logs.mean())
            degenerate = errs.size < 2
            std = 0.0 if degenerate else float(logs.std(ddof=1))
            stats.append(
                Exp1Stat(solver_family, n, tau, mean, std, int(errs.size), n_failed, degenerate)
            )
    return rows, stats, failures


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Hyperparameters of a training run.

    ``layers``/``tau``/``k``/``eta`` define the unrolled architecture;
    the rest drive RMSprop (decay and epsilon are conventional defaults,
    not tuned values), gradient-norm clipping, checkpoint cadence, and the
    nonnegativity projection of the shared weights.
    """

    family: str
    layers: int
    tau: float = 1e-3
    k: int | None = None
    eta: float | None = None
    learning_rate: float = 1e-2
    n_epoch: int = 1000
    n_checkpt: int = 10
    batch_size: int = 64
    clip_max_norm: float = 1.0
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    nonneg: bool = True

    def __post_init__(self):
        if self.clip_max_norm <= 0:
            raise ValueError("clip_max_norm must be positive")
        if self.n_checkpt < 1 or self.n_epoch < 0 or self.batch_size < 1:
            raise ValueError("n_checkpt, n_epoch, and batch_size must be positive")

    def net(self) -> NetSpec:
        return NetSpec(
            family=self.family, layers=self.layers, tau=self.tau, k=self.k, eta=self.eta
        )


@dataclass
class Checkpoint:
    epoch: int
    weights: np.ndarray
    mse_train: float
    mse_val: float


@dataclass
class EpochLog:
    epoch: int
    mse_train: float
    mse_val: float
    grad_norm: float
    checkpointed: bool


@dataclass
class TrainState:
    """Weights, optimizer accumulator, and the checkpoint ledger."""

    w: np.ndarray
    rms_acc: np.ndarray
    epoch: int
    checkpoints: list
    best_index: int

    @property
    def best(self) -> Checkpoint:
        return self.checkpoints[self.best_index]


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss), with epoch/batch context."""


def _shared_matrix(instances) -> np.ndarray:
    a = instances[0].a
    if not all(inst.a is a for inst in instances):
        raise ValueError("batched evaluation needs instances sharing one matrix")
    return a


def dataset_mse(net: NetSpec, w: np.ndarray, instances, chunk: int = 128) -> float:
    """Mean squared reconstruction loss of the network over a dataset."""
    a = _shared_matrix(instances)
    total = 0.0
    for start in range(0, len(instances), chunk):
        block = instances[start : start + chunk]
        ys = np.stack([inst.y for inst in block], axis=1)
        out = batch_net_forward(net, w, a, ys)
        xs = np.stack([inst.x_true for inst in block], axis=1)
        d = out - xs
        total += float(np.real(d * np.conj(d)).sum())
    return total / len(instances)


def _batch_gradient(net, w, batch):
    a = _shared_matrix(batch)
    ys = np.stack([inst.y for inst in batch], axis=1)
    xs = np.stack([inst.x_true for inst in batch], axis=1)
    losses, grad, _ = batch_loss_and_grad(net, w, a, ys, xs)
    return grad, float(np.mean(losses))


def train_network(train_set, val_set, cfg: TrainConfig, seed: int):
    """Mini-batch RMSprop training of the shared weight vector.

    Weights start uniform at one; every optimizer step applies global
    gradient-norm clipping, the RMSprop rescaling, and (by default) a
    clamp to the nonnegative orthant. Every ``n_checkpt`` epochs the state
    is snapshotted together with the end-of-epoch train/validation MSE;
    the best-training-MSE snapshot is the final model.
    Returns (TrainState, per-epoch log rows).
    """
    n = train_set[0].a.shape[1]
    net = cfg.net()
    net.validate(n)
    w = np.ones(n)
    acc = np.zeros(n)

    mse_tr = dataset_mse(net, w, train_set)
    mse_val = dataset_mse(net, w, val_set)
    checkpoints = [Checkpoint(0, w.copy(), mse_tr, mse_val)]
    logs = [EpochLog(0, mse_tr, mse_val, 0.0, True)]

    n_train = len(train_set)
    for epoch in range(1, cfg.n_epoch + 1):
        perm = substream(seed, "shuffle", epoch).permutation(n_train)
        grad_norms = []
        for start in range(0, n_train, cfg.batch_size):
            batch = [train_set[i] for i in perm[start : start + cfg.batch_size]]
            grad, batch_loss = _batch_gradient(net, w, batch)
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            gnorm = float(np.linalg.norm(grad))
            grad_norms.append(gnorm)
            if gnorm > cfg.clip_max_norm:
                grad = grad * (cfg.clip_max_norm / gnorm)
            acc = cfg.rms_decay * acc + (1.0 - cfg.rms_decay) * grad**2
            w = w - cfg.learning_rate * grad / (np.sqrt(acc) + cfg.rms_eps)
            if cfg.nonneg:
                w = np.maximum(w, 0.0)
        mse_tr = dataset_mse(net, w, train_set)
        mse_val = dataset_mse(net, w, val_set)
        checkpointed = epoch % cfg.n_checkpt == 0
        if checkpointed:
            checkpoints.append(Checkpoint(epoch, w.copy(), mse_tr, mse_val))
        logs.append(EpochLog(epoch, mse_tr, mse_val, float(np.mean(grad_norms)), checkpointed))

    best = min(range(len(checkpoints)), key=lambda i: checkpoints[i].mse_train)
    state = TrainState(w=w, rms_acc=acc, epoch=cfg.n_epoch, checkpoints=checkpoints, best_index=best)
    return state, logs


def relative_errors(net: NetSpec, w: np.ndarray, instances, chunk: int = 128) -> np.ndarray:
    """Per-sample relative reconstruction errors of a weighted network."""
    a = _shared_matrix(instances)
    errs = []
    for start in range(0, len(instances), chunk):
        block = instances[start : start + chunk]
        ys = np.stack([inst.y for inst in block], axis=1)
        out = batch_net_forward(net, w, a, ys)
        xs = np.stack([inst.x_true for inst in block], axis=1)
        errs.extend(
            np.linalg.norm(out - xs, axis=0) / np.linalg.norm(xs, axis=0)
        )
    return np.array(errs)


def classical_errors(family: str, instances, k: int, eta: float | None = None, n_iter: int | None = None) -> np.ndarray:
    """Relative errors of the exact unweighted solver on the same data."""
    errs = []
    for inst in instances:
        if family == "omp":
            trace = omp(inst.a, inst.y, SolverConfig(k=k))
        else:
            trace = iht(inst.a, inst.y, SolverConfig(k=k, eta=eta, n_iter=n_iter))
        errs.append(
            float(np.linalg.norm(trace.final - inst.x_true) / np.linalg.norm(inst.x_true))
        )
    return np.array(errs)


def boxplot_quantiles(errors: np.ndarray) -> dict:
    """min/q1/median/q3/max plus 1.5 IQR whiskers and outliers.

    Quartiles use linear interpolation (numpy's default convention).
    """
    q1, med, q3 = (float(np.quantile(errors, q)) for q in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = errors[(errors >= lo_fence) & (errors <= hi_fence)]
    outliers = errors[(errors < lo_fence) | (errors > hi_fence)]
    return {
        "min": float(errors.min()),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(errors.max()),
        "whisker_low": float(inside.min()) if inside.size else float(errors.min()),
        "whisker_high": float(inside.max()) if inside.size else float(errors.max()),
        "outliers": [float(o) for o in np.sort(outliers)],
    }


def evaluate_network(weights: np.ndarray, cfg: TrainConfig, instances) -> ExperimentStats:
    """Validation-set relative errors and their boxplot summary."""
    net = cfg.net()
    errs = relative_errors(net, weights, instances)
    return ExperimentStats(errors=errs, quantiles=boxplot_quantiles(errs))


# ---------------------------------------------------------------------------
# CSV emission (schemas consumed by the figure scripts)
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_exp1_errors(path, rows: list[Exp1Row]) -> None:
    write_csv(
        path,
        ["family", "trial", "n_iter", "tau", "rel_error"],
        ([r.family, r.trial, r.n_iter, r.tau, r.rel_error] for r in rows),
    )


def write_exp1_stats(path, stats: list[Exp1Stat]) -> None:
    write_csv(
        path,
        ["family", "n_iter", "tau", "log_mean", "log_std", "n_ok", "n_failed"],
        ([s.family, s.n_iter, s.tau, s.log_mean, s.log_std, s.n_ok, s.n_failed] for s in stats),
    )


def write_training_log(path, logs: list[EpochLog]) -> None:
    write_csv(
        path,
        ["epoch", "mse_train", "mse_val", "grad_norm", "checkpointed"],
        ([l.epoch, l.mse_train, l.mse_val, l.grad_norm, l.checkpointed] for l in logs),
    )


def write_weights(path, oracle: np.ndarray, learned: np.ndarray) -> None:
    write_csv(
        path,
        ["index", "oracle_weight", "learned_weight"],
        ([i, float(oracle[i]), float(learned[i])] for i in range(len(oracle))),
    )


def write_eval_boxplot(path, errors: np.ndarray) -> None:
    write_csv(
        path,
        ["sample", "rel_error"],
        ([i, float(e)] for i, e in enumerate(errors)),
    )
