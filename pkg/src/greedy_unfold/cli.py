"""Command-line entry point.

Subcommands bind JSON configs, seeds, and output directories to the
library: ``gen`` (write an instance), ``solve`` (run one solver),
``verify-bounds`` (tracking-bound check), ``exp1`` (temperature sweep),
``exp2-train`` / ``exp2-eval`` (network training and evaluation).

Conventions:

* every artifact lands under ``--out``, together with the resolved config
  (``config.resolved.json``) and a ``manifest.json`` listing each produced
  file with a sha256 checksum;
* unknown config keys are a hard error (exit 1) and nothing is written;
* numerical failures exit 2 and leave a machine-readable ``error.json``;
* an omitted ``--seed`` is drawn from entropy and printed so the run can
  be reproduced after the fact.

Indices inside JSON/CSV artifacts are 0-based (marked by an explicit
``index_base`` field where ambiguity is possible); human-readable summary
lines on stdout render 1-based positions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import experiments as ex
from .bounds import NoValidTauError, verify_theorem
from .gradients import GradientNumericsError
from .linalg import PowerIterationError, RankDeficientError
from .solvers import SolverConfig, iht, omp, p_iht, p_omp, soft_iht, soft_omp

NUMERICAL_ERRORS = (
    RankDeficientError,
    PowerIterationError,
    NoValidTauError,
    GradientNumericsError,
    ex.TrainingError,
    FloatingPointError,
)


class ConfigError(ValueError):
    pass


# every accepted config key with its global default; None means
# "derived from the subcommand/family at resolve time"
CONFIG_DEFAULTS = {
    "seed": None,
    "family": "omp",  # solver family: omp | iht
    "matrix_family": None,  # gaussian | fourier
    "n": None,
    "m": None,
    "s": None,
    "sigma": 1e-3,
    "normalize_columns": False,
    "superset_factor": None,
    "solver": None,  # gen/solve: omp|p_omp|soft_omp|iht|p_iht|soft_iht
    "k": None,
    "eta": None,
    "n_iter": None,
    "tau": 1e-3,
    "epsilon": None,
    "tau_grid": [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
    "iter_counts": None,
    "n_trials": 50,
    "layers": None,
    "learning_rate": 1e-2,
    "n_epoch": 1000,
    "n_checkpt": 10,
    "batch_size": 64,
    "clip_max_norm": 1.0,
    "n_train": 1024,
    "n_val": 512,
    "rms_decay": 0.9,
    "rms_eps": 1e-8,
    "nonneg_weights": True,
    "include_matrix": False,
    "model_file": None,
}

# family-dependent defaults for the sweep and training subcommands
EXP1_DEFAULTS = {
    "omp": {"n": 400, "m": 200, "s": 15, "eta": 0.6, "iter_counts": [5, 15, 30], "matrix_family": "gaussian"},
    "iht": {"n": 400, "m": 200, "s": 15, "eta": 0.6, "iter_counts": [1, 15, 45], "matrix_family": "gaussian"},
}
EXP2_DEFAULTS = {
    "omp": {"n": 256, "m": 22, "s": 10, "layers": 10, "eta": None, "matrix_family": "fourier", "superset_factor": 2},
    "iht": {"n": 256, "m": 36, "s": 10, "layers": 30, "eta": 0.5, "matrix_family": "fourier", "superset_factor": 2},
}
GEN_DEFAULTS = {"n": 400, "m": 200, "s": 15, "matrix_family": "gaussian", "eta": 0.6}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return raw


def resolve_config(cmd: str, raw: dict, args) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    cfg.update(raw)
    if args.family is not None:
        cfg["family"] = args.family
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg["family"] not in ("omp", "iht"):
        raise ConfigError(f"family must be omp or iht, got {cfg['family']!r}")

    per_cmd = {}
    if cmd == "exp1":
        per_cmd = EXP1_DEFAULTS[cfg["family"]]
    elif cmd in ("exp2-train", "exp2-eval"):
        per_cmd = EXP2_DEFAULTS[cfg["family"]]
    elif cmd in ("gen", "solve", "verify-bounds"):
        per_cmd = GEN_DEFAULTS
    for key, value in per_cmd.items():
        if raw.get(key) is None and cfg.get(key) is None:
            cfg[key] = value

    if cfg["seed"] is None:
        cfg["seed"] = int.from_bytes(os.urandom(8), "big") >> 1
        print(f"seed drawn from entropy: {cfg['seed']}", file=sys.stderr)
    cfg["seed"] = int(cfg["seed"])

    if cfg["matrix_family"] not in ("gaussian", "fourier", None):
        raise ConfigError(f"matrix_family must be gaussian or fourier, got {cfg['matrix_family']!r}")
    if cfg["matrix_family"] is None:
        cfg["matrix_family"] = "gaussian"
    if cfg["solver"] is None:
        cfg["solver"] = cfg["family"]
    if cfg["k"] is None:
        cfg["k"] = cfg["s"]
    if cfg["n_iter"] is None:
        cfg["n_iter"] = cfg["layers"] if cfg["layers"] is not None else 30
    if cfg["eta"] is None and (cfg["family"] == "iht" or cfg["solver"].endswith("iht")):
        cfg["eta"] = 0.6
    if cfg["layers"] is None:
        cfg["layers"] = 10 if cfg["family"] == "omp" else 30
    if cmd == "exp2-eval" and cfg["model_file"] is None:
        raise ConfigError("exp2-eval needs model_file in the config")
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir: str, cfg: dict) -> None:
    entries = []
    for name in sorted(os.listdir(out_dir)):
        if name == "manifest.json":
            continue
        path = os.path.join(out_dir, name)
        if os.path.isdir(path):
            for sub in sorted(os.listdir(path)):
                entries.append(os.path.join(name, sub))
        else:
            entries.append(name)
    files = []
    for rel in entries:
        with open(os.path.join(out_dir, rel), "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        files.append({"name": rel, "sha256": digest})
    write_json(os.path.join(out_dir, "manifest.json"), {"config_hash": config_hash(cfg), "files": files})


def _complex_array_json(arr: np.ndarray):
    if np.iscomplexobj(arr):
        return {"re": np.real(arr).tolist(), "im": np.imag(arr).tolist()}
    return {"re": arr.tolist()}


def instance_params(cfg: dict) -> ex.InstanceParams:
    return ex.InstanceParams(
        n=int(cfg["n"]),
        m=int(cfg["m"]),
        s=int(cfg["s"]),
        sigma=float(cfg["sigma"]),
        family=cfg["matrix_family"],
        superset_factor=cfg["superset_factor"],
        normalize_columns=bool(cfg["normalize_columns"]),
    )


def cmd_gen(cfg: dict, out_dir: str, quiet: bool) -> None:
    inst = ex.generate_instance(instance_params(cfg), cfg["seed"])
    payload = {
        "index_base": 0,
        "n": cfg["n"],
        "m": cfg["m"],
        "s": cfg["s"],
        "sigma": cfg["sigma"],
        "matrix_family": inst.matrix_family,
        "seed": cfg["seed"],
        "support": inst.support.tolist(),
        "superset": None if inst.superset is None else inst.superset.tolist(),
        "x_true": inst.x_true.tolist(),
        "y": _complex_array_json(inst.y),
    }
    if cfg["include_matrix"]:
        payload["a"] = _complex_array_json(inst.a)
    write_json(os.path.join(out_dir, "instance.json"), payload)
    if not quiet:
        ones = ", ".join(str(i + 1) for i in inst.support)
        print(f"instance written; support (1-based): {ones}")


SOLVERS = {
    "omp": omp,
    "p_omp": p_omp,
    "soft_omp": soft_omp,
    "iht": iht,
    "p_iht": p_iht,
    "soft_iht": soft_iht,
}


def cmd_solve(cfg: dict, out_dir: str, quiet: bool) -> None:
    name = cfg["solver"]
    if name not in SOLVERS:
        raise ConfigError(f"unknown solver {name!r}; expected one of {sorted(SOLVERS)}")
    inst = ex.generate_instance(instance_params(cfg), cfg["seed"])
    soft = name.startswith("soft")
    iht_family = name.endswith("iht")
    solver_cfg = SolverConfig(
        k=int(cfg["k"]),
        eta=float(cfg["eta"]) if iht_family else None,
        n_iter=int(cfg["n_iter"]) if iht_family else None,
        tau=float(cfg["tau"]) if soft else None,
    )
    trace = SOLVERS[name](inst.a, inst.y, solver_cfg)
    x_hat = trace.final
    rel_err = float(np.linalg.norm(x_hat - inst.x_true) / np.linalg.norm(inst.x_true))
    payload = {
        "index_base": 0,
        "solver": name,
        "seed": cfg["seed"],
        "x_hat": _complex_array_json(x_hat),
        "residual_norms": trace.residual_norms,
        "rel_error_vs_truth": rel_err,
        "ties": trace.ties,
    }
    if trace.supports is not None:
        payload["supports"] = [s.tolist() for s in trace.supports]
    if trace.masks is not None:
        payload["final_mask"] = trace.masks[-1].tolist()
    write_json(os.path.join(out_dir, "solution.json"), payload)
    if not quiet:
        print(f"{name}: relative error vs truth {rel_err:.3e}")


def cmd_verify_bounds(cfg: dict, out_dir: str, quiet: bool) -> None:
    inst = ex.generate_instance(instance_params(cfg), cfg["seed"])
    family = cfg["family"]
    if family == "omp":
        solver_cfg = SolverConfig(k=int(cfg["k"]))
    else:
        solver_cfg = SolverConfig(k=int(cfg["k"]), eta=float(cfg["eta"]), n_iter=int(cfg["n_iter"]))
    epsilon = cfg["epsilon"]
    report = verify_theorem(family, inst.a, inst.y, solver_cfg, None if epsilon is None else float(epsilon))
    write_json(os.path.join(out_dir, "bound_report.json"), report.as_dict())
    if not quiet:
        print(
            f"{family}: satisfied={report.satisfied} precondition_ok={report.precondition_ok} "
            f"observed={report.observed_max_error:.3e} epsilon={report.epsilon:.3e} tau={report.tau:.3e}"
        )


def cmd_exp1(cfg: dict, out_dir: str, quiet: bool, threads: int) -> None:
    rows, stats, failures = ex.experiment_one(
        instance_params(cfg),
        cfg["family"],
        cfg["tau_grid"],
        cfg["iter_counts"],
        int(cfg["n_trials"]),
        cfg["seed"],
        eta=float(cfg["eta"]),
        threads=threads,
    )
    ex.write_exp1_errors(os.path.join(out_dir, "exp1_errors.csv"), rows)
    ex.write_exp1_stats(os.path.join(out_dir, "exp1_stats.csv"), stats)
    if failures:
        write_json(
            os.path.join(out_dir, "exp1_failures.json"),
            [{"trial": t, "error": msg} for t, msg in failures],
        )
    if not quiet:
        print(f"sweep complete: {len(rows)} rows, {len(failures)} failed trials")


def _train_config(cfg: dict) -> ex.TrainConfig:
    family = cfg["family"]
    return ex.TrainConfig(
        family=family,
        layers=int(cfg["layers"]),
        tau=float(cfg["tau"]),
        k=int(cfg["k"]) if family == "iht" else None,
        eta=float(cfg["eta"]) if family == "iht" else None,
        learning_rate=float(cfg["learning_rate"]),
        n_epoch=int(cfg["n_epoch"]),
        n_checkpt=int(cfg["n_checkpt"]),
        batch_size=int(cfg["batch_size"]),
        clip_max_norm=float(cfg["clip_max_norm"]),
        rms_decay=float(cfg["rms_decay"]),
        rms_eps=float(cfg["rms_eps"]),
        nonneg=bool(cfg["nonneg_weights"]),
    )


def cmd_exp2_train(cfg: dict, out_dir: str, quiet: bool) -> None:
    params = instance_params(cfg)
    train_set = ex.generate_dataset(params, cfg["seed"], int(cfg["n_train"]), split="train")
    val_set = ex.generate_dataset(params, cfg["seed"], int(cfg["n_val"]), split="val")
    tcfg = _train_config(cfg)
    state, logs = ex.train_network(train_set, val_set, tcfg, cfg["seed"])
    chash = config_hash(cfg)

    ex.write_training_log(os.path.join(out_dir, "training_log.csv"), logs)
    w_oracle = ex.oracle_weights(train_set[0].superset, params.n)
    best = state.best
    ex.write_weights(os.path.join(out_dir, "weights.csv"), w_oracle, best.weights)

    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for ckpt in state.checkpoints:
        write_json(
            os.path.join(ckpt_dir, f"checkpoint_{ckpt.epoch:05d}.json"),
            {
                "epoch": ckpt.epoch,
                "mse_train": ckpt.mse_train,
                "weights": ckpt.weights.tolist(),
                "config_hash": chash,
            },
        )
    write_json(
        os.path.join(out_dir, "model.json"),
        {
            "family": tcfg.family,
            "layers": tcfg.layers,
            "tau": tcfg.tau,
            "k": tcfg.k,
            "eta": tcfg.eta,
            "epoch": best.epoch,
            "mse_train": best.mse_train,
            "mse_val": best.mse_val,
            "weights": best.weights.tolist(),
            "config_hash": chash,
        },
    )
    if not quiet:
        print(
            f"trained {tcfg.family} net: best checkpoint epoch {best.epoch}, "
            f"mse_train {best.mse_train:.4e}, mse_val {best.mse_val:.4e} "
            f"(epoch-0 mse_val {logs[0].mse_val:.4e})"
        )


def cmd_exp2_eval(cfg: dict, out_dir: str, quiet: bool) -> None:
    with open(cfg["model_file"], "r", encoding="utf-8") as fh:
        model = json.load(fh)
    params = instance_params(cfg)
    val_set = ex.generate_dataset(params, cfg["seed"], int(cfg["n_val"]), split="val")
    tcfg = ex.TrainConfig(
        family=model["family"],
        layers=int(model["layers"]),
        tau=float(model["tau"]),
        k=None if model["k"] is None else int(model["k"]),
        eta=None if model["eta"] is None else float(model["eta"]),
    )
    weights = np.asarray(model["weights"], dtype=np.float64)
    stats = ex.evaluate_network(weights, tcfg, val_set)
    if model["family"] == "omp":
        classical = ex.classical_errors("omp", val_set, k=params.s)
    else:
        classical = ex.classical_errors(
            "iht", val_set, k=params.s, eta=tcfg.eta, n_iter=tcfg.layers
        )
    ex.write_eval_boxplot(os.path.join(out_dir, "eval_boxplot.csv"), stats.errors)
    ex.write_eval_boxplot(os.path.join(out_dir, "eval_boxplot_classical.csv"), classical)

    superset = val_set[0].superset
    overlap = None
    if superset is not None:
        top = np.argsort(-weights)[: superset.size]
        overlap = float(len(set(top.tolist()) & set(superset.tolist())) / superset.size)
    summary = {
        "median_rel_error": float(np.median(stats.errors)),
        "median_rel_error_classical": float(np.median(classical)),
        "median_ratio": float(np.median(stats.errors) / np.median(classical)),
        "quantiles": stats.quantiles,
        "quantiles_classical": ex.boxplot_quantiles(classical),
        "superset_overlap_of_top_weights": overlap,
    }
    write_json(os.path.join(out_dir, "eval_summary.json"), summary)
    if not quiet:
        print(
            f"median rel error {summary['median_rel_error']:.3e} vs classical "
            f"{summary['median_rel_error_classical']:.3e} (ratio {summary['median_ratio']:.3f})"
        )


def default_threads(flag_value: int | None) -> int:
    if flag_value is not None:
        return max(1, flag_value)
    env = os.environ.get("GREEDY_UNFOLD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"GREEDY_UNFOLD_THREADS is not an integer: {env!r}") from exc
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greedy-unfold",
        description="Sparse recovery solvers, soft relaxations, bound checks, and unrolled-network experiments.",
    )
    parser.add_argument("command", choices=["gen", "solve", "verify-bounds", "exp1", "exp2-train", "exp2-eval"])
    parser.add_argument("--config", help="JSON config file (unknown keys are rejected)")
    parser.add_argument("--seed", type=int, help="run seed (drawn from entropy and printed when omitted)")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--family", choices=["omp", "iht"], help="solver family for sweeps/training")
    parser.add_argument("--threads", type=int, help="worker threads (default: GREEDY_UNFOLD_THREADS or all cores)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        cfg = resolve_config(args.command, raw, args)
        threads = default_threads(args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "config.resolved.json"), cfg)
    try:
        if args.command == "gen":
            cmd_gen(cfg, out_dir, args.quiet)
        elif args.command == "solve":
            cmd_solve(cfg, out_dir, args.quiet)
        elif args.command == "verify-bounds":
            cmd_verify_bounds(cfg, out_dir, args.quiet)
        elif args.command == "exp1":
            cmd_exp1(cfg, out_dir, args.quiet, threads)
        elif args.command == "exp2-train":
            cmd_exp2_train(cfg, out_dir, args.quiet)
        elif args.command == "exp2-eval":
            cmd_exp2_eval(cfg, out_dir, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        write_json(
            os.path.join(out_dir, "error.json"),
            {"error": type(exc).__name__, "message": str(exc)},
        )
        write_manifest(out_dir, cfg)
        return 2
    write_manifest(out_dir, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
