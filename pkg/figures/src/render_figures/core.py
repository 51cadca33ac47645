"""CSV loading and the four figure renderers."""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REQUIRED_COLUMNS = {
    "shaded": {"family", "n_iter", "tau", "log_mean", "log_std"},
    "curves": {"epoch", "mse_train", "mse_val"},
    "stems": {"index", "oracle_weight", "learned_weight"},
    "boxplot": {"sample", "rel_error"},
}

#: metadata pinned so identical inputs produce identical PNG bytes
_PNG_METADATA = {"Software": "render_figures"}


class SchemaError(ValueError):
    """A CSV is missing a column the figure kind needs."""


@dataclass
class FigureSpec:
    """One figure to render.

    kind      : shaded | curves | stems | boxplot
    inputs    : CSV paths (boxplot accepts several, one box per file)
    output    : image path (.png)
    log_x     : logarithmic x axis (defaults to the kind's convention)
    log_y     : logarithmic y axis
    """

    kind: str
    inputs: list = field(default_factory=list)
    output: str = "figure.png"
    log_x: bool | None = None
    log_y: bool | None = None


def load_csv(path: str) -> dict[str, np.ndarray]:
    """Parse a CSV into string-keyed float columns (family stays textual)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    header = lines[0].split(",")
    columns: dict[str, list] = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            columns[name].append(cell)
    out: dict[str, np.ndarray] = {}
    for name, cells in columns.items():
        try:
            out[name] = np.array([float(c) for c in cells])
        except ValueError:
            out[name] = np.array(cells)
    return out


def check_schema(kind: str, table: dict, path: str) -> None:
    missing = sorted(REQUIRED_COLUMNS[kind] - set(table))
    if missing:
        raise SchemaError(f"{path} is missing column(s) {', '.join(missing)} required by {kind!r}")


def shaded_band(log_mean: np.ndarray, log_std: np.ndarray):
    """Center curve and band of a log-space mean/std pair.

    Returns (center, low, high) = (10^mu, 10^(mu - rho), 10^(mu + rho)).
    """
    center = 10.0 ** np.asarray(log_mean)
    low = 10.0 ** (np.asarray(log_mean) - np.asarray(log_std))
    high = 10.0 ** (np.asarray(log_mean) + np.asarray(log_std))
    return center, low, high


def _render_shaded(spec: FigureSpec, ax) -> None:
    table = load_csv(spec.inputs[0])
    check_schema("shaded", table, spec.inputs[0])
    n_iters = sorted(set(int(n) for n in table["n_iter"]))
    family = str(table["family"][0]) if len(table["family"]) else ""
    for n in n_iters:
        sel = table["n_iter"] == n
        order = np.argsort(table["tau"][sel])
        taus = table["tau"][sel][order]
        center, low, high = shaded_band(table["log_mean"][sel][order], table["log_std"][sel][order])
        ax.plot(taus, center, marker="o", markersize=3, label=f"n = {n}")
        ax.fill_between(taus, low, high, alpha=0.25)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("temperature")
    ax.set_ylabel("relative error vs exact solver")
    ax.set_title(f"{family} soft-solver tracking")
    ax.legend()


def _render_curves(spec: FigureSpec, ax) -> None:
    table = load_csv(spec.inputs[0])
    check_schema("curves", table, spec.inputs[0])
    order = np.argsort(table["epoch"])
    ax.plot(table["epoch"][order], table["mse_train"][order], label="train")
    ax.plot(table["epoch"][order], table["mse_val"][order], label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title("training and validation loss")
    ax.legend()


def _render_stems(spec: FigureSpec, fig) -> None:
    table = load_csv(spec.inputs[0])
    check_schema("stems", table, spec.inputs[0])
    ax_top, ax_bottom = fig.subplots(2, 1, sharex=True)
    idx = table["index"]
    ax_top.stem(idx, table["oracle_weight"], basefmt=" ", markerfmt="C0.")
    ax_top.set_ylabel("oracle weight")
    ax_bottom.stem(idx, table["learned_weight"], basefmt=" ", markerfmt="C1.")
    ax_bottom.set_ylabel("learned weight")
    ax_bottom.set_xlabel("index")
    ax_top.set_title("oracle vs learned weights")


def _render_boxplot(spec: FigureSpec, ax) -> None:
    series = []
    labels = []
    for path in spec.inputs:
        table = load_csv(path)
        check_schema("boxplot", table, path)
        series.append(table["rel_error"])
        stem = path.rsplit("/", 1)[-1]
        labels.append(stem.removesuffix(".csv").removeprefix("eval_boxplot").strip("_") or "model")
    ax.boxplot(series, tick_labels=labels)
    ax.set_yscale("log")
    ax.set_ylabel("relative error")
    ax.set_title("recovery error")


def render(spec: FigureSpec) -> str:
    """Render one figure, returning the output path."""
    if spec.kind not in REQUIRED_COLUMNS:
        raise ValueError(f"unknown figure kind {spec.kind!r}")
    if not spec.inputs:
        raise ValueError("no input CSVs given")
    fig = plt.figure(figsize=(6.0, 4.0), dpi=120)
    try:
        if spec.kind == "stems":
            _render_stems(spec, fig)
        else:
            ax = fig.subplots()
            {"shaded": _render_shaded, "curves": _render_curves, "boxplot": _render_boxplot}[
                spec.kind
            ](spec, ax)
            if spec.log_x is not None:
                ax.set_xscale("log" if spec.log_x else "linear")
            if spec.log_y is not None:
                ax.set_yscale("log" if spec.log_y else "linear")
        fig.tight_layout()
        fig.savefig(spec.output, metadata=_PNG_METADATA)
    finally:
        plt.close(fig)
    return spec.output
