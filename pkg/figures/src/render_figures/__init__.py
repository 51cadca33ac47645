"""Figure rendering for greedy-unfold experiment CSVs.

Four figure kinds, one per experiment artifact:

* ``shaded``  - relative soft-vs-exact error against temperature, one curve
                per iteration count, with a log-space one-sigma band
                (from ``exp1_stats.csv``)
* ``curves``  - train/validation MSE against epoch (from ``training_log.csv``)
* ``stems``   - oracle vs learned weight stems (from ``weights.csv``)
* ``boxplot`` - relative-error boxplots, one box per input CSV
                (from ``eval_boxplot.csv`` files)

The scripts are read-only consumers: statistics are never recomputed here,
the CSVs are the single source of truth.
"""

from .core import FigureSpec, load_csv, render, shaded_band

__all__ = ["FigureSpec", "load_csv", "render", "shaded_band"]
