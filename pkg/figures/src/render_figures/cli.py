"""render_figures <kind> <csv...> --out <png>"""

from __future__ import annotations

import argparse
import sys

from .core import FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="Render experiment CSVs: shaded sweeps, MSE curves, weight stems, error boxplots.",
    )
    parser.add_argument("kind", choices=["shaded", "curves", "stems", "boxplot"])
    parser.add_argument("csv", nargs="+", help="input CSV file(s); boxplot draws one box per file")
    parser.add_argument("--out", required=True, help="output image path (.png)")
    args = parser.parse_args(argv)
    spec = FigureSpec(kind=args.kind, inputs=list(args.csv), output=args.out)
    try:
        render(spec)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
