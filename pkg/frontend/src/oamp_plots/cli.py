"""Command line: oamp-plot <csv...> --labels <...> --out fig.png"""
from __future__ import annotations

import argparse
import sys

from .plots import PlotDataError, PlotSpec, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="oamp-plot",
        description="Render MSE-vs-iteration curves from experiment CSVs")
    parser.add_argument("csvs", nargs="+", help="result CSVs (harness schema)")
    parser.add_argument("--labels", nargs="*", default=[],
                        help="one legend label per CSV (default: algorithm column)")
    parser.add_argument("--out", default="fig.png", help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(csv_paths=args.csvs, labels=args.labels, out_path=args.out)
        render(spec)
    except (PlotDataError, OSError) as err:
        print(f"plot error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
