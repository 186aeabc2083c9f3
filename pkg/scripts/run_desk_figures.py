"""Run the bundled desk-scale benchmark grids and write one CSV per grid.

    python scripts/run_desk_figures.py [--reps 5] [--threads 4] [--out results]
"""

import argparse
from pathlib import Path

from mirrorfdr.bench import format_table, run_bench, write_csv
from mirrorfdr.cli import expand_runfile, load_runfile, scenario_from_cell

GRIDS = ("fig2_desk", "fig4_desk", "fig5_desk")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", nargs="+", default=list(GRIDS))
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.grids:
        grid = [scenario_from_cell(c, args.reps) for c in expand_runfile(load_runfile(name))]
        results = run_bench(grid, threads=args.threads)
        write_csv(results, out / f"{name}.csv")
        print(f"== {name}")
        print(format_table(results))


if __name__ == "__main__":
    main()
