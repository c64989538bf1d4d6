"""Raw hint count against condensed rows for every table of a scenario.

    python3 scripts/condensing_stats.py [ia_like] [--mode head]
"""

import argparse
import time

from latebind.cli import scenario_path
from latebind.scenario import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", nargs="?", default="ia_like")
    ap.add_argument("--mode", default=None)
    args = ap.parse_args()
    sc = load_scenario(scenario_path(args.scenario))
    mode = args.mode or sc.config.synthesis.mode
    raw = {}
    t0 = time.perf_counter()
    tables = sc.build_tables(sc.build_profiles(), mode, raw)
    wall = time.perf_counter() - t0
    print(f"{'suffix':>6s} {'weight':>6s} {'batch':>5s} {'budgets':>9s} {'rows':>6s} {'ratio':>8s}")
    for key in sorted(tables):
        _, suffix, w, b = key
        n, rows = raw[key], len(tables[key].rows)
        print(f"{suffix:6d} {w:6.2f} {b:5d} {n:9d} {rows:6d} {1 - rows / n:8.2%}")
    total = sum(raw.values())
    rows = sum(len(t.rows) for t in tables.values())
    print(f"total {total} budget points -> {rows} rows ({1 - rows / total:.2%}) in {wall:.1f} s, mode {mode}")


if __name__ == "__main__":
    main()
