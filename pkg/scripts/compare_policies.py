"""Run every policy of a scenario on shared draws and print a consumption table.

    python3 scripts/compare_policies.py [demo] [--seeds 1 2 3]
"""

import argparse

from latebind.cli import scenario_path
from latebind.scenario import load_scenario
from latebind.simulator import normalized_consumption


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", nargs="?", default="demo")
    ap.add_argument("--seeds", type=int, nargs="+")
    args = ap.parse_args()
    sc = load_scenario(scenario_path(args.scenario))
    for seed in args.seeds or [sc.seed]:
        reports = sc.run(seed)
        norm = normalized_consumption(reports) if "optimal" in reports else {}
        print(f"scenario {sc.name}, seed {seed}, SLO {sc.spec.slo_ms:.0f} ms")
        print(f"{'policy':22s} {'millicores':>10s} {'vs optimal':>10s} {'p99 ms':>8s} {'violations':>10s}")
        for name, rep in sorted(reports.items(), key=lambda kv: kv[1].mean_consumption):
            print(f"{name:22s} {rep.mean_consumption:10.1f} {norm.get(name, float('nan')):10.3f} "
                  f"{rep.percentile(99):8.0f} {rep.violation_rate:10.2%}")
        if "late_bind" in reports and "early_bind_p99" in reports:
            cut = 1 - reports["late_bind"].mean_consumption / reports["early_bind_p99"].mean_consumption
            print(f"late_bind saves {cut:.1%} against early_bind_p99\n")


if __name__ == "__main__":
    main()
