"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 bad input, 3 infeasible configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable

from .core import ConfigError, InfeasibleError, PercentileGrid, ResourceGrid, load_workflow
from .profiler import DEFAULT_MIN_SAMPLES, ProfileError, extract_profile, read_profiles, read_samples, write_profiles, write_samples
from .reporting import (
    SchemaError,
    comparison_csv,
    consumption_csv,
    dumps_json,
    hitmiss_csv,
    latency_cdf_csv,
    read_requests,
    read_summary,
    requests_csv,
    summary_document,
)
from .scenario import bundled, load_scenario
from .simulator import POLICIES
from .synthesizer import MODES, synthesize_all, write_tables
from .workloads import generate_samples

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# atomic output


def _write_all(files: dict[Path, Callable[[Path], None] | str]) -> None:
    """Write every file to a temporary sibling, then rename them into place.

    Values are either text or a callable that writes to the given path.
    """
    staged = []
    try:
        for path, content in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            os.close(fd)
            staged.append((Path(tmp), path))
            if isinstance(content, str):
                Path(tmp).write_text(content)
            else:
                content(Path(tmp))
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _grids(args) -> tuple[ResourceGrid, PercentileGrid]:
    if args.workflow:
        cfg = load_workflow(args.workflow)
        return cfg.grid, cfg.percentiles
    return ResourceGrid(), PercentileGrid.stepped()


def scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists() or p.suffix:
        return p
    return bundled(arg)


# --------------------------------------------------------------------------
# subcommands


def cmd_generate_samples(args) -> int:
    sc = load_scenario(scenario_path(args.scenario))
    if not sc.families:
        raise ConfigError("scenario has no synthetic families")
    seed = sc.seed if args.seed is None else args.seed
    batches = sorted(set(sc.config.synthesis.batches) | {sc.spec.batch})
    samples = [
        generate_samples(fam, sc.config.grid, args.n or sc.samples_per_size, seed, b)
        for fam in sc.families for b in batches
    ]
    _write_all({Path(args.out): lambda p: write_samples(p, samples)})
    return EXIT_OK


def cmd_profile(args) -> int:
    grid, pgrid = _grids(args)
    samples = read_samples(args.samples)
    profiles = [extract_profile(s, grid, pgrid, args.min_samples) for _, s in sorted(samples.items())]
    _write_all({Path(args.out): lambda p: write_profiles(p, profiles)})
    for prof in profiles:
        print(f"{prof.function}\tbatch {prof.batch}\t{len(prof.percentiles)}x{len(prof.grid)} surface")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = load_workflow(args.workflow)
    profiles = read_profiles(args.profiles)
    syn = cfg.synthesis
    mode = args.mode or syn.mode
    weights = tuple(args.weights) if args.weights else (syn.weight_grid or None)
    batches = tuple(args.batches) if args.batches else (syn.batches or None)
    step = args.step_ms or syn.budget_step_ms
    raw: dict = {}
    t0 = time.perf_counter()
    tables = synthesize_all(cfg.spec, profiles, weights, batches, mode, step, raw_sink=raw)
    wall = time.perf_counter() - t0
    per_table = []
    for key, table in sorted(tables.items()):
        n_raw, n_rows = raw[key], len(table.rows)
        per_table.append({
            "workflow": key[0], "suffix": key[1], "weight": key[2], "batch": key[3],
            "budget_range": list(table.budget_range), "raw_hints": n_raw, "rows": n_rows,
            "compression_ratio": 1 - n_rows / n_raw,
        })
    total_raw = sum(raw.values())
    total_rows = sum(len(t.rows) for t in tables.values())
    stats = {
        "mode": mode, "budget_step_ms": step, "tables": per_table,
        "raw_hints": total_raw, "rows": total_rows, "compression_ratio": 1 - total_rows / total_raw,
    }
    out = Path(args.out_dir)
    _write_all({
        out / "hints.csv": lambda p: write_tables(p, tables),
        out / "synthesis_stats.json": dumps_json(stats),
    })
    print(f"raw hints {total_raw}, condensed rows {total_rows}, compression ratio {stats['compression_ratio']:.2%}")
    print(f"wall time {wall:.2f} s", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = load_scenario(scenario_path(args.scenario))
    policies = tuple(args.policies) if args.policies else sc.policies
    if args.n_requests is not None:
        if args.n_requests < 1:
            raise UsageError("--n-requests must be >= 1")
        sc = replace(sc, n_requests=args.n_requests)
    seed = sc.seed if args.seed is None else args.seed
    out = Path(args.out_dir)
    log_lines: list[str] = []

    class _Log:
        def write(self, s):
            log_lines.append(s)

    reports = sc.run(seed, policies, log=_Log() if args.decision_log else None)
    doc = summary_document(sc.name, seed, reports)
    files: dict = {
        out / "summary.json": dumps_json(doc),
        out / "requests.csv": requests_csv(reports),
        out / "latency_cdf.csv": latency_cdf_csv({n: [t.end_to_end_ms for t in r.traces] for n, r in reports.items()}),
        out / "consumption.csv": consumption_csv(doc),
    }
    if args.decision_log:
        # lookup latency is wall-clock; it goes only to this log
        files[Path(args.decision_log)] = "".join(log_lines)
    _write_all(files)
    for name, r in reports.items():
        s = r.summary()
        print(f"{name:22s} mean {s['mean_millicores']:8.1f} millicores  p99 {s['p99_ms']:9.1f} ms  "
              f"violations {s['violation_rate']:.2%}  misses {s['misses']}")
    return EXIT_OK


def cmd_report(args) -> int:
    runs = {}
    files: dict = {}
    out = Path(args.out_dir)
    for d in args.runs:
        d = Path(d)
        summary = read_summary(d / "summary.json")
        requests = read_requests(d / "requests.csv")
        runs[str(d)] = summary
        e2e = {name: [float(r["end_to_end_ms"]) for r in rows] for name, rows in requests.items()}
        prefix = "" if len(args.runs) == 1 else f"{d.name}_"
        files[out / f"{prefix}latency_cdf.csv"] = latency_cdf_csv(e2e)
        files[out / f"{prefix}consumption.csv"] = consumption_csv(summary)
        files[out / f"{prefix}hitmiss.csv"] = hitmiss_csv(summary)
    if len(runs) > 1:
        files[out / "comparison.csv"] = comparison_csv(runs)
    _write_all(files)
    for path in files:
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latebind", description="Late-binding resource adaptation for function chains.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-samples", help="draw synthetic latency samples for a scenario's families")
    p.add_argument("scenario", help="scenario JSON path or bundled name (e.g. demo)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="samples per size (default: scenario setting)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate_samples)

    p = sub.add_parser("profile", help="extract latency profiles from a sample CSV")
    p.add_argument("samples")
    p.add_argument("--workflow", help="workflow JSON supplying the grids (default grids otherwise)")
    p.add_argument("--out", required=True)
    p.add_argument("--min-samples", type=int, default=DEFAULT_MIN_SAMPLES)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synthesize", help="generate and condense hints tables")
    p.add_argument("--profiles", required=True)
    p.add_argument("--workflow", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--weights", type=float, nargs="+")
    p.add_argument("--batches", type=int, nargs="+")
    p.add_argument("--step-ms", type=int, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="replay requests under each policy")
    p.add_argument("scenario", help="scenario JSON path or bundled name (e.g. demo)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--policies", nargs="+", choices=POLICIES)
    p.add_argument("--n-requests", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--decision-log", help="write per-lookup JSON lines here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="plot-ready CSVs from one or more simulate output directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"latebind: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"latebind: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ProfileError, SchemaError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"latebind: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
