"""Serialization of simulation reports and plot-ready CSV tables."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Mapping

from .simulator import SimReport, normalized_consumption

REQUEST_HEADER = (
    "policy", "request", "end_to_end_ms", "slack", "slo_met", "millicores", "millicore_ms",
    "sizes", "latencies_ms", "sources",
)
SUMMARY_FIELDS = (
    "policy", "n_requests", "slo_ms", "p50_ms", "p95_ms", "p99_ms", "violation_rate",
    "mean_millicores", "mean_millicore_ms", "hits", "misses", "miss_rate", "bypasses",
)


class SchemaError(ValueError):
    pass


def summary_document(scenario: str, seed: int, reports: Mapping[str, SimReport]) -> dict:
    doc = {
        "scenario": scenario,
        "seed": seed,
        "policies": {name: r.summary() for name, r in reports.items()},
    }
    if "optimal" in reports:
        doc["normalized_by_optimal"] = normalized_consumption(reports)
    return doc


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def requests_csv(reports: Mapping[str, SimReport]) -> str:
    rows = []
    for name, rep in reports.items():
        for t in rep.traces:
            rows.append((
                name, t.request_id, repr(t.end_to_end_ms), repr(t.slack), int(t.slo_met), t.millicores,
                repr(t.total_millicore_ms), ";".join(map(str, t.sizes)),
                ";".join(repr(x) for x in t.latencies_ms), ";".join(t.sources),
            ))
    return _csv_text(REQUEST_HEADER, rows)


def read_requests(path: str | Path) -> dict[str, list[dict]]:
    """Per-policy request rows from a requests CSV."""
    out: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in REQUEST_HEADER if f not in (reader.fieldnames or ())]
        if missing:
            raise SchemaError(f"{path}: missing field '{missing[0]}'")
        for row in reader:
            out.setdefault(row["policy"], []).append(row)
    return out


def read_summary(path: str | Path) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    for key in ("scenario", "seed", "policies"):
        if key not in doc:
            raise SchemaError(f"{path}: missing field '{key}'")
    for name, summ in doc["policies"].items():
        for f in SUMMARY_FIELDS:
            if f not in summ:
                raise SchemaError(f"{path}: policy {name}: missing field '{f}'")
    return doc


def latency_cdf_csv(e2e: Mapping[str, list[float]]) -> str:
    """Empirical CDF points per policy: sorted latency against cumulative fraction."""
    rows = []
    for name, values in e2e.items():
        vals = sorted(values)
        n = len(vals)
        for i, v in enumerate(vals, start=1):
            rows.append((name, repr(v), repr(i / n)))
    return _csv_text(("policy", "end_to_end_ms", "cumulative_fraction"), rows)


def consumption_csv(summary: dict) -> str:
    norm = summary.get("normalized_by_optimal", {})
    rows = []
    for name, s in summary["policies"].items():
        rows.append((name, repr(s["mean_millicores"]), repr(norm[name]) if name in norm else ""))
    return _csv_text(("policy", "mean_millicores", "normalized_by_optimal"), rows)


def hitmiss_csv(summary: dict) -> str:
    rows = [
        (name, s["hits"], s["misses"], repr(s["miss_rate"]), s["bypasses"])
        for name, s in summary["policies"].items()
    ]
    return _csv_text(("policy", "hits", "misses", "miss_rate", "bypasses"), rows)


def comparison_csv(runs: Mapping[str, dict]) -> str:
    rows = []
    for run, summary in runs.items():
        norm = summary.get("normalized_by_optimal", {})
        for name, s in summary["policies"].items():
            rows.append((run, *(s[f] if isinstance(s[f], (int, str)) else repr(s[f]) for f in SUMMARY_FIELDS),
                         repr(norm[name]) if name in norm else ""))
    return _csv_text(("run", *SUMMARY_FIELDS, "normalized_by_optimal"), rows)
