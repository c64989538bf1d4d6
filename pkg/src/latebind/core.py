"""Shared domain types: resource and percentile grids, workflow specs, hint tables.

Compute is measured in integer millicores and latency in integer milliseconds
throughout the package.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


class ConfigError(ValueError):
    """Raised when a configuration file or object violates its schema."""


class InfeasibleError(RuntimeError):
    """Raised when no allocation can satisfy a latency target."""


@dataclass(frozen=True)
class ResourceGrid:
    k_min: int = 1000
    k_max: int = 3000
    step: int = 100

    def problems(self) -> list[str]:
        out = []
        if self.k_min < 1:
            out.append(f"grid.k_min: must be >= 1 (got {self.k_min})")
        if self.step < 1:
            out.append(f"grid.step: must be >= 1 (got {self.step})")
        if self.k_min > self.k_max:
            out.append(f"grid.k_max: k_min <= k_max required ({self.k_min} > {self.k_max})")
        elif self.step >= 1 and (self.k_max - self.k_min) % self.step:
            out.append(
                f"grid.step: (k_max - k_min) must be divisible by step "
                f"({self.k_max} - {self.k_min} vs {self.step})"
            )
        return out

    def check(self) -> "ResourceGrid":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(range(self.k_min, self.k_max + 1, self.step))

    def __len__(self) -> int:
        return (self.k_max - self.k_min) // self.step + 1

    def index(self, k: int) -> int:
        if k < self.k_min or k > self.k_max or (k - self.k_min) % self.step:
            raise ValueError(f"{k} millicores is not on grid {self.k_min}..{self.k_max}/{self.step}")
        return (k - self.k_min) // self.step

    def __contains__(self, k: object) -> bool:
        return (
            isinstance(k, int)
            and self.k_min <= k <= self.k_max
            and (k - self.k_min) % self.step == 0
        )


@dataclass(frozen=True)
class PercentileGrid:
    values: tuple[int, ...] = ()
    tail: int = 99

    @classmethod
    def stepped(cls, start: int = 1, stop: int = 99, step: int = 5, tail: int = 99) -> "PercentileGrid":
        """Percentiles start, start+step, ... up to stop, always including ``tail``."""
        vals = set(range(start, stop + 1, step))
        vals.add(tail)
        return cls(tuple(sorted(v for v in vals if v <= tail)), tail)

    def problems(self) -> list[str]:
        out = []
        v = self.values
        if not v:
            out.append("percentiles.values: must not be empty")
            return out
        if any(b <= a for a, b in zip(v, v[1:])):
            out.append("percentiles.values: must be strictly increasing")
        if v[0] < 1 or v[-1] > 99:
            out.append("percentiles.values: every percentile must lie in [1, 99]")
        if v[-1] != self.tail:
            out.append(f"percentiles.tail: must equal the largest percentile ({self.tail} vs {v[-1]})")
        return out

    def check(self) -> "PercentileGrid":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def __len__(self) -> int:
        return len(self.values)

    def index(self, p: int) -> int:
        try:
            return self.values.index(p)
        except ValueError:
            raise ValueError(f"percentile {p} is not on grid {self.values}") from None


@dataclass(frozen=True)
class WorkflowSpec:
    """An ordered function chain with its SLO.

    ``weights[i]`` is the head weight used when ``functions[i]`` heads the
    remaining sub-workflow.
    """

    name: str
    functions: tuple[str, ...]
    slo_ms: float
    weights: tuple[float, ...] = ()
    batch: int = 1

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if not self.weights:
            object.__setattr__(self, "weights", (1.0,) * len(self.functions))
        else:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def __len__(self) -> int:
        return len(self.functions)

    def suffix(self, i: int) -> tuple[str, ...]:
        """Functions of the sub-workflow headed by the i-th function (1-based)."""
        return self.functions[i - 1 :]


@dataclass(frozen=True)
class ValidationResult:
    problems: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


def validate_spec(spec: WorkflowSpec, grid: ResourceGrid, percentiles: PercentileGrid) -> ValidationResult:
    """Collect every violated invariant of a workflow and its grids without raising."""
    out: list[str] = []
    if len(spec.functions) < 1:
        out.append("functions: N >= 1 required (empty chain)")
    if len(set(spec.functions)) != len(spec.functions):
        out.append("functions: function identifiers must be unique within a chain")
    if not spec.slo_ms > 0:
        out.append(f"slo_ms: must be > 0 (got {spec.slo_ms})")
    if spec.functions and len(spec.weights) != len(spec.functions):
        out.append(f"weights: expected one weight per function ({len(spec.functions)}), got {len(spec.weights)}")
    for i, w in enumerate(spec.weights):
        if not w >= 1:
            out.append(f"weights[{i}]: weight must be >= 1 (got {w})")
    if spec.batch < 1:
        out.append(f"batch: must be a positive integer (got {spec.batch})")
    out.extend(grid.problems())
    out.extend(percentiles.problems())
    return ValidationResult(tuple(out))


@dataclass(frozen=True)
class HintRow:
    t_start_ms: int
    t_end_ms: int
    head_size: int

    def __contains__(self, t: int) -> bool:
        return self.t_start_ms <= t <= self.t_end_ms


# (workflow, suffix index 1..N, weight, batch)
TableKey = tuple[str, int, float, int]


@dataclass(frozen=True)
class HintsTable:
    key: TableKey
    rows: tuple[HintRow, ...]
    _starts: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "_starts", tuple(r.t_start_ms for r in self.rows))

    @property
    def budget_range(self) -> tuple[int, int]:
        if not self.rows:
            raise ValueError(f"table {self.key} is empty")
        return self.rows[0].t_start_ms, self.rows[-1].t_end_ms

    @property
    def raw_count(self) -> int:
        """Number of millisecond budgets the table answers for."""
        lo, hi = self.budget_range
        return hi - lo + 1

    def problems(self, grid: ResourceGrid | None = None) -> list[str]:
        out = []
        if not self.rows:
            return [f"{self.key}: table has no rows"]
        for a, b in zip(self.rows, self.rows[1:]):
            if b.t_start_ms != a.t_end_ms + 1:
                out.append(f"{self.key}: rows [{a.t_start_ms},{a.t_end_ms}] and [{b.t_start_ms},{b.t_end_ms}] leave a gap or overlap")
            if a.head_size == b.head_size:
                out.append(f"{self.key}: adjacent rows at {a.t_end_ms}/{b.t_start_ms} share head size {a.head_size}")
        for r in self.rows:
            if r.t_start_ms > r.t_end_ms:
                out.append(f"{self.key}: row start {r.t_start_ms} > end {r.t_end_ms}")
            if grid is not None and r.head_size not in grid:
                out.append(f"{self.key}: head size {r.head_size} not on grid")
        return out

    def lookup(self, t: int) -> HintRow | None:
        """Row containing budget ``t`` (both ends inclusive), by binary search."""
        i = bisect.bisect_right(self._starts, t) - 1
        if i < 0:
            return None
        row = self.rows[i]
        return row if t <= row.t_end_ms else None

    def expand(self) -> dict[int, int]:
        """Budget -> head size for every covered millisecond."""
        return {t: r.head_size for r in self.rows for t in range(r.t_start_ms, r.t_end_ms + 1)}


# --------------------------------------------------------------------------
# Workflow configuration file

_WORKFLOW_FIELDS = {"name", "functions", "slo_ms", "grid", "percentiles", "weights", "batch", "synthesis"}
_GRID_FIELDS = {"k_min", "k_max", "step"}
_PERCENTILE_FIELDS = {"start", "stop", "step", "tail", "values"}
_SYNTHESIS_FIELDS = {"weight_grid", "batches", "mode", "budget_step_ms"}


@dataclass(frozen=True)
class SynthesisOptions:
    """Which tables to synthesize: extra weights and batches beyond the workflow's own."""

    weight_grid: tuple[float, ...] = ()
    batches: tuple[int, ...] = ()
    mode: str = "head"
    budget_step_ms: int = 1


@dataclass(frozen=True)
class WorkflowConfig:
    spec: WorkflowSpec
    grid: ResourceGrid
    percentiles: PercentileGrid
    synthesis: SynthesisOptions = SynthesisOptions()


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


def _require(obj: dict, name: str, where: str):
    if name not in obj:
        raise ConfigError(f"{where}: missing field '{name}'")
    return obj[name]


def parse_grid(obj: dict | None) -> ResourceGrid:
    if obj is None:
        return ResourceGrid()
    _reject_unknown(obj, _GRID_FIELDS, "grid")
    return ResourceGrid(int(obj.get("k_min", 1000)), int(obj.get("k_max", 3000)), int(obj.get("step", 100)))


def parse_percentiles(obj: dict | None) -> PercentileGrid:
    if obj is None:
        return PercentileGrid.stepped()
    _reject_unknown(obj, _PERCENTILE_FIELDS, "percentiles")
    tail = int(obj.get("tail", 99))
    if "values" in obj:
        return PercentileGrid(tuple(int(v) for v in obj["values"]), tail)
    return PercentileGrid.stepped(int(obj.get("start", 1)), int(obj.get("stop", 99)), int(obj.get("step", 5)), tail)


def parse_workflow(obj: dict) -> WorkflowConfig:
    """Build a validated :class:`WorkflowConfig` from a decoded JSON object."""
    _reject_unknown(obj, _WORKFLOW_FIELDS, "workflow")
    functions = _require(obj, "functions", "workflow")
    if not isinstance(functions, list) or not all(isinstance(f, str) for f in functions):
        raise ConfigError("workflow.functions: expected a list of strings")
    spec = WorkflowSpec(
        name=str(obj.get("name", "workflow")),
        functions=tuple(functions),
        slo_ms=float(_require(obj, "slo_ms", "workflow")),
        weights=tuple(obj.get("weights", ())),
        batch=int(obj.get("batch", 1)),
    )
    grid = parse_grid(obj.get("grid"))
    pgrid = parse_percentiles(obj.get("percentiles"))
    result = validate_spec(spec, grid, pgrid)
    if not result:
        raise ConfigError("; ".join(result.problems))
    syn = obj.get("synthesis", {})
    _reject_unknown(syn, _SYNTHESIS_FIELDS, "workflow.synthesis")
    options = SynthesisOptions(
        weight_grid=tuple(float(w) for w in syn.get("weight_grid", ())),
        batches=tuple(int(b) for b in syn.get("batches", ())),
        mode=str(syn.get("mode", "head")),
        budget_step_ms=int(syn.get("budget_step_ms", 1)),
    )
    return WorkflowConfig(spec, grid, pgrid, options)


def load_json(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_workflow(path: str | Path) -> WorkflowConfig:
    return parse_workflow(load_json(path))


def check_weight(w: float) -> int:
    """Weight in hundredths; objectives are compared in exact integer arithmetic."""
    w100 = round(w * 100)
    if abs(w100 - w * 100) > 1e-6 or w100 < 100:
        raise ValueError(f"weight {w} must be >= 1 and a multiple of 0.01")
    return w100


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile of an ascending sequence."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(p / 100 * n))
    return sorted_values[rank - 1]
