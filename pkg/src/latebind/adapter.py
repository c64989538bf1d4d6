"""Online head-function sizing from condensed hint tables."""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, TextIO

from .core import HintRow, HintsTable, ResourceGrid, TableKey


class MissPolicy(str, Enum):
    SCALE_TO_MAX = "scale_to_max"
    REGENERATE = "regenerate"


class Source(str, Enum):
    HIT = "hit"
    MISS_MAX_SCALE = "miss_max_scale"
    MISS_REGENERATED = "miss_regenerated"


@dataclass(frozen=True)
class AdaptationDecision:
    head_size: int
    source: Source
    row: HintRow | None = None
    lookup_latency_us: float = 0.0


# (table key, budget) -> head size, or None when no hint exists for that budget
Regenerator = Callable[[TableKey, int], "int | None"]


class Adapter:
    """Looks up head sizes, counts hits and misses, and flags regeneration.

    Table sets are replaced copy-on-write so a lookup always sees one
    consistent snapshot.  Budgets above a table's range use its last row
    since any larger budget also fits the loosest hint.
    """

    def __init__(
        self,
        tables: Mapping[TableKey, HintsTable] | None = None,
        grid: ResourceGrid = ResourceGrid(),
        miss_policy: MissPolicy | str = MissPolicy.SCALE_TO_MAX,
        miss_threshold: float = 0.01,
        regenerator: Regenerator | None = None,
        log: TextIO | None = None,
    ):
        if not 0 < miss_threshold < 1:
            raise ValueError("miss_threshold must lie in (0, 1)")
        self.grid = grid
        self.miss_policy = MissPolicy(miss_policy)
        if self.miss_policy is MissPolicy.REGENERATE and regenerator is None:
            raise ValueError("the regenerate miss policy needs a regenerator")
        self.miss_threshold = miss_threshold
        self.regenerator = regenerator
        self.log = log
        self._lock = threading.Lock()
        self._tables: dict[TableKey, HintsTable] = {}
        self._overlay: dict[TableKey, dict[int, int]] = {}
        self._hits: dict[TableKey, int] = {}
        self._misses: dict[TableKey, int] = {}
        self.regen_flag: dict[str, bool] = {}
        self._residual: dict[tuple[str, object], float] = {}
        if tables:
            self.install_tables(tables)

    # -- lookups ---------------------------------------------------------

    def adapt(
        self,
        workflow: str,
        suffix: int,
        budget_ms: float,
        weight: float = 1.0,
        batch: int = 1,
        request_id: object = None,
    ) -> AdaptationDecision:
        if not budget_ms > 0:
            raise ValueError(f"residual budget must be positive (got {budget_ms})")
        key: TableKey = (workflow, suffix, float(weight), batch)
        t0 = time.perf_counter_ns()
        tables = self._tables
        try:
            table = tables[key]
        except KeyError:
            raise KeyError(f"no hints table for {key}") from None
        t = math.floor(budget_ms)
        row = table.lookup(t)
        if row is None and t > table.rows[-1].t_end_ms:
            row = table.rows[-1]
        if row is not None:
            decision = AdaptationDecision(row.head_size, Source.HIT, row)
        elif t in self._overlay.get(key, ()):
            decision = AdaptationDecision(self._overlay[key][t], Source.HIT)
        elif self.miss_policy is MissPolicy.REGENERATE:
            head = self.regenerator(key, t) if t > 0 else None
            if head is None:
                decision = AdaptationDecision(self.grid.k_max, Source.MISS_MAX_SCALE)
            else:
                with self._lock:
                    self._overlay.setdefault(key, {})[t] = head
                decision = AdaptationDecision(head, Source.MISS_REGENERATED)
        else:
            decision = AdaptationDecision(self.grid.k_max, Source.MISS_MAX_SCALE)
        elapsed = (time.perf_counter_ns() - t0) / 1000
        decision = AdaptationDecision(decision.head_size, decision.source, decision.row, elapsed)
        with self._lock:
            counter = self._hits if decision.source is Source.HIT else self._misses
            counter[key] = counter.get(key, 0) + 1
        if self.log is not None:
            self.log.write(json.dumps({
                "request": request_id, "workflow": workflow, "suffix": suffix, "budget_ms": budget_ms,
                "decision": decision.head_size, "source": decision.source.value,
                "lookup_latency_us": round(elapsed, 3),
            }) + "\n")
        return decision

    # -- per-request residual budgets ------------------------------------

    def open_request(self, workflow: str, request_id: object, slo_ms: float) -> float:
        self._residual[(workflow, request_id)] = float(slo_ms)
        return float(slo_ms)

    def record_completion(
        self, workflow: str, request_id: object, function_index: int, latency_ms: float, n_functions: int
    ) -> float:
        """Subtract a finished function's latency; closes the request after the last one.

        A non-positive result means the SLO is already lost and downstream
        functions should run at K_max.
        """
        if not 0 <= function_index < n_functions:
            raise ValueError(f"function index {function_index} outside chain of {n_functions}")
        residual = self._residual[(workflow, request_id)] - latency_ms
        if function_index == n_functions - 1:
            del self._residual[(workflow, request_id)]
        else:
            self._residual[(workflow, request_id)] = residual
        return residual

    # -- statistics and regeneration ---------------------------------------

    def counts(self, workflow: str | None = None) -> tuple[int, int]:
        with self._lock:
            hits = sum(v for k, v in self._hits.items() if workflow is None or k[0] == workflow)
            misses = sum(v for k, v in self._misses.items() if workflow is None or k[0] == workflow)
        return hits, misses

    def check_regen(self, workflow: str) -> bool:
        hits, misses = self.counts(workflow)
        if hits + misses == 0:
            raise ValueError(f"no lookups recorded for workflow {workflow!r}")
        fire = misses / (hits + misses) > self.miss_threshold
        with self._lock:
            self.regen_flag[workflow] = self.regen_flag.get(workflow, False) or fire
        return fire

    def install_tables(self, tables: Mapping[TableKey, HintsTable]) -> None:
        """Atomically replace the given keys; their counters and overlays reset."""
        for key, table in tables.items():
            errs = table.problems(self.grid)
            if errs:
                raise ValueError(f"invalid table {key}: {errs[0]}")
            if table.key != key:
                raise ValueError(f"table keyed {key} carries key {table.key}")
        with self._lock:
            merged = dict(self._tables)
            merged.update(tables)
            for key in tables:
                self._hits.pop(key, None)
                self._misses.pop(key, None)
                self._overlay.pop(key, None)
                self.regen_flag[key[0]] = False
            self._tables = merged

    @property
    def tables(self) -> Mapping[TableKey, HintsTable]:
        return self._tables
