"""Offline hint generation and condensing.

For a sub-workflow ``f_1..f_N`` and a time budget ``t`` a hint is the
allocation minimising the expected resource consumption

    W*k_1 + (p/100) * sum(k_2..k_N) + (1 - p/100) * (N-1) * K_max

subject to the budget (``L_1(p,k_1) + sum L_i(tail,k_i) <= t``) and to the
head's timeout fitting inside the downstream resilience
(``D_1(p,k_1) <= sum R_i(tail,k_i)``).  Only the head explores percentiles.

Objectives are compared in hundredths as exact integers, so weights must be
multiples of 0.01.

Downstream functions all run at the tail percentile, so their constraints only
involve the sum ``S`` of their tail latencies: the budget bounds ``S`` from
above and the resilience requirement bounds it from below.  A DP over ``S``
(minimum total millicores reaching exactly ``S``) plus a range-minimum table
answers "cheapest downstream allocation with S in [lo, hi]" in O(1), which
makes every budget of a table one vectorised pass.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    HintRow,
    HintsTable,
    PercentileGrid,
    ResourceGrid,
    TableKey,
    WorkflowSpec,
    check_weight,
)
from .profiler import LatencyProfile, chain_profiles

MODES = ("head", "tail", "pair")
TABLE_HEADER = ("workflow", "suffix", "weight", "batch", "t_start_ms", "t_end_ms", "head_millicores")

_BIG = np.int64(1) << 60
_IDX_BITS = 24
_CHUNK_ELEMS = 1 << 21


@dataclass(frozen=True)
class RawHint:
    t: int
    allocation: tuple[int, ...]
    head_percentile: int | None
    objective: float
    percentiles: tuple[int, ...] = ()

    @property
    def feasible(self) -> bool:
        return bool(self.allocation)


@dataclass(frozen=True, eq=False)
class RawHints:
    """Columnar raw hints for consecutive budgets.

    Infeasible budgets have an all-zero allocation row and ``feasible`` False.
    """

    budgets: np.ndarray
    allocation: np.ndarray  # (n_budgets, N) millicores
    percentiles: np.ndarray  # (n_budgets, N)
    objective100: np.ndarray  # objective in hundredths, -1 when infeasible
    feasible: np.ndarray

    def __len__(self) -> int:
        return len(self.budgets)

    def __getitem__(self, i: int) -> RawHint:
        t = int(self.budgets[i])
        if not self.feasible[i]:
            return RawHint(t, (), None, math.inf)
        return RawHint(
            t,
            tuple(int(k) for k in self.allocation[i]),
            int(self.percentiles[i, 0]),
            int(self.objective100[i]) / 100,
            tuple(int(p) for p in self.percentiles[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def heads(self) -> np.ndarray:
        return self.allocation[:, 0]


# --------------------------------------------------------------------------
# Single-function helpers


def budget_range(profiles: Sequence[LatencyProfile]) -> tuple[int, int]:
    """(sum of lowest-percentile latency at K_max, sum of tail latency at K_min)."""
    if not profiles:
        raise ValueError("budget_range needs at least one profile")
    t_min = sum(int(p.surface[0, -1]) for p in profiles)
    t_max = sum(int(p.surface[-1, 0]) for p in profiles)
    return t_min, t_max


def min_resource(profile: LatencyProfile, t: float) -> int | None:
    """Smallest grid size whose tail latency fits in ``t``; None if none does."""
    tail = profile.tail_row
    ok = np.nonzero(tail <= t)[0]
    if len(ok) == 0:
        return None
    return profile.grid.sizes[int(ok[0])]


def explore_percentile(profiles: Sequence[LatencyProfile], t: float) -> tuple[int, ...]:
    """Head percentiles that fit ``t`` when every function runs at K_max.

    The head runs at the candidate percentile and the rest at the tail.
    """
    if len(profiles) < 2:
        raise ValueError("explore_percentile needs a sub-workflow of at least two functions")
    rest = sum(int(p.tail_row[-1]) for p in profiles[1:])
    head = profiles[0]
    return tuple(p for i, p in enumerate(head.percentiles.values) if head.surface[i, -1] + rest <= t)


# --------------------------------------------------------------------------
# Downstream tail chain


class TailChain:
    """Cheapest allocations of a chain running at its tail percentile, by latency sum.

    ``mincost[S]`` is the least total millicores over allocations whose tail
    latencies sum to exactly ``S``.  Ties between sizes keep the smaller size
    for the earlier function.
    """

    def __init__(self, tail_rows: Sequence[np.ndarray], sizes: Sequence[int]):
        self.sizes = np.asarray(sizes, dtype=np.int64)
        self.rows = [np.asarray(r, dtype=np.int64) for r in tail_rows]
        self.smin = int(sum(int(r.min()) for r in self.rows))
        self.smax = int(sum(int(r.max()) for r in self.rows))
        if self.smax >= 1 << _IDX_BITS:
            raise ValueError(f"latency sum {self.smax} ms too large for the downstream table")
        n = self.smax + 1
        best = np.full(n, _BIG, dtype=np.int64)
        best[0] = 0
        self.choice: list[np.ndarray] = [None] * len(self.rows)  # type: ignore[list-item]
        for j in range(len(self.rows) - 1, -1, -1):
            new = np.full(n, _BIG, dtype=np.int64)
            pick = np.full(n, -1, dtype=np.int16)
            for ki, (lat, k) in enumerate(zip(self.rows[j], self.sizes)):
                lat = int(lat)
                cand = best[: n - lat] + k
                view = new[lat:]
                better = cand < view
                view[better] = cand[better]
                pick[lat:][better] = ki
            best = new
            self.choice[j] = pick
        best[best >= _BIG] = _BIG
        self.mincost = best
        self._build_rmq()

    def _build_rmq(self) -> None:
        n = len(self.mincost)
        idx = np.arange(n, dtype=np.int64)
        cost = np.minimum(self.mincost, (1 << 38) - 1)
        # min key -> min cost, then the largest S
        key = (cost << _IDX_BITS) | ((1 << _IDX_BITS) - 1 - idx)
        levels = [key]
        span = 1
        while 2 * span <= n:
            prev = levels[-1]
            levels.append(np.minimum(prev[: len(prev) - span], prev[span:]))
            span *= 2
        table = np.full((len(levels), n), _BIG, dtype=np.int64)
        for i, lev in enumerate(levels):
            table[i, : len(lev)] = lev
        self._table = table

    def query(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cheapest cost and its (largest) latency sum for S in [lo, hi].

        Cost is ``_BIG`` where the interval is empty or unreachable.
        """
        lo = np.maximum(np.asarray(lo, dtype=np.int64), self.smin)
        hi = np.minimum(np.asarray(hi, dtype=np.int64), self.smax)
        lo, hi = np.broadcast_arrays(lo, hi)
        valid = hi >= lo
        lo_c = np.where(valid, lo, 0)
        hi_c = np.where(valid, hi, 0)
        level = _floor_log2(hi_c - lo_c + 1)
        key = np.minimum(self._table[level, lo_c], self._table[level, hi_c - (1 << level) + 1])
        cost = key >> _IDX_BITS
        s = (1 << _IDX_BITS) - 1 - (key & ((1 << _IDX_BITS) - 1))
        bad = ~valid | (cost >= (1 << 38) - 1)
        cost = np.where(bad, _BIG, cost)
        s = np.where(bad, -1, s)
        return cost, s

    def backtrack(self, s: np.ndarray) -> np.ndarray:
        """Sizes (len(s), chain length) reaching each latency sum at least cost."""
        s = np.asarray(s, dtype=np.int64).copy()
        out = np.zeros((len(s), len(self.rows)), dtype=np.int64)
        for j, row in enumerate(self.rows):
            ki = self.choice[j][s].astype(np.int64)
            out[:, j] = self.sizes[ki]
            s -= row[ki]
        return out


def _floor_log2(x: np.ndarray) -> np.ndarray:
    """floor(log2(x)) for positive int64 arrays, exact."""
    _, e = np.frexp(x.astype(np.float64))
    return e.astype(np.int64) - 1


def _pick(obj: np.ndarray, tot: np.ndarray, k1: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Row index minimising (objective, total size, head size, -percentile) per column."""
    order = np.lexsort((-np.broadcast_to(p, obj.shape), np.broadcast_to(k1, obj.shape), tot, obj), axis=0)
    return order[0]


# --------------------------------------------------------------------------
# Suffix solvers


class SuffixSolver:
    """Exact hint generation for one sub-workflow, reusable across budgets.

    ``mode`` selects the percentile exploration: ``head`` explores the head,
    ``tail`` keeps every function at the tail, ``pair`` explores the head and
    the next-to-head function.
    """

    def __init__(
        self,
        profiles: Sequence[LatencyProfile],
        weight: float = 1.0,
        mode: str = "head",
        chains: dict | None = None,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown synthesis mode {mode!r}; expected one of {MODES}")
        if not profiles:
            raise ValueError("empty sub-workflow")
        grid = profiles[0].grid
        pgrid = profiles[0].percentiles
        for prof in profiles:
            if prof.grid != grid or prof.percentiles != pgrid:
                raise ValueError(f"profile {prof.function} uses different grids from {profiles[0].function}")
        self.profiles = list(profiles)
        self.grid = grid
        self.pgrid = pgrid
        self.w100 = check_weight(weight)
        self.mode = mode if len(profiles) >= 3 or mode != "pair" else "head"
        self.n = len(profiles)
        self.sizes = np.asarray(grid.sizes, dtype=np.int64)
        self.pvals = np.asarray(pgrid.values, dtype=np.int64)
        self._chains = chains if chains is not None else {}

    def _chain(self, start: int) -> TailChain:
        key = tuple((p.function, p.batch) for p in self.profiles[start:])
        if key not in self._chains:
            self._chains[key] = TailChain([p.tail_row for p in self.profiles[start:]], self.sizes)
        return self._chains[key]

    def solve(self, budgets: Iterable[int]) -> RawHints:
        t = np.asarray(list(budgets) if not isinstance(budgets, np.ndarray) else budgets, dtype=np.int64)
        if self.n == 1:
            return self._solve_single(t)
        if self.mode == "pair":
            return self._solve_pair(t)
        return self._solve_head(t)

    def _empty(self, t: np.ndarray) -> RawHints:
        m = len(t)
        return RawHints(
            t,
            np.zeros((m, self.n), dtype=np.int64),
            np.zeros((m, self.n), dtype=np.int64),
            np.full(m, -1, dtype=np.int64),
            np.zeros(m, dtype=bool),
        )

    def _solve_single(self, t: np.ndarray) -> RawHints:
        out = self._empty(t)
        tail = self.profiles[0].tail_row
        # tail is non-increasing in k: the fitting sizes form a suffix of the grid
        first = len(tail) - np.searchsorted(tail[::-1], t, side="right")
        ok = first < len(tail)
        ks = self.sizes[np.minimum(first, len(tail) - 1)]
        out.allocation[ok, 0] = ks[ok]
        out.percentiles[ok, 0] = self.pgrid.tail
        out.objective100[ok] = 100 * ks[ok]
        out.feasible[ok] = True
        return out

    def _head_combos(self):
        head = self.profiles[0].surface
        timeout = head[-1][None, :] - head
        p_idx = [len(self.pvals) - 1] if self.mode == "tail" else list(range(len(self.pvals)))
        P, K, LH, D = [], [], [], []
        for i in p_idx:
            for j in range(len(self.sizes)):
                P.append(self.pvals[i])
                K.append(self.sizes[j])
                LH.append(head[i, j])
                D.append(timeout[i, j])
        # explore_percentile: the head at K_max plus the rest at K_max and tail must fit
        pmax = np.array([head[i, -1] for i in p_idx for _ in range(len(self.sizes))], dtype=np.int64)
        return (np.asarray(P, dtype=np.int64), np.asarray(K, dtype=np.int64),
                np.asarray(LH, dtype=np.int64), np.asarray(D, dtype=np.int64), pmax)

    def _select(self, P, K, down_cost, extra_mask):
        """Winner row per budget column plus its objective; -1 where infeasible."""
        penalty = (100 - P)[:, None] * (self.n - 1) * self.grid.k_max
        feasible = (down_cost < _BIG) & extra_mask
        obj = np.where(feasible, self.w100 * K[:, None] + P[:, None] * down_cost + penalty, _BIG)
        tot = np.where(feasible, K[:, None] + down_cost, _BIG)
        win = _pick(obj, tot, K[:, None], P[:, None])
        cols = np.arange(obj.shape[1])
        ok = feasible[win, cols]
        return win, ok, obj[win, cols]

    def _solve_head(self, t: np.ndarray) -> RawHints:
        out = self._empty(t)
        chain = self._chain(1)
        P, K, LH, D, pmax = self._head_combos()
        lo = chain.smin + D
        step = max(1, _CHUNK_ELEMS // max(1, len(P)))
        for a in range(0, len(t), step):
            tc = t[a : a + step]
            hi = tc[None, :] - LH[:, None]
            cost, s = chain.query(lo[:, None], hi)
            explored = (pmax[:, None] + chain.smin) <= tc[None, :]
            win, ok, obj = self._select(P, K, cost, explored)
            cols = np.arange(len(tc))
            idx = np.nonzero(ok)[0]
            rows = a + idx
            out.feasible[rows] = True
            out.objective100[rows] = obj[idx]
            out.allocation[rows, 0] = K[win[idx]]
            out.percentiles[rows, 0] = P[win[idx]]
            out.percentiles[rows, 1:] = self.pgrid.tail
            out.allocation[rows, 1:] = chain.backtrack(s[win[idx], cols[idx]])
        return out

    def _solve_pair(self, t: np.ndarray) -> RawHints:
        out = self._empty(t)
        rest = self._chain(2)
        second = self.profiles[1].surface
        P1, K1, L1, D1, pmax = self._head_combos()
        c_down = int(self.profiles[1].tail_row[-1]) + rest.smin

        n_p, n_k = second.shape
        P2 = np.repeat(self.pvals, n_k)
        K2 = np.tile(self.sizes, n_p)
        L2 = second.reshape(-1)
        D2 = (second[-1][None, :] - second).reshape(-1)
        R2 = (second - second[:, -1:]).reshape(-1)

        h_lo = max(0, int(t.min()) - int(L1.max())) if len(t) else 0
        h_hi = max(h_lo, int(t.max()) - int(L1.min())) if len(t) else 0
        h = np.arange(h_lo, h_hi + 1, dtype=np.int64)

        # downstream value V(h, r): cheapest k_2..k_N given budget h and required resilience r
        rs = np.unique(D1)
        v_cost = np.full((len(rs), len(h)), _BIG, dtype=np.int64)
        v_k2 = np.zeros((len(rs), len(h)), dtype=np.int64)
        v_p2 = np.zeros((len(rs), len(h)), dtype=np.int64)
        v_s = np.full((len(rs), len(h)), -1, dtype=np.int64)
        step = max(1, _CHUNK_ELEMS // len(P2))
        for ri, r in enumerate(rs):
            lo = rest.smin + np.maximum(D2, r - R2)
            for a in range(0, len(h), step):
                hc = h[a : a + step]
                cost, s = rest.query(lo[:, None], hc[None, :] - L2[:, None])
                tot = np.where(cost < _BIG, K2[:, None] + cost, _BIG)
                win = np.lexsort((-np.broadcast_to(s, tot.shape), -np.broadcast_to(P2[:, None], tot.shape),
                                  np.broadcast_to(K2[:, None], tot.shape), tot), axis=0)[0]
                cols = np.arange(len(hc))
                v_cost[ri, a : a + step] = tot[win, cols]
                v_k2[ri, a : a + step] = K2[win]
                v_p2[ri, a : a + step] = P2[win]
                v_s[ri, a : a + step] = s[win, cols]

        r_of = np.searchsorted(rs, D1)
        step = max(1, _CHUNK_ELEMS // len(P1))
        for a in range(0, len(t), step):
            tc = t[a : a + step]
            hi = tc[None, :] - L1[:, None]
            inside = (hi >= h_lo) & (hi <= h_hi)
            hi_c = np.clip(hi, h_lo, h_hi) - h_lo
            rr = np.broadcast_to(r_of[:, None], hi.shape)
            cost = np.where(inside, v_cost[rr, hi_c], _BIG)
            explored = (pmax[:, None] + c_down) <= tc[None, :]
            win, ok, obj = self._select(P1, K1, cost, explored)
            idx = np.nonzero(ok)[0]
            rows = a + idx
            wr = r_of[win[idx]]
            wh = hi_c[win[idx], idx]
            out.feasible[rows] = True
            out.objective100[rows] = obj[idx]
            out.allocation[rows, 0] = K1[win[idx]]
            out.percentiles[rows, 0] = P1[win[idx]]
            out.allocation[rows, 1] = v_k2[wr, wh]
            out.percentiles[rows, 1] = v_p2[wr, wh]
            out.allocation[rows, 2:] = rest.backtrack(v_s[wr, wh])
            out.percentiles[rows, 2:] = self.pgrid.tail
        return out


# --------------------------------------------------------------------------
# Public operations


def generate(profiles: Sequence[LatencyProfile], t: int, weight: float = 1.0, mode: str = "head") -> RawHint:
    """Best hint for one budget; an infeasible hint has an empty allocation."""
    if t <= 0:
        raise ValueError(f"budget must be positive (got {t})")
    return SuffixSolver(profiles, weight, mode).solve([int(t)])[0]


def generate_table(
    profiles: Sequence[LatencyProfile],
    weight: float = 1.0,
    step_ms: int = 1,
    budgets: tuple[int, int] | None = None,
    mode: str = "head",
    chains: dict | None = None,
) -> RawHints:
    """Hints for every budget of the sub-workflow's range (or ``budgets``) at ``step_ms``."""
    lo, hi = budgets if budgets is not None else budget_range(profiles)
    if step_ms < 1:
        raise ValueError("step_ms must be >= 1")
    ts = np.arange(max(1, lo), hi + 1, step_ms, dtype=np.int64)
    return SuffixSolver(profiles, weight, mode, chains).solve(ts)


def condense(raw: RawHints | Iterable[RawHint], key: TableKey = ("workflow", 1, 1.0, 1)) -> HintsTable:
    """Fuse consecutive budgets sharing a head size into (start, end, size) rows.

    Infeasible budgets are skipped; the feasible budgets must be evenly spaced.
    With a step above 1 ms a row extends to just before the next row's start.
    """
    if isinstance(raw, RawHints):
        t = raw.budgets[raw.feasible]
        heads = raw.heads[raw.feasible]
    else:
        hints = sorted((h for h in raw if h.feasible), key=lambda h: h.t)
        t = np.asarray([h.t for h in hints], dtype=np.int64)
        heads = np.asarray([h.allocation[0] for h in hints], dtype=np.int64)
        order = np.argsort(t, kind="stable")
        t, heads = t[order], heads[order]
    if len(t) == 0:
        raise ValueError(f"{key}: no feasible hints to condense")
    gaps = np.diff(t)
    if len(gaps) and (gaps.min() != gaps.max() or gaps.min() <= 0):
        raise ValueError(f"{key}: budgets are not contiguous at a fixed step")
    breaks = np.nonzero(np.diff(heads))[0] + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks - 1, [len(t) - 1]))
    rows = []
    for n, (s, e) in enumerate(zip(starts, ends)):
        t_end = int(t[starts[n + 1]]) - 1 if n + 1 < len(starts) else int(t[e])
        rows.append(HintRow(int(t[s]), t_end, int(heads[s])))
    return HintsTable(key, tuple(rows))


def synthesize_all(
    spec: WorkflowSpec,
    profiles: Mapping[tuple[str, int], LatencyProfile],
    weights: Sequence[float] | None = None,
    batches: Sequence[int] | None = None,
    mode: str = "head",
    step_ms: int = 1,
    raw_sink: dict | None = None,
) -> dict[TableKey, HintsTable]:
    """One condensed table per suffix, per weight, per batch.

    Without ``weights`` each suffix uses the workflow's own head weight.  When
    ``raw_sink`` is given it receives the number of raw hints per key.
    """
    batches = tuple(batches) if batches else (spec.batch,)
    tables: dict[TableKey, HintsTable] = {}
    for b in batches:
        chain = chain_profiles(profiles, spec.functions, b)
        chains: dict = {}
        for i in range(1, len(spec) + 1):
            ws = tuple(weights) if weights else (spec.weights[i - 1],)
            for w in ws:
                key: TableKey = (spec.name, i, float(w), b)
                raw = generate_table(chain[i - 1 :], w, step_ms=step_ms, mode=mode, chains=chains)
                tables[key] = condense(raw, key)
                if raw_sink is not None:
                    raw_sink[key] = int(raw.feasible.sum())
    return tables


# --------------------------------------------------------------------------
# CSV persistence


def _fmt_weight(w: float) -> str:
    return repr(float(w))


def write_tables(path: str | Path, tables: Mapping[TableKey, HintsTable]) -> None:
    def order(key):
        wf, suffix, w, b = key
        return (wf, suffix, w, b)

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TABLE_HEADER)
        for key in sorted(tables, key=order):
            wf, suffix, w, b = key
            for r in tables[key].rows:
                out.writerow((wf, suffix, _fmt_weight(w), b, r.t_start_ms, r.t_end_ms, r.head_size))


def read_tables(path: str | Path) -> dict[TableKey, HintsTable]:
    rows: dict[TableKey, list[HintRow]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TABLE_HEADER:
            raise ValueError(f"{path}: line 1: expected header {','.join(TABLE_HEADER)}")
        for lineno, r in enumerate(reader, start=2):
            if not r:
                continue
            try:
                key = (r[0], int(r[1]), float(r[2]), int(r[3]))
                rows.setdefault(key, []).append(HintRow(int(r[4]), int(r[5]), int(r[6])))
            except (ValueError, IndexError):
                raise ValueError(f"{path}: line {lineno}: malformed row {r!r}") from None
    out = {}
    for key, rs in rows.items():
        table = HintsTable(key, tuple(sorted(rs, key=lambda x: x.t_start_ms)))
        errs = table.problems()
        if errs:
            raise ValueError(f"{path}: {errs[0]}")
        out[key] = table
    return out


def expected_consumption(hint: RawHint, k_max: int, weight: float = 1.0) -> float:
    """Objective of a hint recomputed from its allocation (for checks and reports)."""
    n = len(hint.allocation)
    if n == 1:
        return float(hint.allocation[0])
    p = hint.head_percentile / 100
    return weight * hint.allocation[0] + p * sum(hint.allocation[1:]) + (1 - p) * (n - 1) * k_max
