"""Discrete-event replay of request streams through a function chain.

Every policy sees the same per-request difficulty draws (common random
numbers), so reports from one seed can be compared request by request.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .adapter import Adapter, MissPolicy, Source
from .core import HintsTable, InfeasibleError, TableKey, WorkflowSpec, nearest_rank
from .profiler import LatencyProfile
from .synthesizer import TailChain, generate

POLICIES = ("late_bind", "late_bind_tail", "late_bind_pair", "early_bind_p99", "early_bind_identical", "optimal")
# synthesis mode backing each table-driven policy
POLICY_MODES = {"late_bind": "head", "late_bind_tail": "tail", "late_bind_pair": "pair"}

BYPASS = "bypass"
STATIC = "static"
HINDSIGHT = "hindsight"


@dataclass(frozen=True)
class DynamicsModel:
    """Runtime variation layered on top of the profiled latency distribution.

    ``interference[c - 1]`` multiplies the latency of an invocation that
    starts while ``c`` invocations of the same function are running on the
    host (itself included), with ``c`` capped at ``host_capacity``.
    """

    sigma: Mapping[str, float] = field(default_factory=dict)
    cap: float = 4.0
    interference: tuple[float, ...] = (1.0,)
    host_capacity: int = 6
    latency_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sigma", dict(self.sigma))
        object.__setattr__(self, "interference", tuple(float(x) for x in self.interference))
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if any(s < 0 for s in self.sigma.values()):
            raise ValueError("workset sigma must be non-negative")
        if not self.interference or self.interference[0] < 1:
            raise ValueError("interference curve must start at a multiplier >= 1")
        if any(b < a for a, b in zip(self.interference, self.interference[1:])):
            raise ValueError("interference curve must be non-decreasing in co-location count")
        if self.host_capacity < 1:
            raise ValueError("host_capacity must be >= 1")
        if self.latency_scale <= 0:
            raise ValueError("latency_scale must be positive")

    def workset(self, function: str, z: float) -> float:
        s = self.sigma.get(function, 0.0)
        return min(self.cap, math.exp(s * abs(z))) if s else 1.0

    def colocation(self, count: int) -> float:
        c = min(max(count, 1), self.host_capacity)
        return self.interference[min(c, len(self.interference)) - 1]


@dataclass(frozen=True)
class ShiftSpec:
    latency_scale: float = 1.0
    sigma_scale: float = 1.0
    sigma_add: float = 0.0
    interference_scale: float = 1.0


def distribution_shift(dynamics: DynamicsModel, shift: ShiftSpec) -> DynamicsModel:
    """Dynamics with latencies scaled and noise and interference amplified."""
    sigma = {f: s * shift.sigma_scale + shift.sigma_add for f, s in dynamics.sigma.items()}
    # interference is scaled on its excess over 1 so the curve stays >= 1
    inter = tuple(1 + (m - 1) * shift.interference_scale for m in dynamics.interference)
    return replace(
        dynamics,
        sigma=sigma,
        interference=inter,
        latency_scale=dynamics.latency_scale * shift.latency_scale,
    )


def parse_dynamics(obj: dict | None) -> DynamicsModel:
    if obj is None:
        return DynamicsModel()
    allowed = {"sigma", "cap", "interference", "host_capacity", "latency_scale"}
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ValueError(f"dynamics: unknown field(s) {', '.join(extra)}")
    return DynamicsModel(
        sigma={str(k): float(v) for k, v in obj.get("sigma", {}).items()},
        cap=float(obj.get("cap", 4.0)),
        interference=tuple(obj.get("interference", (1.0,))),
        host_capacity=int(obj.get("host_capacity", 6)),
        latency_scale=float(obj.get("latency_scale", 1.0)),
    )


# --------------------------------------------------------------------------
# Latency model


def inverse_cdf(profile: LatencyProfile, u, size_index=None) -> np.ndarray:
    """Profile latency at quantile ``u``, linear between percentile anchors.

    Quantiles outside the lowest and tail anchors take the anchor value, so
    no draw is slower than the profiled tail.  With ``size_index`` the result
    is for that size only, otherwise for every size (last axis).
    """
    anchors = np.asarray(profile.percentiles.values, dtype=float) / 100
    u = np.asarray(u, dtype=float)
    if size_index is not None:
        return np.interp(u, anchors, profile.surface[:, size_index].astype(float))
    cols = [np.interp(u, anchors, profile.surface[:, j].astype(float)) for j in range(len(profile.grid))]
    return np.stack(cols, axis=-1)


def sample_latency(
    model: DynamicsModel, profile: LatencyProfile, k: int, u: float, z: float = 0.0, colocated: int = 1
) -> float:
    """Realized latency of one invocation with difficulty ``u`` at size ``k``."""
    base = float(inverse_cdf(profile, u, profile.grid.index(k)))
    return base * model.workset(profile.function, z) * model.colocation(colocated) * model.latency_scale


def draw_difficulty(seed: int, n_groups: int, n_functions: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantile draws ``u`` and workset normals ``z``, shape (n_groups, n_functions)."""
    rng = np.random.default_rng(seed)
    u = rng.random((n_groups, n_functions))
    z = rng.standard_normal((n_groups, n_functions))
    return u, z


def reprofile_samples(
    model: DynamicsModel, profile: LatencyProfile, n: int, seed: int
) -> dict[int, list[float]]:
    """Fresh whole-millisecond samples at every size under ``model``."""
    rng = np.random.default_rng([seed, profile.batch, *profile.function.encode()])
    out = {}
    for j, k in enumerate(profile.grid.sizes):
        u = rng.random(n)
        z = rng.standard_normal(n)
        base = inverse_cdf(profile, u, j)
        mult = np.array([model.workset(profile.function, zz) for zz in z])
        out[k] = np.ceil(base * mult * model.latency_scale - 1e-9).tolist()
    return out


# --------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class RequestTrace:
    request_id: int
    sizes: tuple[int, ...]
    latencies_ms: tuple[float, ...]
    sources: tuple[str, ...]
    end_to_end_ms: float
    slo_ms: float

    @property
    def slack(self) -> float:
        return 1 - self.end_to_end_ms / self.slo_ms

    @property
    def slo_met(self) -> bool:
        return self.end_to_end_ms <= self.slo_ms

    @property
    def total_millicore_ms(self) -> float:
        return math.fsum(k * l for k, l in zip(self.sizes, self.latencies_ms))

    @property
    def millicores(self) -> int:
        """Resource consumption: the request's summed allocation."""
        return sum(self.sizes)


@dataclass
class SimReport:
    policy: str
    slo_ms: float
    traces: list[RequestTrace]
    hits: int = 0
    misses: int = 0

    def _sorted_e2e(self) -> list[float]:
        return sorted(t.end_to_end_ms for t in self.traces)

    def percentile(self, p: float) -> float:
        return nearest_rank(self._sorted_e2e(), p)

    @property
    def violation_rate(self) -> float:
        return sum(not t.slo_met for t in self.traces) / len(self.traces)

    @property
    def mean_consumption(self) -> float:
        """Mean summed allocation per request, in millicores."""
        return sum(t.millicores for t in self.traces) / len(self.traces)

    @property
    def mean_millicore_ms(self) -> float:
        return math.fsum(t.total_millicore_ms for t in self.traces) / len(self.traces)

    @property
    def miss_rate(self) -> float:
        n = self.hits + self.misses
        return self.misses / n if n else 0.0

    @property
    def bypasses(self) -> int:
        return sum(s == BYPASS for t in self.traces for s in t.sources)

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "n_requests": len(self.traces),
            "slo_ms": self.slo_ms,
            "p50_ms": self.percentile(50),
            "p95_ms": self.percentile(95),
            "p99_ms": self.percentile(99),
            "violation_rate": self.violation_rate,
            "mean_millicores": self.mean_consumption,
            "mean_millicore_ms": self.mean_millicore_ms,
            "hits": self.hits,
            "misses": self.misses,
            "miss_rate": self.miss_rate,
            "bypasses": self.bypasses,
        }


def normalized_consumption(reports: Mapping[str, SimReport], baseline: str = "optimal") -> dict[str, float]:
    base = reports[baseline].mean_consumption
    return {name: r.mean_consumption / base for name, r in reports.items()}


# --------------------------------------------------------------------------
# Static allocations


def early_bind_p99(profiles: Sequence[LatencyProfile], slo_ms: float) -> tuple[int, ...]:
    """Least total size whose tail latencies fit the SLO.

    Ties keep the allocation with the largest latency sum, then smaller
    sizes for earlier functions.
    """
    chain = TailChain([p.tail_row for p in profiles], profiles[0].grid.sizes)
    cost, s = chain.query(np.array([0]), np.array([math.floor(slo_ms)]))
    if s[0] < 0:
        raise InfeasibleError(
            f"SLO {slo_ms} ms below the fastest tail latency sum {chain.smin} ms"
        )
    return tuple(int(k) for k in chain.backtrack(s)[0])


def early_bind_identical(profiles: Sequence[LatencyProfile], slo_ms: float) -> tuple[int, ...]:
    """Smallest common size whose tail latencies fit the SLO."""
    sizes = profiles[0].grid.sizes
    for j, k in enumerate(sizes):
        if sum(int(p.tail_row[j]) for p in profiles) <= slo_ms:
            return (k,) * len(profiles)
    raise InfeasibleError(f"SLO {slo_ms} ms unreachable with identical sizes")


def hindsight_optimal(lat: np.ndarray, sizes: Sequence[int], slo_ms: float) -> tuple[int, ...]:
    """Least total size meeting the SLO for known latencies.

    ``lat[i, j]`` is function i's latency at size j.  Exhaustive over the
    grid with dominated partial allocations pruned; among equal totals the
    fastest wins.  When nothing meets the SLO every function gets the
    smallest size, which keeps this a lower bound on any policy.
    """
    ks = np.asarray(sizes, dtype=np.int64)
    n, m = lat.shape
    # partial states: total latency, total size, size indices
    tot = np.zeros(1)
    cost = np.zeros(1, dtype=np.int64)
    idx = np.zeros((1, 0), dtype=np.int64)
    remaining_min = np.concatenate((np.cumsum(lat.min(axis=1)[::-1])[::-1][1:], [0.0]))
    for i in range(n):
        tot = (tot[:, None] + lat[i][None, :]).ravel()
        cost = (cost[:, None] + ks[None, :]).ravel()
        idx = np.hstack((np.repeat(idx, m, axis=0), np.tile(np.arange(m), len(idx))[:, None]))
        ok = tot + remaining_min[i] <= slo_ms
        if not ok.any():
            return (int(sizes[0]),) * n
        tot, cost, idx = tot[ok], cost[ok], idx[ok]
        # keep the Pareto front in (latency, consumption)
        order = np.lexsort((cost, tot))
        tot, cost, idx = tot[order], cost[order], idx[order]
        prior = np.minimum.accumulate(np.concatenate(([np.iinfo(np.int64).max], cost[:-1])))
        front = cost < prior
        tot, cost, idx = tot[front], cost[front], idx[front]
    best = int(np.argmin(cost))
    return tuple(int(sizes[j]) for j in idx[best])


# --------------------------------------------------------------------------
# Event-driven replay

# decide(request, function index 0-based, residual budget) -> (size, source)
Decider = Callable[[int, int, float], "tuple[int, str]"]


def replay(
    spec: WorkflowSpec,
    profiles: Sequence[LatencyProfile],
    dynamics: DynamicsModel,
    decide: Decider,
    n_requests: int,
    u: np.ndarray,
    z: np.ndarray,
    arrival_interval_ms: float | None = None,
    on_complete: Callable[[int, int, float, int], None] | None = None,
) -> list[RequestTrace]:
    """Run requests through the chain and return one trace per request.

    Requests in one batch of ``spec.batch`` share an invocation.  Without an
    arrival interval each batch starts when the previous one finishes.
    """
    n_fn = len(spec)
    b = spec.batch
    n_groups = -(-n_requests // b)
    sizes = [[0] * n_fn for _ in range(n_groups)]
    lats = [[0.0] * n_fn for _ in range(n_groups)]
    srcs = [[""] * n_fn for _ in range(n_groups)]
    residual = [float(spec.slo_ms)] * n_groups
    inflight = [0] * n_fn
    events: list[tuple[float, int, int, int, int]] = []  # time, seq, kind, group, fn
    seq = 0
    ARRIVE, DONE = 0, 1

    def push(time, kind, g, i):
        nonlocal seq
        heapq.heappush(events, (time, seq, kind, g, i))
        seq += 1

    def start(now, g, i):
        if residual[g] <= 0:
            k, src = profiles[i].grid.k_max, BYPASS
        else:
            k, src = decide(g, i, residual[g])
        inflight[i] += 1
        prof = profiles[i]
        lat = sample_latency(dynamics, prof, k, u[g, i], z[g, i], inflight[i])
        sizes[g][i], lats[g][i], srcs[g][i] = k, lat, src
        push(now + lat, DONE, g, i)

    if arrival_interval_ms is None:
        push(0.0, ARRIVE, 0, 0)
    else:
        for g in range(n_groups):
            push(g * arrival_interval_ms, ARRIVE, g, 0)
    while events:
        now, _, kind, g, i = heapq.heappop(events)
        if kind == ARRIVE:
            start(now, g, 0)
            continue
        inflight[i] -= 1
        residual[g] -= lats[g][i]
        if on_complete is not None:
            on_complete(g, i, lats[g][i], n_fn)
        if i + 1 < n_fn:
            start(now, g, i + 1)
        elif arrival_interval_ms is None and g + 1 < n_groups:
            push(now, ARRIVE, g + 1, 0)
    traces = []
    for r in range(n_requests):
        g = r // b
        traces.append(RequestTrace(r, tuple(sizes[g]), tuple(lats[g]), tuple(srcs[g]),
                                   math.fsum(lats[g]), float(spec.slo_ms)))
    return traces


def run_policy(
    policy: str,
    spec: WorkflowSpec,
    profiles: Sequence[LatencyProfile],
    dynamics: DynamicsModel = DynamicsModel(),
    n_requests: int = 1000,
    seed: int = 0,
    tables: Mapping[TableKey, HintsTable] | None = None,
    adapter: Adapter | None = None,
    miss_policy: MissPolicy | str = MissPolicy.SCALE_TO_MAX,
    arrival_interval_ms: float | None = None,
    log=None,
) -> SimReport:
    """Simulate ``n_requests`` under one policy.

    ``profiles`` are the chain's profiles at ``spec.batch`` and drive both the
    latency model and the static baselines.  Table-driven policies take
    either ``tables`` or a ready ``adapter`` (whose counters then persist
    across calls).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}")
    if n_requests < 1:
        raise ValueError("n_requests must be >= 1")
    if len(profiles) != len(spec):
        raise ValueError(f"{len(profiles)} profiles for a chain of {len(spec)} functions")
    n_groups = -(-n_requests // spec.batch)
    u, z = draw_difficulty(seed, n_groups, len(spec))
    grid = profiles[0].grid
    on_complete = None
    hits0 = misses0 = 0

    if policy in POLICY_MODES:
        if adapter is None:
            if tables is None:
                raise ValueError(f"policy {policy} needs hint tables")
            mode = POLICY_MODES[policy]
            regen = None
            if MissPolicy(miss_policy) is MissPolicy.REGENERATE:
                def regen(key: TableKey, t: int) -> int | None:
                    hint = generate(profiles[key[1] - 1 :], t, key[2], mode)
                    return int(hint.allocation[0]) if hint.feasible else None
            adapter = Adapter(tables, grid, miss_policy, regenerator=regen, log=log)
        hits0, misses0 = adapter.counts(spec.name)

        def decide(g, i, residual):
            d = adapter.adapt(spec.name, i + 1, residual, spec.weights[i], spec.batch, request_id=g)
            src = d.source.value
            return d.head_size, src

        def on_complete(g, i, lat, n):
            adapter.record_completion(spec.name, g, i, lat, n)

        for g in range(n_groups):
            adapter.open_request(spec.name, g, spec.slo_ms)
    elif policy == "optimal":
        plans = []
        for g in range(n_groups):
            lat = np.stack([
                inverse_cdf(p, u[g, i]) * dynamics.workset(p.function, z[g, i]) * dynamics.latency_scale
                for i, p in enumerate(profiles)
            ])
            plans.append(hindsight_optimal(lat, grid.sizes, spec.slo_ms))

        def decide(g, i, residual):
            return plans[g][i], HINDSIGHT
    else:
        fixed = (early_bind_p99 if policy == "early_bind_p99" else early_bind_identical)(profiles, spec.slo_ms)

        def decide(g, i, residual):
            return fixed[i], STATIC

    traces = replay(spec, profiles, dynamics, decide, n_requests, u, z, arrival_interval_ms, on_complete)
    report = SimReport(policy, float(spec.slo_ms), traces)
    if adapter is not None:
        hits, misses = adapter.counts(spec.name)
        report.hits, report.misses = hits - hits0, misses - misses0
    return report
