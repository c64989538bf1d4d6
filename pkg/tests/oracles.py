"""Independent reference implementations used as test oracles.

These are deliberately naive: exhaustive enumeration with exact fractions,
linear scans, and plain loops.  They share no code with the package beyond
the data types.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from latebind.core import PercentileGrid, ResourceGrid
from latebind.profiler import LatencyProfile


def random_profile(rng, name, grid: ResourceGrid, pgrid: PercentileGrid, batch=1, scale=60) -> LatencyProfile:
    """Integer surface, non-increasing in size and non-decreasing in percentile."""
    n_p, n_k = len(pgrid), len(grid)
    base = np.cumsum(rng.integers(5, scale, size=n_k)[::-1])[::-1]
    inc = np.cumsum(rng.integers(0, 40, size=(n_p, n_k)), axis=0)
    surface = np.minimum.accumulate(base[None, :] + inc, axis=1)
    return LatencyProfile(name, batch, pgrid, grid, surface)


def random_instance(rng, max_n=3, max_sizes=4, max_percentiles=4):
    k = int(rng.integers(1, max_sizes))
    grid = ResourceGrid(1000, 1000 + 100 * k, 100)
    n_extra = int(rng.integers(1, max_percentiles))
    ps = sorted(int(x) for x in rng.choice(np.arange(1, 99), size=n_extra, replace=False))
    pgrid = PercentileGrid(tuple(ps) + (99,), 99)
    n = int(rng.integers(1, max_n + 1))
    weight = float(rng.choice([1.0, 1.5, 2.25, 3.0]))
    profiles = [random_profile(rng, f"f{i}", grid, pgrid) for i in range(n)]
    return profiles, weight


def brute_objective(profiles, t, weight, mode="head"):
    """Exhaustive minimum of the hint objective over percentiles and sizes.

    Returns None when no allocation satisfies the budget and resilience
    constraints.  ``mode`` "tail" pins the head at the tail percentile,
    "pair" also lets the second function pick a percentile (it then needs
    its own timeout covered by the functions after it).
    """
    grid = profiles[0].grid
    pg = profiles[0].percentiles
    n = len(profiles)
    kmax = grid.k_max
    tail = pg.tail
    w = Fraction(weight).limit_denominator(100)

    def lat(i, p, k):
        return profiles[i].latency(p, k)

    if n == 1:
        fits = [k for k in grid.sizes if lat(0, tail, k) <= t]
        return Fraction(min(fits)) if fits else None

    heads = [tail] if mode == "tail" else list(pg.values)
    seconds = list(pg.values) if (mode == "pair" and n >= 3) else [tail]
    best = None
    for p1 in heads:
        for p2 in seconds:
            for ks in itertools.product(grid.sizes, repeat=n):
                total = lat(0, p1, ks[0]) + lat(1, p2, ks[1]) + sum(lat(i, tail, ks[i]) for i in range(2, n))
                if total > t:
                    continue
                rest = sum(lat(i, tail, ks[i]) - lat(i, tail, kmax) for i in range(2, n))
                d1 = lat(0, tail, ks[0]) - lat(0, p1, ks[0])
                d2 = lat(1, tail, ks[1]) - lat(1, p2, ks[1])
                r2 = lat(1, p2, ks[1]) - lat(1, p2, kmax)
                if d1 > r2 + rest or d2 > rest:
                    continue
                q = Fraction(p1, 100)
                obj = w * ks[0] + q * sum(ks[1:]) + (1 - q) * (n - 1) * kmax
                if best is None or obj < best:
                    best = obj
    return best


def scan_lookup(rows, t):
    """Linear scan over (start, end, head) rows with inclusive bounds."""
    for r in rows:
        if r.t_start_ms <= t <= r.t_end_ms:
            return r.head_size
    return None


def run_length(pairs):
    """Run-length encode sorted (budget, head) pairs into [start, end, head] runs."""
    runs = []
    for t, h in pairs:
        if runs and runs[-1][2] == h and runs[-1][1] + 1 == t:
            runs[-1][1] = t
        else:
            runs.append([t, t, h])
    return [tuple(r) for r in runs]


def nearest_rank_percentile(values, p):
    s = sorted(values)
    rank = max(1, -(-p * len(s) // 100))
    return s[int(rank) - 1]


def static_p99_bruteforce(profiles, slo):
    """Least total size (ties: largest tail sum, then lexicographically smaller) fitting the SLO."""
    grid = profiles[0].grid
    tail = profiles[0].percentiles.tail
    best = None
    for ks in itertools.product(grid.sizes, repeat=len(profiles)):
        s = sum(p.latency(tail, k) for p, k in zip(profiles, ks))
        if s > slo:
            continue
        key = (sum(ks), -s, ks)
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def hindsight_bruteforce(lat, sizes, slo):
    """Least total size meeting the SLO by full enumeration (None if none)."""
    n, m = lat.shape
    best = None
    for idx in itertools.product(range(m), repeat=n):
        total = sum(lat[i, j] for i, j in enumerate(idx))
        if total <= slo:
            cost = sum(sizes[j] for j in idx)
            if best is None or cost < best:
                best = cost
    return best


def constraint_problems(profiles, hint):
    """Budget and resilience constraints re-checked from the profiles; empty when sound."""
    n = len(profiles)
    tail = profiles[0].percentiles.tail
    kmax = profiles[0].grid.k_max
    ks, ps = hint.allocation, hint.percentiles
    out = []
    total = sum(p.latency(q, k) for p, q, k in zip(profiles, ps, ks))
    if total > hint.t:
        out.append(f"t={hint.t}: latency sum {total} over budget")
    if n == 1:
        return out
    d = [p.latency(tail, k) - p.latency(q, k) for p, q, k in zip(profiles, ps, ks)]
    r = [p.latency(q, k) - p.latency(q, kmax) for p, q, k in zip(profiles, ps, ks)]
    if d[0] > sum(r[1:]):
        out.append(f"t={hint.t}: head timeout {d[0]} exceeds downstream resilience {sum(r[1:])}")
    if any(x != 0 for x in d[2:]):
        out.append(f"t={hint.t}: downstream function below tail percentile")
    if n >= 3 and d[1] > sum(r[2:]):
        out.append(f"t={hint.t}: second timeout {d[1]} exceeds resilience {sum(r[2:])}")
    return out
