"""Empirical latency surfaces L(p, k) and the timeout/resilience metrics.

A profile holds, for one (function, batch), the nearest-rank latency at each
grid percentile and grid size, corrected so it never gets slower with more
compute.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import PercentileGrid, ResourceGrid

SAMPLE_HEADER = ("function", "batch", "millicores", "latency_ms")
PROFILE_HEADER = ("function", "batch", "percentile", "millicores", "latency_ms")

DEFAULT_MIN_SAMPLES = 100


class ProfileError(ValueError):
    pass


@dataclass
class LatencySamples:
    function: str
    batch: int
    by_size: dict[int, list[float]] = field(default_factory=dict)

    def add(self, k: int, latency_ms: float) -> None:
        self.by_size.setdefault(k, []).append(latency_ms)


@dataclass(frozen=True, eq=False)
class LatencyProfile:
    function: str
    batch: int
    percentiles: PercentileGrid
    grid: ResourceGrid
    surface: np.ndarray  # shape (len(percentiles), len(grid)), int64 ms

    def __post_init__(self):
        s = np.asarray(self.surface, dtype=np.int64)
        if s.shape != (len(self.percentiles), len(self.grid)):
            raise ProfileError(f"surface shape {s.shape} does not match grids")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "surface", s)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatencyProfile):
            return NotImplemented
        return (
            (self.function, self.batch, self.percentiles, self.grid)
            == (other.function, other.batch, other.percentiles, other.grid)
            and np.array_equal(self.surface, other.surface)
        )

    __hash__ = None  # type: ignore[assignment]

    def latency(self, p: int, k: int) -> int:
        return int(self.surface[self.percentiles.index(p), self.grid.index(k)])

    @property
    def tail_row(self) -> np.ndarray:
        return self.surface[-1]

    def scaled(self, factor: float) -> "LatencyProfile":
        """Same profile with every latency multiplied and rounded up."""
        return LatencyProfile(self.function, self.batch, self.percentiles, self.grid,
                              np.ceil(self.surface * factor - 1e-9).astype(np.int64))


def pava_decreasing(y: Iterable[float]) -> np.ndarray:
    """Least-squares non-increasing fit by pool-adjacent-violators (unit weights)."""
    vals: list[float] = []
    counts: list[int] = []
    for v in y:
        vals.append(float(v))
        counts.append(1)
        # pool while the block means increase left to right
        while len(vals) > 1 and vals[-2] < vals[-1]:
            n = counts[-2] + counts[-1]
            m = (vals[-2] * counts[-2] + vals[-1] * counts[-1]) / n
            vals[-2:] = [m]
            counts[-2:] = [n]
    return np.repeat(vals, counts)


def extract_profile(
    samples: LatencySamples,
    grid: ResourceGrid,
    percentiles: PercentileGrid,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> LatencyProfile:
    """Nearest-rank percentiles of each size's samples, made non-increasing in k."""
    grid.check()
    percentiles.check()
    raw = np.empty((len(percentiles), len(grid)), dtype=float)
    for j, k in enumerate(grid.sizes):
        obs = samples.by_size.get(k)
        if obs is None:
            raise ProfileError(f"{samples.function}/batch {samples.batch}: no samples at {k} millicores")
        if len(obs) < min_samples:
            raise ProfileError(
                f"{samples.function}/batch {samples.batch}: {len(obs)} samples at {k} millicores, "
                f"need at least {min_samples}"
            )
        arr = np.sort(np.asarray(obs, dtype=float))
        if arr[0] <= 0:
            raise ProfileError(f"{samples.function}/batch {samples.batch}: non-positive latency at {k} millicores")
        n = len(arr)
        for i, p in enumerate(percentiles.values):
            raw[i, j] = arr[max(1, math.ceil(p * n / 100)) - 1]
    fitted = np.vstack([pava_decreasing(row) for row in raw])
    surface = np.floor(fitted + 0.5).astype(np.int64)
    return LatencyProfile(samples.function, samples.batch, percentiles, grid, surface)


def timeout(profile: LatencyProfile, p: int, k: int) -> int:
    """Latency underestimate risk of sizing at percentile p: L(tail, k) - L(p, k)."""
    return profile.latency(profile.percentiles.tail, k) - profile.latency(p, k)


def resilience(profile: LatencyProfile, p: int, k: int) -> int:
    """Latency that scaling from k to the largest size could still remove: L(p, k) - L(p, K_max)."""
    return profile.latency(p, k) - profile.latency(p, profile.grid.k_max)


def timeout_surface(profile: LatencyProfile) -> np.ndarray:
    return profile.surface[-1][None, :] - profile.surface


def resilience_surface(profile: LatencyProfile) -> np.ndarray:
    return profile.surface - profile.surface[:, -1:]


# --------------------------------------------------------------------------
# CSV persistence


def _check_header(header: list[str] | None, expected: tuple[str, ...], path) -> None:
    if header is None:
        raise ProfileError(f"{path}: no samples (empty file)")
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise ProfileError(f"{path}: line 1: duplicate column(s) {', '.join(dupes)}")
    if tuple(h.strip() for h in header) != expected:
        raise ProfileError(f"{path}: line 1: expected header {','.join(expected)}, got {','.join(header)}")


def read_samples(path: str | Path) -> dict[tuple[str, int], LatencySamples]:
    out: dict[tuple[str, int], LatencySamples] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), SAMPLE_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ProfileError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                fn, batch, k, lat = row[0], int(row[1]), int(row[2]), float(row[3])
            except ValueError:
                raise ProfileError(f"{path}: line {lineno}: malformed row {row!r}") from None
            if lat <= 0 or batch < 1:
                raise ProfileError(f"{path}: line {lineno}: latency and batch must be positive")
            out.setdefault((fn, batch), LatencySamples(fn, batch)).add(k, lat)
    if not out:
        raise ProfileError(f"{path}: no samples")
    return out


def write_samples(path: str | Path, samples: Iterable[LatencySamples]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_HEADER)
        for s in samples:
            for k in sorted(s.by_size):
                for lat in s.by_size[k]:
                    w.writerow((s.function, s.batch, k, _fmt_num(lat)))


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_profiles(path: str | Path, profiles: Iterable[LatencyProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for prof in profiles:
            for i, p in enumerate(prof.percentiles.values):
                for j, k in enumerate(prof.grid.sizes):
                    w.writerow((prof.function, prof.batch, p, k, int(prof.surface[i, j])))


def read_profiles(path: str | Path) -> dict[tuple[str, int], LatencyProfile]:
    cells: dict[tuple[str, int], dict[tuple[int, int], int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), PROFILE_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                fn, batch, p, k, lat = row[0], int(row[1]), int(row[2]), int(row[3]), int(row[4])
            except (ValueError, IndexError):
                raise ProfileError(f"{path}: line {lineno}: malformed row {row!r}") from None
            cells.setdefault((fn, batch), {})[(p, k)] = lat
    if not cells:
        raise ProfileError(f"{path}: no profile rows")
    out = {}
    for key, cell in cells.items():
        ps = sorted({p for p, _ in cell})
        ks = sorted({k for _, k in cell})
        step = ks[1] - ks[0] if len(ks) > 1 else 1
        grid = ResourceGrid(ks[0], ks[-1], step).check()
        if tuple(ks) != grid.sizes:
            raise ProfileError(f"{path}: {key}: millicores {ks} are not an evenly spaced grid")
        pgrid = PercentileGrid(tuple(ps), ps[-1]).check()
        try:
            surface = [[cell[(p, k)] for k in ks] for p in ps]
        except KeyError as exc:
            raise ProfileError(f"{path}: {key}: missing cell (percentile, millicores)={exc.args[0]}") from None
        out[key] = LatencyProfile(key[0], key[1], pgrid, grid, np.array(surface))
    return out


def profiles_by_key(profiles: Iterable[LatencyProfile]) -> dict[tuple[str, int], LatencyProfile]:
    return {(p.function, p.batch): p for p in profiles}


def chain_profiles(
    profiles: Mapping[tuple[str, int], LatencyProfile], functions: Iterable[str], batch: int
) -> list[LatencyProfile]:
    out = []
    for fn in functions:
        try:
            out.append(profiles[(fn, batch)])
        except KeyError:
            raise ProfileError(f"missing profile for function {fn!r} at batch {batch}") from None
    return out
