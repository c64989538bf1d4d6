"""Synthetic function families standing in for measured serverless functions.

Latency at size k is an Amdahl-style base curve ``serial + parallel * k_ref / k``
times a log-normal working-set multiplier clipped so that the slowest and
fastest draw differ by at most ``cap``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .core import ConfigError, ResourceGrid, nearest_rank
from .profiler import LatencySamples

_STD = NormalDist()
Z99 = _STD.inv_cdf(0.99)
BAND = 0.10

_FAMILY_FIELDS = {"name", "serial_ms", "parallel_ms", "k_ref", "p99_p50", "sigma", "cap", "batch_scale", "interference"}


@dataclass(frozen=True)
class FunctionFamily:
    name: str
    serial_ms: float
    parallel_ms: float
    k_ref: int = 1000
    p99_p50: float | None = 1.5
    sigma: float | None = None
    cap: float = 4.0
    batch_scale: dict[int, float] = field(default_factory=lambda: {1: 1.0})
    interference: tuple[float, ...] = ()

    def __post_init__(self):
        if self.serial_ms < 0 or self.parallel_ms < 0 or self.serial_ms + self.parallel_ms <= 0:
            raise ConfigError(f"family {self.name}: base curve must be strictly positive")
        if self.cap < 1:
            raise ConfigError(f"family {self.name}: cap must be >= 1")
        if any(b < 1 or s <= 0 for b, s in self.batch_scale.items()):
            raise ConfigError(f"family {self.name}: batch_scale needs positive batches and factors")
        if self.p99_p50 is not None and self.sigma is None and self.p99_p50 > math.sqrt(self.cap) + 1e-12:
            raise ConfigError(
                f"family {self.name}: P99/P50 target {self.p99_p50} unreachable under cap {self.cap} "
                f"(at most {math.sqrt(self.cap):.3f})"
            )

    def base(self, k: float, batch: int = 1) -> float:
        try:
            scale = self.batch_scale[batch]
        except KeyError:
            raise ValueError(f"family {self.name}: no batch_scale entry for batch {batch}") from None
        return (self.serial_ms + self.parallel_ms * self.k_ref / k) * scale

    @property
    def workset_sigma(self) -> float:
        if self.sigma is not None:
            return self.sigma
        return math.log(self.p99_p50) / Z99 if self.p99_p50 else 0.0

    @property
    def target_ratio(self) -> float:
        """P99/P50 the generated samples should show."""
        if self.sigma is None and self.p99_p50 is not None:
            return self.p99_p50
        return min(math.exp(Z99 * self.workset_sigma), math.sqrt(self.cap))


def parse_family(obj: dict) -> FunctionFamily:
    if not isinstance(obj, dict):
        raise ConfigError("family: expected an object")
    extra = sorted(set(obj) - _FAMILY_FIELDS)
    if extra:
        raise ConfigError(f"family: unknown field(s) {', '.join(extra)}")
    for req in ("name", "serial_ms", "parallel_ms"):
        if req not in obj:
            raise ConfigError(f"family: missing field '{req}'")
    return FunctionFamily(
        name=str(obj["name"]),
        serial_ms=float(obj["serial_ms"]),
        parallel_ms=float(obj["parallel_ms"]),
        k_ref=int(obj.get("k_ref", 1000)),
        p99_p50=None if obj.get("p99_p50", 1.5) is None else float(obj.get("p99_p50", 1.5)),
        sigma=None if obj.get("sigma") is None else float(obj["sigma"]),
        cap=float(obj.get("cap", 4.0)),
        batch_scale={int(b): float(s) for b, s in obj.get("batch_scale", {"1": 1.0}).items()},
        interference=tuple(float(x) for x in obj.get("interference", ())),
    )


def family_rng(family: FunctionFamily, seed: int, batch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, batch, zlib.crc32(family.name.encode())]))


def generate_samples(
    family: FunctionFamily, grid: ResourceGrid, n: int = 200, seed: int = 0, batch: int = 1
) -> LatencySamples:
    """Deterministic latency samples (whole milliseconds, rounded up) at every grid size.

    Normal draws are stratified (one jittered draw per 1/n probability slice,
    in random order), so sample percentiles track the target closely even at
    n = 100.
    """
    if n < 100:
        raise ValueError(f"need at least 100 samples per size (got {n})")
    rng = family_rng(family, seed, batch)
    sigma = family.workset_sigma
    half_span = math.log(family.cap) / 2
    out = LatencySamples(family.name, batch)
    for k in grid.sizes:
        strata = (rng.permutation(n) + rng.random(n)) / n
        z = np.array([_STD.inv_cdf(min(max(q, 1e-12), 1 - 1e-12)) for q in strata])
        mult = np.exp(np.clip(sigma * z, -half_span, half_span))
        lat = np.maximum(1.0, np.ceil(family.base(k, batch) * mult - 1e-9))
        out.by_size[k] = lat.tolist()
    ratio = sample_ratio(out, grid.k_min)
    target = family.target_ratio
    if not (target * (1 - BAND) <= ratio <= target * (1 + BAND)):
        raise ValueError(
            f"family {family.name}: sampled P99/P50 {ratio:.3f} outside {target:.3f} +/- {BAND:.0%}"
        )
    return out


def sample_ratio(samples: LatencySamples, k: int) -> float:
    s = sorted(samples.by_size[k])
    return nearest_rank(s, 99) / nearest_rank(s, 50)
