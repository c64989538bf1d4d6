"""Self-contained simulation scenarios: workflow, synthetic families, dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, TextIO

from .adapter import Adapter, MissPolicy
from .core import ConfigError, HintsTable, TableKey, WorkflowConfig, load_json, parse_workflow
from .profiler import LatencyProfile, LatencySamples, chain_profiles, extract_profile, read_profiles
from .simulator import (
    POLICIES,
    POLICY_MODES,
    DynamicsModel,
    SimReport,
    parse_dynamics,
    reprofile_samples,
    run_policy,
)
from .synthesizer import synthesize_all
from .workloads import FunctionFamily, generate_samples, parse_family

_FIELDS = {
    "name", "workflow", "families", "profiles", "samples_per_size", "dynamics",
    "policies", "n_requests", "seed", "miss_policy", "arrival_interval_ms",
}

DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class Scenario:
    name: str
    config: WorkflowConfig
    families: tuple[FunctionFamily, ...] = ()
    profiles_path: Path | None = None
    samples_per_size: int = 200
    dynamics: DynamicsModel = DynamicsModel()
    policies: tuple[str, ...] = POLICIES
    n_requests: int = 1000
    seed: int = 0
    miss_policy: MissPolicy = MissPolicy.SCALE_TO_MAX
    arrival_interval_ms: float | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def spec(self):
        return self.config.spec

    def build_profiles(self, seed: int | None = None) -> dict[tuple[str, int], LatencyProfile]:
        """Profiles for every function at every batch the scenario synthesizes."""
        if self.profiles_path is not None:
            return read_profiles(self.profiles_path)
        seed = self.seed if seed is None else seed
        batches = sorted(set(self.config.synthesis.batches) | {self.spec.batch})
        grid, pgrid = self.config.grid, self.config.percentiles
        out = {}
        for fam in self.families:
            for b in batches:
                samples = generate_samples(fam, grid, self.samples_per_size, seed, b)
                out[(fam.name, b)] = extract_profile(samples, grid, pgrid)
        return out

    def build_tables(
        self, profiles: Mapping[tuple[str, int], LatencyProfile], mode: str, raw_sink: dict | None = None
    ) -> dict[TableKey, HintsTable]:
        syn = self.config.synthesis
        return synthesize_all(
            self.spec, profiles, weights=syn.weight_grid or None, batches=syn.batches or None,
            mode=mode, step_ms=syn.budget_step_ms, raw_sink=raw_sink,
        )

    def run(
        self,
        seed: int | None = None,
        policies: tuple[str, ...] | None = None,
        dynamics: DynamicsModel | None = None,
        log: TextIO | None = None,
    ) -> dict[str, SimReport]:
        """Every requested policy on the same difficulty draws."""
        seed = self.seed if seed is None else seed
        policies = policies or self.policies
        profiles = self.build_profiles(seed)
        chain = chain_profiles(profiles, self.spec.functions, self.spec.batch)
        tables: dict[str, dict] = {}
        reports = {}
        for pol in policies:
            mode = POLICY_MODES.get(pol)
            if mode is not None and mode not in tables:
                tables[mode] = self.build_tables(profiles, mode)
            reports[pol] = run_policy(
                pol, self.spec, chain, dynamics or self.dynamics, self.n_requests, seed,
                tables=tables.get(mode), miss_policy=self.miss_policy,
                arrival_interval_ms=self.arrival_interval_ms, log=log if mode else None,
            )
        return reports


@dataclass
class RegenOutcome:
    before: SimReport
    shifted: SimReport
    fired: bool
    after: SimReport | None = None


def regeneration_loop(
    scenario: Scenario, shifted: DynamicsModel, seed: int | None = None, mode: str = "head"
) -> RegenOutcome:
    """Serve under the profiled dynamics, then under ``shifted``; if the miss rate
    trips the adapter threshold, re-profile under ``shifted``, re-synthesize,
    install, and serve a fresh batch of requests."""
    seed = scenario.seed if seed is None else seed
    spec, n = scenario.spec, scenario.n_requests
    profiles = scenario.build_profiles(seed)
    chain = chain_profiles(profiles, spec.functions, spec.batch)
    adapter = Adapter(scenario.build_tables(profiles, mode), scenario.config.grid)
    before = run_policy("late_bind", spec, chain, scenario.dynamics, n, seed, adapter=adapter)
    adapter.install_tables(adapter.tables)
    shifted_rep = run_policy("late_bind", spec, chain, shifted, n, seed, adapter=adapter)
    if not adapter.check_regen(spec.name):
        return RegenOutcome(before, shifted_rep, False)
    fresh = dict(profiles)
    for key, prof in profiles.items():
        by_size = reprofile_samples(shifted, prof, scenario.samples_per_size, seed)
        fresh[key] = extract_profile(LatencySamples(prof.function, prof.batch, by_size), prof.grid, prof.percentiles)
    adapter.install_tables(scenario.build_tables(fresh, mode))
    # the latency model keeps the original profiles; only the tables learn the shift
    after = run_policy("late_bind", spec, chain, shifted, n, seed + 1, adapter=adapter)
    return RegenOutcome(before, shifted_rep, True, after)


def parse_scenario(obj: dict, base_dir: Path | None = None) -> Scenario:
    if not isinstance(obj, dict):
        raise ConfigError("scenario: expected an object")
    extra = sorted(set(obj) - _FIELDS)
    if extra:
        raise ConfigError(f"scenario: unknown field(s) {', '.join(extra)}")
    if "workflow" not in obj:
        raise ConfigError("scenario: missing field 'workflow'")
    wf = obj["workflow"]
    if isinstance(wf, str):
        wf = load_json(_resolve(wf, base_dir))
    config = parse_workflow(wf)
    families = tuple(parse_family(f) for f in obj.get("families", ()))
    profiles_path = _resolve(obj["profiles"], base_dir) if "profiles" in obj else None
    if not families and profiles_path is None:
        raise ConfigError("scenario: needs 'families' or 'profiles'")
    if families:
        missing = sorted(set(config.spec.functions) - {f.name for f in families})
        if missing:
            raise ConfigError(f"scenario: no family for function(s) {', '.join(missing)}")
    policies = tuple(obj.get("policies", POLICIES))
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ConfigError(f"scenario: unknown policy {unknown[0]!r}; expected one of {', '.join(POLICIES)}")
    try:
        dynamics = parse_dynamics(obj.get("dynamics"))
        miss_policy = MissPolicy(obj.get("miss_policy", "scale_to_max"))
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    n_requests = int(obj.get("n_requests", 1000))
    if n_requests < 1:
        raise ConfigError("scenario: n_requests must be >= 1")
    interval = obj.get("arrival_interval_ms")
    if interval is not None and float(interval) <= 0:
        raise ConfigError("scenario: arrival_interval_ms must be positive")
    return Scenario(
        name=str(obj.get("name", config.spec.name)),
        config=config,
        families=families,
        profiles_path=profiles_path,
        samples_per_size=int(obj.get("samples_per_size", 200)),
        dynamics=dynamics,
        policies=policies,
        n_requests=n_requests,
        seed=int(obj.get("seed", 0)),
        miss_policy=miss_policy,
        arrival_interval_ms=None if interval is None else float(interval),
    )


def _resolve(path: str, base_dir: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(load_json(path), path.parent)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. ``demo``)."""
    path = DATA_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return path
