"""Late-binding resource adaptation for serverless function chains.

Profiles give latency percentiles per compute size; the synthesizer turns
them into per-budget hints for the head of every sub-chain; the adapter
looks hints up at runtime; the simulator compares that against static and
hindsight baselines.
"""

from .adapter import Adapter, AdaptationDecision, MissPolicy, Source
from .core import (
    ConfigError,
    HintRow,
    HintsTable,
    InfeasibleError,
    PercentileGrid,
    ResourceGrid,
    WorkflowSpec,
    validate_spec,
)
from .profiler import LatencyProfile, LatencySamples, extract_profile, resilience, timeout
from .simulator import DynamicsModel, ShiftSpec, SimReport, distribution_shift, run_policy, sample_latency
from .synthesizer import condense, generate, generate_table, synthesize_all
from .workloads import FunctionFamily, generate_samples

__version__ = "0.1.0"
