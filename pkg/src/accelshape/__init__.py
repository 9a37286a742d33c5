"""Deterministic simulator and traffic-shaping toolkit for multi-tenant
accelerator invocations sharing a chunked, credit-flow-controlled host link.

Public surface:

- configuration and rate math: :mod:`accelshape.model`
- deterministic event loop and seeded RNG: :mod:`accelshape.events`
- link segmentation, arbitration, and receiver drain: :mod:`accelshape.fabric`
- accelerator service model: :mod:`accelshape.engine`
- submission/completion queue protocol: :mod:`accelshape.ring`
- token buckets, resize policies, admission planning: :mod:`accelshape.shaper`
- the end-to-end simulation: :mod:`accelshape.sim`
- scenario running and CSV reduction: :mod:`accelshape.harness`
- built-in scenario catalog: :mod:`accelshape.scenarios`
"""

from .engine import AccelEngine, EngineItem
from .events import EventLoop, SplitMix64, tenant_rng
from .fabric import Arbitration, LinkChannel, ReadGate, Tlp, TlpKind, effective_peak, segment
from .harness import (
    RunResult,
    Scenario,
    TenantMetrics,
    emit_csv,
    emit_series_csv,
    load_scenario,
    run,
    scenario_from_dict,
    scenario_to_dict,
)
from .model import (
    AcceleratorProfile,
    ConfigError,
    Direction,
    DrainConfig,
    FixedOutput,
    FlowSpec,
    InfeasibleSla,
    PcieConfig,
    Proportional,
    RateMetric,
    SizeDist,
    Sla,
    egress_size,
    interpolate_throughput,
    invert_sla,
    load_profiles,
)
from .ring import ProtocolMode, RingConfig, RingPair
from .scenarios import ScenarioSet, all_scenarios, builtin_sets, find_scenario, get_builtin
from .shaper import (
    BatchTo,
    PadTo,
    PoliceAction,
    ShaperConfig,
    ShapingPlan,
    SplitTo,
    TokenBucket,
    best_effort_config,
    plan_shaping,
    police_small,
)
from .sim import Simulation

__version__ = "0.1.0"

__all__ = [
    "AccelEngine",
    "AcceleratorProfile",
    "Arbitration",
    "BatchTo",
    "ConfigError",
    "Direction",
    "DrainConfig",
    "EngineItem",
    "EventLoop",
    "FixedOutput",
    "FlowSpec",
    "InfeasibleSla",
    "LinkChannel",
    "PadTo",
    "PcieConfig",
    "PoliceAction",
    "Proportional",
    "ProtocolMode",
    "RateMetric",
    "ReadGate",
    "RingConfig",
    "RingPair",
    "RunResult",
    "Scenario",
    "ScenarioSet",
    "ShaperConfig",
    "ShapingPlan",
    "Simulation",
    "SizeDist",
    "Sla",
    "SplitMix64",
    "SplitTo",
    "TenantMetrics",
    "Tlp",
    "TlpKind",
    "TokenBucket",
    "all_scenarios",
    "best_effort_config",
    "builtin_sets",
    "effective_peak",
    "egress_size",
    "emit_csv",
    "emit_series_csv",
    "find_scenario",
    "get_builtin",
    "interpolate_throughput",
    "invert_sla",
    "load_profiles",
    "load_scenario",
    "plan_shaping",
    "police_small",
    "run",
    "scenario_from_dict",
    "scenario_to_dict",
    "segment",
    "tenant_rng",
    "__version__",
]
