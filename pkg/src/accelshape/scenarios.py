"""Built-in scenario sets.

Each set bundles the cells (individual runs) needed to demonstrate one
contention phenomenon or one shaping property, named `<set>/<cell>`. Sets
obs4-obs6 keep the full descriptor/completion ring so protocol overhead is
part of the picture; obs7-obs10 use a register interface (zero-byte ring
records) to isolate pure data-path arbitration effects.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Optional

from .fabric import Arbitration
from .harness import Scenario
from .model import AcceleratorProfile, Direction, FlowSpec, Proportional, RateMetric, SizeDist, Sla
from .ring import ProtocolMode, RingConfig

REGISTER_RING = RingConfig(descriptor_bytes=0, completion_bytes=0)


@dataclass(frozen=True)
class ScenarioSet:
    name: str
    description: str
    scenarios: tuple[Scenario, ...]


def _flow(
    tenant: str,
    direction: Direction,
    sizes,
    qp_count: int = 1,
    offered: Optional[float] = None,
    accel: Optional[str] = None,
) -> FlowSpec:
    if isinstance(sizes, int):
        sizes = (sizes,)
    return FlowSpec(
        tenant_id=tenant,
        direction=direction,
        sizes=SizeDist(tuple(sizes)),
        qp_count=qp_count,
        offered_gbps=offered,
        accelerator=accel,
    )


def _writer(tenant: str, sizes, qp_count: int = 1, offered: Optional[float] = None) -> FlowSpec:
    return _flow(tenant, Direction.ACCEL_TO_HOST, sizes, qp_count, offered)


def _reader(tenant: str, sizes, qp_count: int = 1, offered: Optional[float] = None) -> FlowSpec:
    return _flow(tenant, Direction.HOST_TO_ACCEL, sizes, qp_count, offered)


# -- accelerator profile catalog ------------------------------------------------

LADDER = AcceleratorProfile(
    name="ladder",
    curve=((1024, 4.0), (2048, 6.0), (4096, 8.0), (16384, 12.0), (65536, 16.0)),
    egress=Proportional(Fraction(1)),
    fixed_latency_ns=500,
)
TAPER = AcceleratorProfile(
    name="taper",
    curve=((1024, 24.0), (8192, 12.0)),
    egress=Proportional(Fraction(1)),
    fixed_latency_ns=800,
)
STREAM26 = AcceleratorProfile(
    name="stream26",
    curve=((1024, 18.0), (4096, 26.0), (16384, 30.0)),
    egress=Proportional(Fraction(1)),
    fixed_latency_ns=500,
)


def _codec(name: str, ratio: Fraction, gbps_at_4k: float) -> AcceleratorProfile:
    return AcceleratorProfile(
        name=name,
        curve=((4096, gbps_at_4k),),
        egress=Proportional(ratio),
        fixed_latency_ns=500,
    )


CODEC_QUARTER = _codec("codec_quarter", Fraction(1, 4), 48.0)
CODEC_HALF = _codec("codec_half", Fraction(1, 2), 30.0)
CODEC_UNIT = _codec("codec_unit", Fraction(1), 20.0)
CODEC_DOUBLE = _codec("codec_double", Fraction(2), 12.0)


# -- scenario sets ---------------------------------------------------------------


def _profile_sweep() -> ScenarioSet:
    cells = []
    for profile in (LADDER, TAPER):
        sizes = [s for s, _ in profile.curve]
        # off-grid points exercise the log-size interpolation
        midpoints = [
            (a + b) // 2 for (a, _), (b, _) in zip(profile.curve, profile.curve[1:])
        ][:1]
        for size in sizes + midpoints:
            cells.append(
                Scenario(
                    name=f"profile_sweep/{profile.name}_{size}",
                    duration_ns=40_000_000,
                    flows=(_flow("solo", Direction.HOST_TO_ACCEL, size, accel=profile.name),),
                    profiles=(profile,),
                    fabric_bypass=True,
                )
            )
    return ScenarioSet(
        name="profile_sweep",
        description=(
            "Engine-only fidelity: one saturating tenant per cell drives each "
            "profile at its curve points and one off-grid size; delivered rate "
            "must track the interpolated curve."
        ),
        scenarios=tuple(cells),
    )


def _obs4_qp() -> ScenarioSet:
    cells = []
    for qa, qb in ((2, 1), (4, 2), (8, 4), (16, 4)):
        cells.append(
            Scenario(
                name=f"obs4_qp/r{qa}v{qb}",
                duration_ns=2_000_000,
                flows=(
                    _writer("alpha", 4096, qp_count=qa),
                    _writer("beta", 4096, qp_count=qb),
                ),
            )
        )
    return ScenarioSet(
        name="obs4_qp",
        description=(
            "Per-queue round robin turns hardware queue count into a bandwidth "
            "knob: equal-size writers split the link in proportion to their QPs."
        ),
        scenarios=tuple(cells),
    )


def _obs5_mixture() -> ScenarioSet:
    cells = [
        Scenario(
            name=f"obs5_mixture/w4096v{b}",
            duration_ns=2_000_000,
            flows=(_writer("alpha", 4096), _writer("beta", b)),
        )
        for b in (64, 128, 256, 1024, 4096)
    ]
    cells.append(
        Scenario(
            name="obs5_mixture/per_message_w4096v256",
            duration_ns=2_000_000,
            arbitration=Arbitration.PER_MESSAGE,
            flows=(_writer("alpha", 4096), _writer("beta", 256)),
        )
    )
    return ScenarioSet(
        name="obs5_mixture",
        description=(
            "Message-size mixtures: per-TLP arbitration equalizes wire slots, so "
            "bandwidth follows each tenant's bytes-per-TLP; the per-message "
            "variant flips the split to whole-message fairness."
        ),
        scenarios=tuple(cells),
    )


def _obs6_direction() -> ScenarioSet:
    return ScenarioSet(
        name="obs6_direction",
        description=(
            "Direction placement: two same-direction streams halve one channel, "
            "while opposite directions ride both duplex channels at once."
        ),
        scenarios=(
            Scenario(
                name="obs6_direction/homo",
                duration_ns=2_000_000,
                flows=(_writer("alpha", 4096), _writer("beta", 4096)),
            ),
            Scenario(
                name="obs6_direction/hetero",
                duration_ns=2_000_000,
                flows=(_writer("alpha", 4096), _reader("beta", 4096)),
            ),
        ),
    )


def _obs7_metrics() -> ScenarioSet:
    return ScenarioSet(
        name="obs7_metrics",
        description=(
            "Fairness metric is set by structure, not policy: single-request "
            "reads equalize operation rate (bytes follow size); multi-request "
            "reads equalize bandwidth (operation rate follows 1/size)."
        ),
        scenarios=(
            Scenario(
                name="obs7_metrics/ternary_small",
                duration_ns=2_000_000,
                ring=REGISTER_RING,
                flows=(_reader("alpha", 512), _reader("beta", 64)),
            ),
            Scenario(
                name="obs7_metrics/ternary_big",
                duration_ns=2_000_000,
                ring=REGISTER_RING,
                flows=(_reader("alpha", 1024), _reader("beta", 4096)),
            ),
        ),
    )


def _obs8_quadrants() -> ScenarioSet:
    pairs = {
        "small_small": (64, 128),
        "small_big": (128, 1024),
        "big_small": (1024, 128),
        "big_big": (512, 1024),
    }
    cells = [
        Scenario(
            name=f"obs8_quadrants/{cell}",
            duration_ns=2_000_000,
            ring=REGISTER_RING,
            flows=(_writer("alpha", a), _writer("beta", b)),
        )
        for cell, (a, b) in pairs.items()
    ]
    return ScenarioSet(
        name="obs8_quadrants",
        description=(
            "Write-size quadrants around the chunking threshold: both below "
            "gives equal operation rates; both above gives equal bandwidth; "
            "straddling mixes the two regimes."
        ),
        scenarios=tuple(cells),
    )


def _obs9_duplex() -> ScenarioSet:
    cells = []
    for s in (256, 4096):
        cells.append(
            Scenario(
                name=f"obs9_duplex/solo_w{s}",
                duration_ns=2_000_000,
                ring=REGISTER_RING,
                flows=(_writer("alpha", s),),
            )
        )
    for s in (256, 1024, 4096):
        cells.append(
            Scenario(
                name=f"obs9_duplex/duplex_w{s}",
                duration_ns=2_000_000,
                ring=REGISTER_RING,
                flows=(_writer("alpha", s), _reader("beta", 4096)),
            )
        )
    return ScenarioSet(
        name="obs9_duplex",
        description=(
            "Full duplex in opposite directions: a read stream holds its rate "
            "regardless of concurrent write size, and writes pay only the small "
            "request-channel tax."
        ),
        scenarios=tuple(cells),
    )


def _obs10_tiny() -> ScenarioSet:
    cells = [
        Scenario(
            name=f"obs10_tiny/w4096v{b}",
            duration_ns=2_000_000,
            ring=REGISTER_RING,
            flows=(_writer("alpha", 4096), _writer("beta", b)),
        )
        for b in (64, 32, 16)
    ]
    return ScenarioSet(
        name="obs10_tiny",
        description=(
            "Sub-cacheline writes poison the receiver: below the 64B line size "
            "every tiny write pays a read-modify-write at the memory interface, "
            "and the serial drain drags every tenant down with it."
        ),
        scenarios=tuple(cells),
    )


def _shaping_ab() -> ScenarioSet:
    victim = _writer("victim", 4096, offered=25.0)
    adversary = _writer("adversary", 64, qp_count=8)
    sla = Sla("victim", RateMetric.GBPS, min_rate=20.0)
    cells = [
        Scenario(
            name="shaping_ab/off",
            duration_ns=2_000_000,
            flows=(victim, adversary),
            slas=(sla,),
        ),
        Scenario(
            name="shaping_ab/on",
            duration_ns=3_000_000,
            protocol=ProtocolMode.PULL,
            shaping_enabled=True,
            flows=(victim, adversary),
            slas=(sla,),
        ),
    ]
    for profile, tag in (
        (CODEC_QUARTER, "r025"),
        (CODEC_HALF, "r05"),
        (CODEC_UNIT, "r1"),
        (CODEC_DOUBLE, "r2"),
    ):
        cells.append(
            Scenario(
                name=f"shaping_ab/inv_{tag}",
                duration_ns=3_000_000,
                protocol=ProtocolMode.PULL,
                shaping_enabled=True,
                flows=(_flow("victim", Direction.HOST_TO_ACCEL, 4096, accel=profile.name),),
                profiles=(profile,),
                slas=(Sla("victim", RateMetric.GBPS, min_rate=10.0, max_rate=10.0),),
            )
        )
    return ScenarioSet(
        name="shaping_ab",
        description=(
            "Shaping on versus off for one guaranteed tenant under a many-queue "
            "small-write flood, plus guarantee inversion across output ratios: "
            "a pinned user-level rate must hold whatever the engine's expansion "
            "or reduction factor."
        ),
        scenarios=tuple(cells),
    )


def _sla_adversarial() -> ScenarioSet:
    victim_compute = _flow("victim_compute", Direction.HOST_TO_ACCEL, 4096, offered=20.0, accel="stream26")
    victim_write = _writer("victim_write", 1024, offered=10.65)
    slas = (
        Sla("victim_compute", RateMetric.GBPS, min_rate=15.0),
        Sla("victim_write", RateMetric.IOPS, min_rate=1e6),
    )
    patterns = {
        "tiny8": (_writer("adversary", 16, qp_count=8),),
        "read8": (_reader("adversary", 512, qp_count=8),),
        "write8": (_writer("adversary", 4096, qp_count=8),),
        "mix": (_writer("adversary", 16, qp_count=4), _reader("adversary2", 512, qp_count=4)),
    }
    cells = []
    for tag, adversaries in patterns.items():
        for shaped in (False, True):
            cells.append(
                Scenario(
                    name=f"sla_adversarial/{tag}_{'on' if shaped else 'off'}",
                    duration_ns=2_000_000,
                    protocol=ProtocolMode.PULL if shaped else ProtocolMode.PUSH,
                    shaping_enabled=shaped,
                    flows=(victim_compute, victim_write) + adversaries,
                    profiles=(STREAM26,),
                    slas=slas,
                )
            )
    return ScenarioSet(
        name="sla_adversarial",
        description=(
            "Two guaranteed tenants (a compute pipeline and a write stream) "
            "against adversarial floods: sub-cacheline writes, read storms, "
            "many-queue bulk writes, and a blend. Every pattern violates at "
            "least one guarantee unshaped and none once shaping is on."
        ),
        scenarios=tuple(cells),
    )


BUILTIN_ORDER = (
    "profile_sweep",
    "obs4_qp",
    "obs5_mixture",
    "obs6_direction",
    "obs7_metrics",
    "obs8_quadrants",
    "obs9_duplex",
    "obs10_tiny",
    "shaping_ab",
    "sla_adversarial",
)


@lru_cache(maxsize=1)
def builtin_sets() -> dict[str, ScenarioSet]:
    sets = (
        _profile_sweep(),
        _obs4_qp(),
        _obs5_mixture(),
        _obs6_direction(),
        _obs7_metrics(),
        _obs8_quadrants(),
        _obs9_duplex(),
        _obs10_tiny(),
        _shaping_ab(),
        _sla_adversarial(),
    )
    return {s.name: s for s in sets}


def get_builtin(name: str) -> ScenarioSet:
    sets = builtin_sets()
    if name not in sets:
        known = ", ".join(BUILTIN_ORDER)
        raise KeyError(f"unknown scenario set {name!r}; built-ins: {known}")
    return sets[name]


def find_scenario(name: str) -> Scenario:
    """Look up one cell by its full `<set>/<cell>` name."""
    set_name = name.split("/", 1)[0]
    for sc in get_builtin(set_name).scenarios:
        if sc.name == name:
            return sc
    raise KeyError(f"unknown scenario {name!r}")


def all_scenarios() -> list[Scenario]:
    out: list[Scenario] = []
    for name in BUILTIN_ORDER:
        out.extend(builtin_sets()[name].scenarios)
    return out


def shortened(scenario: Scenario, duration_ns: int) -> Scenario:
    """A shorter replica of a cell (reproducibility checks stay cheap)."""
    return replace(scenario, duration_ns=duration_ns)
