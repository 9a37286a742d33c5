"""Shared domain types and rate math for multi-tenant accelerator I/O.

Sizes are bytes, times are nanoseconds, rates are Gbps. One Gbps equals one
bit per nanosecond, so rate conversions stay integer-friendly throughout.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence, Union

MAX_MESSAGE_BYTES = 1 << 22  # 4 MiB; generators and configs reject above this
MIN_MESSAGE_BYTES = 1


class Direction(Enum):
    HOST_TO_ACCEL = "host_to_accel"
    ACCEL_TO_HOST = "accel_to_host"


class RateMetric(Enum):
    GBPS = "gbps"
    IOPS = "iops"


class MeasuredAt(Enum):
    USER_LEVEL = "user_level"
    INGRESS = "ingress"


class ConfigError(ValueError):
    """Invalid configuration; `path` points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class InfeasibleSla(Exception):
    """Admission cannot satisfy the guarantee; `binding` names the constraint."""

    def __init__(self, tenant_id: str, binding: str, message: str):
        self.tenant_id = tenant_id
        self.binding = binding  # one of: link, accelerator, policy
        super().__init__(f"{tenant_id}: infeasible ({binding}): {message}")


@dataclass(frozen=True)
class Proportional:
    """Output size is `ratio` times the input size, rounded half up, min 1 byte."""

    ratio: Fraction

    def __post_init__(self):
        ratio = Fraction(self.ratio)
        if ratio <= 0:
            raise ValueError("proportional egress ratio must be positive")
        object.__setattr__(self, "ratio", ratio)


@dataclass(frozen=True)
class FixedOutput:
    """Output size is a constant regardless of input size (digests and the like)."""

    size_bytes: int

    def __post_init__(self):
        if self.size_bytes < 1:
            raise ValueError("fixed egress size must be at least 1 byte")


EgressRule = Union[Proportional, FixedOutput]


@dataclass(frozen=True)
class AcceleratorProfile:
    """Measured throughput curve of one accelerator implementation.

    `curve` maps input size (bytes) to sustained compute throughput (Gbps).
    Interpolation between points happens in log2(size) space.
    """

    name: str
    curve: tuple[tuple[int, float], ...]
    egress: EgressRule
    fixed_latency_ns: int = 500

    def __post_init__(self):
        if not self.name:
            raise ValueError("profile name must be non-empty")
        pts = tuple((int(s), float(g)) for s, g in self.curve)
        if not pts:
            raise ValueError(f"profile {self.name}: curve must be non-empty")
        sizes = [s for s, _ in pts]
        if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
            raise ValueError(f"profile {self.name}: curve sizes must be strictly increasing")
        for s, g in pts:
            if s < MIN_MESSAGE_BYTES:
                raise ValueError(f"profile {self.name}: curve size {s} below minimum")
            if g <= 0:
                raise ValueError(f"profile {self.name}: throughput must be positive")
        if self.fixed_latency_ns < 0:
            raise ValueError(f"profile {self.name}: fixed_latency_ns must be >= 0")
        object.__setattr__(self, "curve", pts)


@dataclass(frozen=True)
class SizeDist:
    """Message size distribution: a fixed size or a uniform choice over sizes."""

    choices: tuple[int, ...]

    def __post_init__(self):
        if not self.choices:
            raise ValueError("size distribution must have at least one size")
        for s in self.choices:
            if not (MIN_MESSAGE_BYTES <= s <= MAX_MESSAGE_BYTES):
                raise ValueError(f"message size {s} outside [{MIN_MESSAGE_BYTES}, {MAX_MESSAGE_BYTES}]")
        object.__setattr__(self, "choices", tuple(int(s) for s in self.choices))

    @property
    def fixed(self) -> Optional[int]:
        return self.choices[0] if len(self.choices) == 1 else None

    @property
    def mean(self) -> float:
        return sum(self.choices) / len(self.choices)


@dataclass(frozen=True)
class FlowSpec:
    """One tenant's offered traffic.

    `offered_gbps=None` means unbounded (the tenant keeps its queues full).
    Flows with an `accelerator` run invocations (ingress host-to-accel, egress
    written back); flows without one are raw DMA in `direction`.
    """

    tenant_id: str
    direction: Direction
    sizes: SizeDist
    qp_count: int = 1
    offered_gbps: Optional[float] = None
    accelerator: Optional[str] = None

    def __post_init__(self):
        if not self.tenant_id:
            raise ValueError("tenant_id must be non-empty")
        if self.qp_count < 1:
            raise ValueError("qp_count must be >= 1")
        if self.offered_gbps is not None and self.offered_gbps <= 0:
            raise ValueError("offered_gbps must be positive or unbounded")
        if self.accelerator is not None and self.direction is not Direction.HOST_TO_ACCEL:
            raise ValueError("accelerator flows ingest host-to-accel; set direction accordingly")


@dataclass(frozen=True)
class Sla:
    """Per-tenant guarantee. Rates are Gbps or ops/s depending on `metric`."""

    tenant_id: str
    metric: RateMetric
    min_rate: float
    max_rate: Optional[float] = None
    measured_at: MeasuredAt = MeasuredAt.USER_LEVEL

    def __post_init__(self):
        if self.min_rate <= 0:
            raise ValueError("min_rate must be positive")
        if self.max_rate is not None and self.max_rate < self.min_rate:
            raise ValueError("max_rate must be >= min_rate")


@dataclass(frozen=True)
class DrainConfig:
    """Receiver ingest model: serial per-TLP drain, credits return at drain end.

    Data-bearing writes smaller than `subline_bytes` pay `subline_penalty_ns`
    (partial-cacheline read-modify-write at the memory controller). Control
    traffic and read completions are exempt.
    """

    per_tlp_ns: int = 8
    drain_gbps: float = 100.0
    subline_bytes: int = 64
    subline_penalty_ns: int = 160

    def __post_init__(self):
        if self.per_tlp_ns < 0 or self.subline_penalty_ns < 0:
            raise ValueError("drain times must be >= 0")
        if self.drain_gbps <= 0:
            raise ValueError("drain_gbps must be positive")


@dataclass(frozen=True)
class PcieConfig:
    """Link and transaction-layer parameters for one host interface."""

    link_rate_gbps: float = 63.0
    max_payload_bytes: int = 256
    max_read_req_bytes: int = 512
    tlp_header_bytes: int = 24
    read_request_bytes: int = 24
    completion_header_bytes: int = 20
    credit_headers: int = 16
    credit_data_bytes: int = 8192
    host_drain: DrainConfig = field(default_factory=DrainConfig)
    device_drain: DrainConfig = field(default_factory=lambda: DrainConfig(subline_penalty_ns=0))

    def __post_init__(self):
        if self.link_rate_gbps <= 0:
            raise ValueError("link_rate_gbps must be positive")
        for name in ("max_payload_bytes", "max_read_req_bytes"):
            v = getattr(self, name)
            if v < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tlp_header_bytes < 1 or self.completion_header_bytes < 1:
            raise ValueError("header sizes must be >= 1")
        if self.read_request_bytes < 1:
            raise ValueError("read_request_bytes must be >= 1")
        if self.credit_headers < 1:
            raise ValueError("credit_headers must be >= 1")
        if self.credit_data_bytes < self.max_payload_bytes:
            raise ValueError("credit_data_bytes must cover one max-payload TLP")

    @property
    def link_rate(self) -> Fraction:
        """Bits per nanosecond, exact."""
        return Fraction(str(self.link_rate_gbps))


def interpolate_throughput(profile: AcceleratorProfile, size_bytes: int) -> float:
    """Throughput (Gbps) at `size_bytes`, piecewise linear in log2(size).

    Sizes outside the curve clamp to the nearest endpoint.
    """
    if size_bytes < MIN_MESSAGE_BYTES:
        raise ValueError("size must be >= 1 byte")
    pts = profile.curve
    if size_bytes <= pts[0][0]:
        return pts[0][1]
    if size_bytes >= pts[-1][0]:
        return pts[-1][1]
    x = math.log2(size_bytes)
    for (s0, g0), (s1, g1) in zip(pts, pts[1:]):
        if s0 <= size_bytes <= s1:
            x0, x1 = math.log2(s0), math.log2(s1)
            return g0 + (g1 - g0) * (x - x0) / (x1 - x0)
    raise AssertionError("unreachable: curve scan exhausted")


def egress_size(rule: EgressRule, ingress_bytes: int) -> int:
    """Output bytes produced for one `ingress_bytes` invocation."""
    if ingress_bytes < MIN_MESSAGE_BYTES:
        raise ValueError("ingress size must be >= 1 byte")
    if isinstance(rule, FixedOutput):
        return rule.size_bytes
    exact = Fraction(ingress_bytes) * rule.ratio
    rounded = int(exact + Fraction(1, 2))  # round half up
    return max(1, rounded)


@dataclass(frozen=True)
class IngressRequirement:
    """Ingress pull rate (Gbps) that satisfies a user-level guarantee."""

    rate_gbps: float
    feasible: bool
    binding: Optional[str] = None  # set when infeasible: link | accelerator | policy


def invert_sla(
    profile: Optional[AcceleratorProfile],
    sla: Sla,
    shaped_size_bytes: int,
    link_budget_gbps: Optional[float] = None,
) -> IngressRequirement:
    """Translate a tenant guarantee into the ingress rate the shaper must admit.

    A Gbps guarantee measured at user level divides by the egress ratio; an
    IOPS guarantee converts through the shaped wire size. Fixed-output
    accelerators cannot back a user-level Gbps guarantee (output rate is
    independent of input rate), which reports `binding="policy"`.
    """
    if shaped_size_bytes < MIN_MESSAGE_BYTES:
        raise ValueError("shaped size must be >= 1 byte")
    if sla.metric is RateMetric.IOPS:
        # ops/s through the engine are preserved one-to-one
        rate = sla.min_rate * shaped_size_bytes * 8 / 1e9
    elif sla.measured_at is MeasuredAt.INGRESS or profile is None:
        rate = sla.min_rate
    else:
        rule = profile.egress
        if isinstance(rule, FixedOutput):
            return IngressRequirement(0.0, False, "policy")
        rate = sla.min_rate / float(rule.ratio)

    if profile is not None:
        compute = interpolate_throughput(profile, shaped_size_bytes)
        if rate > compute:
            return IngressRequirement(rate, False, "accelerator")
    if link_budget_gbps is not None and rate > link_budget_gbps:
        return IngressRequirement(rate, False, "link")
    return IngressRequirement(rate, True, None)


def profile_from_dict(obj: dict, path: str = "profile") -> AcceleratorProfile:
    """Build a profile from its JSON form; raises ConfigError on bad shape."""
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    known = {"name", "curve", "egress", "fixed_latency_ns"}
    for key in obj:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    try:
        name = obj["name"]
        curve = tuple((int(s), float(g)) for s, g in obj["curve"])
        eg = obj["egress"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, f"malformed profile: {exc}") from exc
    if not isinstance(eg, dict) or len(eg) != 1:
        raise ConfigError(f"{path}.egress", 'expected {"proportional": r} or {"fixed": bytes}')
    if "proportional" in eg:
        rule: EgressRule = Proportional(Fraction(str(eg["proportional"])))
    elif "fixed" in eg:
        rule = FixedOutput(int(eg["fixed"]))
    else:
        raise ConfigError(f"{path}.egress", f"unknown egress rule {list(eg)[0]!r}")
    try:
        return AcceleratorProfile(
            name=name,
            curve=curve,
            egress=rule,
            fixed_latency_ns=int(obj.get("fixed_latency_ns", 500)),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def profile_to_dict(profile: AcceleratorProfile) -> dict:
    if isinstance(profile.egress, Proportional):
        eg = {"proportional": float(profile.egress.ratio)}
    else:
        eg = {"fixed": profile.egress.size_bytes}
    return {
        "name": profile.name,
        "curve": [[s, g] for s, g in profile.curve],
        "egress": eg,
        "fixed_latency_ns": profile.fixed_latency_ns,
    }


def load_profiles(path: str) -> list[AcceleratorProfile]:
    """Load a JSON file holding one profile object or a list of them."""
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return [profile_from_dict(obj, f"profiles[{i}]") for i, obj in enumerate(data)]
