"""Interface-resident traffic shaping: token buckets, message re-sizing,
small-message policing, and SLA-driven admission planning.

The shaper owns the ingress pace in pull mode. Guarantees become per-tenant
minimum buckets; caps become maximum buckets; capacity left over after all
minimums is shared round robin among backlogged tenants (work conservation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

from .fabric import TlpKind, effective_peak, segment
from .model import (
    AcceleratorProfile,
    Direction,
    FlowSpec,
    InfeasibleSla,
    MeasuredAt,
    PcieConfig,
    RateMetric,
    Sla,
    egress_size,
    interpolate_throughput,
    invert_sla,
)

DEFAULT_SMALL_MSG_FLOOR = 64  # bytes; below this, police or reshape
DEFAULT_BURST_MESSAGES = 4  # bucket depth in wire messages
DEFAULT_UTIL_TARGET = 0.9  # fraction of link wire rate admission may book


# -- resize policies ---------------------------------------------------------


@dataclass(frozen=True)
class SplitTo:
    target_bytes: int

    def __post_init__(self):
        if self.target_bytes < 1:
            raise ValueError("split target must be >= 1 byte")


@dataclass(frozen=True)
class PadTo:
    target_bytes: int

    def __post_init__(self):
        if self.target_bytes < 1:
            raise ValueError("pad target must be >= 1 byte")


@dataclass(frozen=True)
class BatchTo:
    target_bytes: int
    max_delay_ns: int

    def __post_init__(self):
        if self.target_bytes < 1:
            raise ValueError("batch target must be >= 1 byte")
        if self.max_delay_ns < 0:
            raise ValueError("batch delay must be >= 0")


ResizePolicy = Union[SplitTo, PadTo, BatchTo, None]


@dataclass(frozen=True)
class WireMessage:
    """One message as the fabric will carry it after re-sizing."""

    payload_bytes: int  # bytes put on the wire (includes padding)
    user_bytes: int  # bytes the tenant actually asked to move
    user_ops: int = 1  # original messages folded into this wire message


def normalize(msg_bytes: int, policy: ResizePolicy) -> list[WireMessage]:
    """Stateless re-sizing for one message. BatchTo is stream-stateful and
    lives in BatchAccumulator; passing it here is an error."""
    if msg_bytes < 1:
        raise ValueError("message must be >= 1 byte")
    if policy is None:
        return [WireMessage(msg_bytes, msg_bytes)]
    if isinstance(policy, SplitTo):
        out = []
        remaining = msg_bytes
        while remaining > 0:
            chunk = min(policy.target_bytes, remaining)
            remaining -= chunk
            out.append(WireMessage(chunk, chunk))
        return out
    if isinstance(policy, PadTo):
        wire = max(msg_bytes, policy.target_bytes)
        return [WireMessage(wire, msg_bytes)]
    raise ValueError("BatchTo requires a BatchAccumulator (stream state)")


class BatchAccumulator:
    """Coalesce small messages until the batch target fills or the deadline
    passes. flush() returns one wire message carrying every folded input."""

    def __init__(self, policy: BatchTo):
        self.policy = policy
        self._bytes = 0
        self._ops = 0
        self.deadline_ns: Optional[int] = None

    def feed(self, msg_bytes: int, now_ns: int) -> Optional[WireMessage]:
        """Add one message; returns a full batch when the target fills."""
        if self._ops == 0:
            self.deadline_ns = now_ns + self.policy.max_delay_ns
        self._bytes += msg_bytes
        self._ops += 1
        if self._bytes >= self.policy.target_bytes:
            return self.flush()
        return None

    def flush(self) -> Optional[WireMessage]:
        if self._ops == 0:
            return None
        out = WireMessage(self._bytes, self._bytes, self._ops)
        self._bytes = 0
        self._ops = 0
        self.deadline_ns = None
        return out

    @property
    def pending_ops(self) -> int:
        return self._ops


# -- small-message policing --------------------------------------------------


class PoliceAction:
    PASS = "pass"
    RESHAPE = "reshape"
    DENY = "deny"


def police_small(msg_bytes: int, floor_bytes: int, policy: ResizePolicy) -> str:
    """Messages under the floor are folded into batches, padded up, or denied
    when the tenant's policy cannot absorb them."""
    if msg_bytes >= floor_bytes:
        return PoliceAction.PASS
    if isinstance(policy, (BatchTo, PadTo)):
        return PoliceAction.RESHAPE
    return PoliceAction.DENY


# -- token bucket ------------------------------------------------------------


class TokenBucket:
    """Linear refill to a burst cap; grants are atomic per wire message.

    A request larger than the cap reserves the refill stream: it is granted
    once cumulative tokens cover it, leaving the bucket empty. Over any
    window w the granted work never exceeds rate*w + capacity.
    """

    def __init__(self, rate_per_ns: Fraction, capacity: Fraction, start_full: bool = True):
        if rate_per_ns < 0:
            raise ValueError("rate must be >= 0")
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.rate = Fraction(rate_per_ns)
        self.capacity = Fraction(capacity)
        self.level = self.capacity if start_full else Fraction(0)
        self.last = Fraction(0)

    def level_at(self, now: int | Fraction) -> Fraction:
        now = Fraction(now)
        if now <= self.last:
            return min(self.level, self.capacity)
        return min(self.level + self.rate * (now - self.last), self.capacity)

    def ready_time(self, cost: int | Fraction, now: int | Fraction) -> Optional[Fraction]:
        """Earliest time at or after `now` the bucket can cover `cost`;
        None when the rate is zero and the level can never reach it."""
        cost = Fraction(cost)
        now = Fraction(now)
        have = self.level_at(now)
        if have >= cost:
            return now
        if self.rate == 0:
            return None
        return now + (cost - have) / self.rate

    def debit(self, cost: int | Fraction, at: int | Fraction) -> None:
        cost = Fraction(cost)
        at = Fraction(at)
        accrued = self.level + self.rate * (at - self.last)
        # an oversized request absorbs the refill stream while it waits,
        # so the cap applies to idle accumulation, not to the reservation
        self.level = min(accrued, max(self.capacity, cost)) - cost
        self.last = at


@dataclass(frozen=True)
class Grant:
    amount: Fraction
    at_ns: int


@dataclass(frozen=True)
class Deferred:
    until_ns: int


def admit(bucket: TokenBucket, cost: int | Fraction, now: int) -> Union[Grant, Deferred, None]:
    """Gate one wire message. Grants debit immediately; a deferral names the
    earliest retry time. None means the bucket can never cover the cost.
    Unused capacity beyond minimum guarantees is redistributed by the
    scheduler that owns these buckets, not here."""
    t = bucket.ready_time(cost, now)
    if t is None:
        return None
    if t <= now:
        bucket.debit(cost, now)
        return Grant(Fraction(cost), now)
    return Deferred(math.ceil(t))


# -- per-tenant shaping configuration ----------------------------------------


@dataclass
class ShaperConfig:
    """Everything the interface needs to pace one tenant."""

    tenant_id: str
    min_rate: Optional[float] = None  # Gbps or ops/s per metric; None = best effort
    max_rate: Optional[float] = None  # None = no cap
    metric: RateMetric = RateMetric.GBPS
    resize: ResizePolicy = None
    small_msg_floor: int = DEFAULT_SMALL_MSG_FLOOR
    burst_messages: int = DEFAULT_BURST_MESSAGES
    qp_count: Optional[int] = None  # planner-assigned; None keeps the flow's value
    ingress_gbps: Optional[float] = None  # planner's X' for reporting

    def bucket_cost(self, wire: WireMessage) -> Fraction:
        if self.metric is RateMetric.IOPS:
            return Fraction(wire.user_ops)
        return Fraction(wire.payload_bytes * 8)

    def _mk_bucket(self, rate: float, wire_bytes: int) -> TokenBucket:
        if self.metric is RateMetric.IOPS:
            per_ns = Fraction(str(rate)) / Fraction(10**9)
            cap = Fraction(self.burst_messages)
        else:
            per_ns = Fraction(str(rate))  # Gbps == bits/ns
            cap = Fraction(self.burst_messages * wire_bytes * 8)
        return TokenBucket(per_ns, cap)

    def build_min_bucket(self, wire_bytes: int) -> Optional[TokenBucket]:
        if self.min_rate is None or self.min_rate <= 0:
            return None
        return self._mk_bucket(self.min_rate, wire_bytes)

    def build_max_bucket(self, wire_bytes: int) -> Optional[TokenBucket]:
        if self.max_rate is None:
            return None
        return self._mk_bucket(self.max_rate, wire_bytes)


# -- admission planning -------------------------------------------------------


@dataclass(frozen=True)
class TenantPlan:
    tenant_id: str
    config: ShaperConfig
    ingress_gbps: float
    wire_size: int
    qp_count: int


@dataclass(frozen=True)
class ShapingPlan:
    tenants: tuple[TenantPlan, ...]
    qp_total: int
    headroom_gbps: dict

    def plan_for(self, tenant_id: str) -> Optional[TenantPlan]:
        for t in self.tenants:
            if t.tenant_id == tenant_id:
                return t
        return None


def allocate_qps(weights: Sequence[float], total: int) -> list[int]:
    """Largest-remainder split of `total` QPs proportional to weights; every
    positive-weight tenant keeps at least one QP."""
    n = len(weights)
    if n == 0:
        return []
    wsum = float(sum(weights))
    if wsum <= 0 or total < n:
        return [max(1, total // n)] * n if total >= n else [1] * n
    raw = [total * w / wsum for w in weights]
    base = [max(1, math.floor(r)) for r in raw]
    # floor-at-one can overshoot; shave from the largest allocations
    while sum(base) > total:
        i = max(range(n), key=lambda k: (base[k], -k))
        if base[i] <= 1:
            break
        base[i] -= 1
    rem = total - sum(base)
    order = sorted(range(n), key=lambda k: (-(raw[k] - math.floor(raw[k])), k))
    for k in range(rem):
        base[order[k % n]] += 1
    return base


def _choose_policy(flow: FlowSpec, mtu: int, floor: int) -> tuple[ResizePolicy, int]:
    """Pick a resize policy so every wire message lands on one side of the
    MTU, and a representative wire size for rate conversion."""
    sizes = flow.sizes.choices
    lo, hi = min(sizes), max(sizes)
    if hi > mtu and lo <= mtu:
        # straddling sizes make fairness metric-dependent; split down to MTU
        return SplitTo(mtu), mtu
    if hi < floor:
        return PadTo(floor), floor
    if lo < floor:
        return PadTo(floor), max(floor, round(flow.sizes.mean))
    if len(sizes) == 1:
        return None, sizes[0]
    return None, round(flow.sizes.mean)


def _wire_overhead_ratio(cfg: PcieConfig, size: int, kind: TlpKind) -> float:
    tlps = segment(size, kind, cfg)
    if kind is TlpKind.MEM_READ_REQ:
        wire = 0
        for t in tlps:
            wire += sum(c.wire_bytes for c in segment(t.requested_bytes, TlpKind.COMPLETION, cfg))
    else:
        wire = sum(t.wire_bytes for t in tlps)
    return wire / size


def plan_shaping(
    flows: Sequence[FlowSpec],
    slas: Sequence[Sla],
    profiles: dict[str, AcceleratorProfile],
    cfg: PcieConfig,
    qp_total: Optional[int] = None,
    util_target: float = DEFAULT_UTIL_TARGET,
    small_msg_floor: int = DEFAULT_SMALL_MSG_FLOOR,
) -> ShapingPlan:
    """Turn guarantees into bucket rates, re-size policies, and QP shares.

    Booked ingress across all guarantees must fit under `util_target` of each
    wire direction and of each accelerator's capacity; otherwise the binding
    tenant's guarantee raises InfeasibleSla.
    """
    sla_by_tenant = {s.tenant_id: s for s in slas}
    flow_by_tenant = {f.tenant_id: f for f in flows}
    for s in slas:
        if s.tenant_id not in flow_by_tenant:
            raise InfeasibleSla(s.tenant_id, "policy", "guarantee for a tenant with no flow")

    budget = {
        "host_to_accel": cfg.link_rate_gbps * util_target,
        "accel_to_host": cfg.link_rate_gbps * util_target,
    }
    engine_util: dict[str, float] = {}

    planned: list[TenantPlan] = []
    admitted_flows: list[FlowSpec] = []
    for flow in flows:
        sla = sla_by_tenant.get(flow.tenant_id)
        if sla is None:
            continue
        profile = profiles.get(flow.accelerator) if flow.accelerator else None
        mtu = cfg.max_read_req_bytes if flow.direction is Direction.HOST_TO_ACCEL else cfg.max_payload_bytes
        policy, wire_size = _choose_policy(flow, mtu, small_msg_floor)
        req = invert_sla(profile, sla, wire_size)
        if not req.feasible:
            raise InfeasibleSla(flow.tenant_id, req.binding or "policy", "guarantee cannot be inverted")
        x_prime = req.rate_gbps

        # wire booking: ingress direction plus accelerator egress write-back
        if flow.accelerator is not None or flow.direction is Direction.HOST_TO_ACCEL:
            ingress_kind = TlpKind.MEM_READ_REQ
            ingress_ch = "host_to_accel"
        else:
            ingress_kind = TlpKind.MEM_WRITE
            ingress_ch = "accel_to_host"
        need = {ingress_ch: x_prime * _wire_overhead_ratio(cfg, wire_size, ingress_kind)}
        if flow.accelerator is not None and profile is not None:
            out_size = egress_size(profile.egress, wire_size)
            out_rate = x_prime * out_size / wire_size
            need["accel_to_host"] = need.get("accel_to_host", 0.0) + out_rate * _wire_overhead_ratio(
                cfg, out_size, TlpKind.MEM_WRITE
            )
            util = (x_prime / interpolate_throughput(profile, wire_size)) / util_target
            engine_util[profile.name] = engine_util.get(profile.name, 0.0) + util
            if engine_util[profile.name] > 1.0:
                raise InfeasibleSla(flow.tenant_id, "accelerator", f"{profile.name} overbooked")
        for ch, rate in need.items():
            if rate > budget[ch]:
                raise InfeasibleSla(flow.tenant_id, "link", f"{ch} wire budget exhausted")
            budget[ch] -= rate

        # IOPS buckets count user operations, so SLA rates apply unchanged.
        # Rate buckets pace ingress wire bytes, so user-level rates must be
        # rescaled by the same factor the inversion applied to min_rate.
        if sla.metric is RateMetric.IOPS:
            min_x, max_x = sla.min_rate, sla.max_rate
        else:
            min_x = x_prime
            max_x = None if sla.max_rate is None else sla.max_rate * x_prime / sla.min_rate
        config = ShaperConfig(
            tenant_id=flow.tenant_id,
            min_rate=min_x,
            max_rate=max_x,
            metric=sla.metric,
            resize=policy,
            small_msg_floor=small_msg_floor,
            ingress_gbps=x_prime,
        )
        planned.append(TenantPlan(flow.tenant_id, config, x_prime, wire_size, flow.qp_count))
        admitted_flows.append(flow)

    total_qps = qp_total if qp_total is not None else sum(f.qp_count for f in flows)
    if planned:
        weights = [t.ingress_gbps for t in planned]
        admitted_qp_total = min(total_qps, sum(f.qp_count for f in admitted_flows)) or len(planned)
        shares = allocate_qps(weights, max(admitted_qp_total, len(planned)))
        planned = [
            TenantPlan(t.tenant_id, _with_qps(t.config, q), t.ingress_gbps, t.wire_size, q)
            for t, q in zip(planned, shares)
        ]
    return ShapingPlan(tenants=tuple(planned), qp_total=total_qps, headroom_gbps=budget)


def _with_qps(config: ShaperConfig, qps: int) -> ShaperConfig:
    config.qp_count = qps
    return config


def best_effort_config(flow: FlowSpec, small_msg_floor: int = DEFAULT_SMALL_MSG_FLOOR) -> ShaperConfig:
    """Shaping for tenants without guarantees: no reserved rate, policed floor,
    padding as the reshape so tiny messages stop starving the fabric."""
    resize: ResizePolicy = None
    if min(flow.sizes.choices) < small_msg_floor:
        resize = PadTo(small_msg_floor)
    return ShaperConfig(
        tenant_id=flow.tenant_id,
        min_rate=None,
        max_rate=None,
        resize=resize,
        small_msg_floor=small_msg_floor,
    )
