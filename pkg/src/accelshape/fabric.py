"""Transaction-level model of a full-duplex PCIe-like host link.

Each direction is an independent serializer with a shared header-credit pool
and a data-byte pool. The device-side sender arbitrates round robin across
hardware queue pairs per TLP (optionally per message); ring-maintenance
traffic rides a strict-priority control lane. Receivers drain TLPs serially
and return credits at drain completion, which is the only way senders stall.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum, auto
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .events import EventLoop, ceil_ns
from .model import PcieConfig, DrainConfig


class TlpKind(Enum):
    MEM_WRITE = auto()
    MEM_READ_REQ = auto()
    COMPLETION = auto()


@dataclass
class Tlp:
    kind: TlpKind
    payload_bytes: int
    header_bytes: int
    tenant_id: str = ""
    qp_id: int = 0
    parent_msg: int = 0
    requested_bytes: int = 0  # MemReadReq only: bytes the completer must return
    data_class: bool = True  # False = ring maintenance (control lane, no RMW)
    end_of_message: bool = False
    # Exact (fractional-ns) instants, filled in by the channel. Events fire on
    # whole nanoseconds, but back-to-back transmissions and drains chain at
    # these exact boundaries so no fractional wire time is ever lost.
    queued_at: Optional[Fraction] = None
    landed_at: Optional[Fraction] = None

    @property
    def wire_bytes(self) -> int:
        return self.header_bytes + self.payload_bytes


class NoActiveQp(Exception):
    """Round-robin arbitration found nothing to grant."""


class InsufficientCredits(Exception):
    """The channel's credit pools cannot cover the TLP right now."""


@dataclass
class QpState:
    """One hardware queue pair's pending TLPs on a channel."""

    qp_id: int
    tenant_id: str
    pending: deque = field(default_factory=deque)

    @property
    def active(self) -> bool:
        return bool(self.pending)


def segment(msg_bytes: int, kind: TlpKind, cfg: PcieConfig, **tlp_fields) -> list[Tlp]:
    """Split one message into wire TLPs.

    Writes chunk at max_payload_bytes; reads become read requests capped at
    max_read_req_bytes (payload rides back in completions); completions chunk
    at max_payload_bytes.
    """
    if msg_bytes < 1:
        raise ValueError("cannot segment an empty message")
    out: list[Tlp] = []
    if kind is TlpKind.MEM_WRITE:
        cap, header = cfg.max_payload_bytes, cfg.tlp_header_bytes
        remaining = msg_bytes
        while remaining > 0:
            chunk = min(cap, remaining)
            remaining -= chunk
            out.append(Tlp(kind, chunk, header, **tlp_fields))
    elif kind is TlpKind.MEM_READ_REQ:
        cap = cfg.max_read_req_bytes
        remaining = msg_bytes
        while remaining > 0:
            chunk = min(cap, remaining)
            remaining -= chunk
            out.append(Tlp(kind, 0, cfg.read_request_bytes, requested_bytes=chunk, **tlp_fields))
    elif kind is TlpKind.COMPLETION:
        cap, header = cfg.max_payload_bytes, cfg.completion_header_bytes
        remaining = msg_bytes
        while remaining > 0:
            chunk = min(cap, remaining)
            remaining -= chunk
            out.append(Tlp(kind, chunk, header, **tlp_fields))
    else:
        raise ValueError(f"unknown TLP kind {kind}")
    out[-1].end_of_message = True
    return out


def arbitrate(qps: Sequence[QpState], cursor: int) -> tuple[QpState, int]:
    """Pick the next active QP at or after `cursor`, round robin.

    Returns the grant and the advanced cursor. Raises NoActiveQp when every
    queue is empty; the caller idles until new work arrives.
    """
    n = len(qps)
    if n == 0:
        raise NoActiveQp("no queue pairs registered")
    for off in range(n):
        i = (cursor + off) % n
        if qps[i].active:
            return qps[i], (i + 1) % n
    raise NoActiveQp("all queue pairs idle")


def effective_peak(cfg: PcieConfig, msg_bytes: int, kind: TlpKind) -> float:
    """Analytic goodput ceiling (Gbps) for a solo stream of `msg_bytes` messages.

    Writes pay one header per payload chunk. Reads are bounded by whichever
    direction saturates first: completions carrying the data, or the read
    requests on the opposite channel.
    """
    if kind is TlpKind.MEM_WRITE:
        wire = sum(t.wire_bytes for t in segment(msg_bytes, kind, cfg))
        return cfg.link_rate_gbps * msg_bytes / wire
    if kind is TlpKind.MEM_READ_REQ:
        reqs = segment(msg_bytes, TlpKind.MEM_READ_REQ, cfg)
        req_wire = sum(t.wire_bytes for t in reqs)
        cpl_wire = 0
        for r in reqs:
            cpl_wire += sum(t.wire_bytes for t in segment(r.requested_bytes, TlpKind.COMPLETION, cfg))
        data_side = cfg.link_rate_gbps * msg_bytes / cpl_wire
        req_side = cfg.link_rate_gbps * msg_bytes / req_wire
        return min(data_side, req_side)
    raise ValueError("effective_peak is defined for writes and reads")


def drain_time(drain: DrainConfig, tlp: Tlp) -> Fraction:
    """Serial receiver cost for one TLP, exact nanoseconds."""
    t = Fraction(drain.per_tlp_ns) + Fraction(tlp.payload_bytes * 8) / Fraction(str(drain.drain_gbps))
    if (
        tlp.kind is TlpKind.MEM_WRITE
        and tlp.data_class
        and 0 < tlp.payload_bytes < drain.subline_bytes
    ):
        t += drain.subline_penalty_ns
    return t


class Arbitration(Enum):
    PER_TLP = "per_tlp"
    PER_MESSAGE = "per_message"


class ReadGate:
    """Completion landing buffer shared by all data reads on one channel.

    A read request may only be granted once the buffer can hold the bytes it
    will pull back; space frees when the returned data finishes draining on
    the opposite channel. Head-of-line order is preserved: when the request at
    the arbitration cursor cannot reserve, requests behind it wait too, so a
    burst of small reads cannot leapfrog a large one. Ring-maintenance reads
    land in dedicated ring buffers and bypass the gate.
    """

    def __init__(self, capacity_bytes: int):
        self.capacity = capacity_bytes
        self.outstanding = 0
        self.blocked_qp: Optional[tuple[str, int]] = None

    def applies(self, tlp: Tlp) -> bool:
        return tlp.kind is TlpKind.MEM_READ_REQ and tlp.data_class

    def can(self, nbytes: int) -> bool:
        return self.outstanding + nbytes <= self.capacity

    def take(self, nbytes: int) -> None:
        self.outstanding += nbytes

    def release(self, nbytes: int) -> None:
        self.outstanding -= nbytes
        if self.outstanding < 0:
            raise AssertionError("read gate released more bytes than reserved")


class LinkChannel:
    """One direction of the link: sender lanes, serializer, receiver drain.

    Sender lanes: a strict-priority control FIFO plus per-QP data queues under
    round-robin arbitration. A TLP is granted only when the shared header
    credit and data-byte pools cover it; pools replenish when the receiver
    finishes draining the TLP. Work conservation: the serializer never idles
    while any credit-eligible TLP is pending (a starved queue is skipped).
    """

    def __init__(
        self,
        name: str,
        cfg: PcieConfig,
        drain: DrainConfig,
        loop: EventLoop,
        on_drained: Callable[[Tlp, int], None],
        arbitration: Arbitration = Arbitration.PER_TLP,
        read_gate: Optional[ReadGate] = None,
    ):
        self.name = name
        self.cfg = cfg
        self.drain_cfg = drain
        self.loop = loop
        self.on_drained = on_drained
        self.arbitration = arbitration
        self.read_gate = read_gate
        self.rate: Fraction = cfg.link_rate  # bits per ns
        self.busy_until: Fraction = Fraction(0)
        self.credit_headers = cfg.credit_headers
        self.credit_data = cfg.credit_data_bytes
        self.control: deque[Tlp] = deque()
        self._qps: list[QpState] = []
        self._qp_index: dict[tuple[str, int], QpState] = {}
        self.cursor = 0
        self._sticky: Optional[QpState] = None  # per-message mode: finish the message
        self._drain_queue: deque[Tlp] = deque()
        self._drain_busy: Fraction = Fraction(0)
        self._draining = False
        # conservation counters
        self.tlps_enqueued = 0
        self.tlps_granted = 0
        self.tlps_drained = 0
        self.payload_enqueued = 0
        self.payload_drained = 0

    # -- sender side -------------------------------------------------------

    def register_qp(self, tenant_id: str, qp_id: int) -> QpState:
        qp = QpState(qp_id=qp_id, tenant_id=tenant_id)
        self._qps.append(qp)
        self._qp_index[(tenant_id, qp_id)] = qp
        return qp

    def enqueue_data(self, tenant_id: str, qp_id: int, tlp: Tlp) -> None:
        self.tlps_enqueued += 1
        self.payload_enqueued += tlp.payload_bytes
        if tlp.queued_at is None:
            tlp.queued_at = Fraction(self.loop.now)
        self._qp_index[(tenant_id, qp_id)].pending.append(tlp)
        self.kick()

    def enqueue_control(self, tlp: Tlp) -> None:
        self.tlps_enqueued += 1
        self.payload_enqueued += tlp.payload_bytes
        if tlp.queued_at is None:
            tlp.queued_at = Fraction(self.loop.now)
        self.control.append(tlp)
        self.kick()

    def _eligible(self, tlp: Tlp) -> bool:
        return self.credit_headers >= 1 and self.credit_data >= tlp.payload_bytes

    def _gate_allows(self, qp: QpState, tlp: Tlp) -> bool:
        gate = self.read_gate
        if gate is None or not gate.applies(tlp):
            return True
        key = (qp.tenant_id, qp.qp_id)
        if gate.blocked_qp is not None and gate.blocked_qp != key:
            return False  # a request ahead of us is waiting for landing space
        if not gate.can(tlp.requested_bytes):
            gate.blocked_qp = key
            return False
        gate.blocked_qp = None
        return True

    def _select(self) -> Optional[Tlp]:
        if self.control and self._eligible(self.control[0]):
            return self.control.popleft()
        if self._sticky is not None:
            qp = self._sticky
            if qp.active and self._eligible(qp.pending[0]) and self._gate_allows(qp, qp.pending[0]):
                tlp = qp.pending.popleft()
                if tlp.end_of_message:
                    self._sticky = None
                return tlp
            if qp.active:
                return None  # mid-message, starved for credits: hold the slot
            self._sticky = None
        n = len(self._qps)
        for off in range(n):
            i = (self.cursor + off) % n
            qp = self._qps[i]
            if qp.active and self._eligible(qp.pending[0]) and self._gate_allows(qp, qp.pending[0]):
                tlp = qp.pending.popleft()
                self.cursor = (i + 1) % n
                if self.arbitration is Arbitration.PER_MESSAGE and not tlp.end_of_message:
                    self._sticky = qp
                return tlp
        return None

    def serialize_ns(self, tlp: Tlp) -> Fraction:
        return Fraction(tlp.wire_bytes * 8) / self.rate

    def schedule_tlp(
        self, tlp: Tlp, now: int | Fraction, *, not_before: Optional[Fraction] = None
    ) -> Fraction:
        """Debit credits and place `tlp` on the wire; returns arrival time.

        Raises InsufficientCredits instead of queueing: callers use the lane
        queues for deferral, this is the final commit point.
        """
        if not self._eligible(tlp):
            raise InsufficientCredits(f"{self.name}: header={self.credit_headers} data={self.credit_data}")
        self.credit_headers -= 1
        self.credit_data -= tlp.payload_bytes
        if self.read_gate is not None and self.read_gate.applies(tlp):
            self.read_gate.take(tlp.requested_bytes)
        # A TLP already waiting when the wire freed goes out the instant the
        # previous one ends, even though the pump event fires on the next
        # whole nanosecond. `not_before` carries the exact unblock instant
        # when the caller knows it (credit return); otherwise the grant is
        # floored at the previous nanosecond, since whatever unblocked this
        # TLP happened inside the current event's 1 ns tick.
        if not_before is None:
            not_before = Fraction(max(0, ceil_ns(now) - 1))
        avail = tlp.queued_at if tlp.queued_at is not None else Fraction(now)
        start = max(avail, self.busy_until, not_before)
        end = start + self.serialize_ns(tlp)
        self.busy_until = end
        tlp.landed_at = end
        self.tlps_granted += 1
        return end

    def kick(self, not_before: Optional[Fraction] = None) -> None:
        """Grant as soon as the serializer is free; arrivals re-kick."""
        now = self.loop.now
        if self.busy_until > now:
            return  # a TLP is in flight; its arrival event will pump again
        tlp = self._select()
        if tlp is None:
            return
        end = self.schedule_tlp(tlp, now, not_before=not_before)
        self.loop.at(end, lambda t=tlp: self._arrive(t))

    def _arrive(self, tlp: Tlp) -> None:
        self.kick()  # serializer is free again
        self._drain_queue.append(tlp)
        if not self._draining:
            self._drain_next()

    # -- receiver side -----------------------------------------------------

    def _drain_next(self) -> None:
        if not self._drain_queue:
            self._draining = False
            return
        self._draining = True
        tlp = self._drain_queue.popleft()
        arrived = tlp.landed_at if tlp.landed_at is not None else Fraction(self.loop.now)
        start = max(arrived, self._drain_busy)
        end = start + drain_time(self.drain_cfg, tlp)
        self._drain_busy = end
        self.loop.at(end, lambda t=tlp, e=end: self._drained(t, e))

    def _drained(self, tlp: Tlp, exact_end: Optional[Fraction] = None) -> None:
        self.credit_headers += 1
        self.credit_data += tlp.payload_bytes
        self.tlps_drained += 1
        self.payload_drained += tlp.payload_bytes
        self._drain_next()
        # returned credits may unblock a starved lane; the unblock instant is
        # the exact drain completion, not this event's rounded timestamp
        self.kick(not_before=exact_end)
        self.on_drained(tlp, self.loop.now)

    # -- accounting --------------------------------------------------------

    @property
    def tlps_in_flight(self) -> int:
        queued = sum(len(q.pending) for q in self._qps) + len(self.control)
        return queued + (self.tlps_granted - self.tlps_drained)

    def conservation_ok(self) -> bool:
        return self.tlps_enqueued == self.tlps_drained + self.tlps_in_flight
