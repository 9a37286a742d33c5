"""End-to-end simulation wiring: generators, rings, shaper, fabric, engines.

A user message flows submit → descriptor fetch → payload DMA → (compute →
write-back) → completion record. Raw flows skip the compute stage. In push
mode fetches chase doorbells; in pull mode (shaping) the shaper's grant
schedule alone decides when work is pulled.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, auto
from fractions import Fraction
from typing import Optional

from .engine import AccelEngine, EngineItem
from .events import EventLoop, ceil_ns, tenant_rng
from .fabric import Arbitration, LinkChannel, ReadGate, Tlp, TlpKind, segment
from .model import Direction, FlowSpec, PcieConfig, RateMetric, egress_size
from .ring import Descriptor, ProtocolMode, RingConfig, RingPair
from .shaper import (
    BatchAccumulator,
    BatchTo,
    PoliceAction,
    ShaperConfig,
    TokenBucket,
    WireMessage,
    normalize,
    police_small,
)

START_JITTER_SPAN_NS = 1024
SHAPER_BACKLOG_CAP = 64  # wire ops staged ahead of grants; the rest waits in the SQ


class OpKind(Enum):
    WRITE = auto()  # device writes host memory (data travels accel-to-host)
    READ = auto()  # device reads host memory (data rides completions)
    INVOKE = auto()  # read ingress, compute, write egress back


@dataclass
class WireOp:
    """One shaped message as the fabric carries it."""

    op_id: int
    tenant_id: str
    qp_id: int
    kind: OpKind
    wire: WireMessage
    descs: list[Descriptor]
    excess_grant: bool = False
    fetched: bool = False
    tlps_total: int = 0
    tlps_done: int = 0
    bytes_done: int = 0
    egress_bytes: int = 0
    ingress_done_ns: int = -1


@dataclass
class QpCtx:
    qp_id: int
    ring: RingPair
    launchq: deque = field(default_factory=deque)
    inflight: int = 0
    fetch_pending: bool = False
    pump_busy: bool = False  # reentrancy guard: submits from inside the pump
    # ring the doorbell, which must not restart the pump recursively


@dataclass
class TenantCounters:
    submitted_bytes: int = 0
    submitted_ops: int = 0
    ingress_bytes: int = 0
    delivered_user_bytes: int = 0
    delivered_ops: int = 0
    policed_ops: int = 0
    policed_bytes: int = 0


class TenantShaperState:
    """Pull-mode pacing for one tenant: normalize, police, grant."""

    def __init__(self, sim: "Simulation", ctx: "TenantCtx", config: ShaperConfig, wire_hint: int):
        self.sim = sim
        self.ctx = ctx
        self.config = config
        self.min_bucket = config.build_min_bucket(wire_hint)
        self.max_bucket = config.build_max_bucket(wire_hint)
        self.grant_queue: deque[WireOp] = deque()
        self.batch: Optional[BatchAccumulator] = None
        if isinstance(config.resize, BatchTo):
            self.batch = BatchAccumulator(config.resize)
        self._batch_deadline_armed = False
        self.excess_inflight = 0
        self._armed_at: Optional[int] = None

    # -- intake ---------------------------------------------------------

    @property
    def backlog(self) -> int:
        return len(self.grant_queue) + (self.batch.pending_ops if self.batch else 0)

    def ingest(self, desc: Descriptor, qp: QpCtx) -> None:
        now = self.sim.loop.now
        action = police_small(desc.msg_bytes, self.config.small_msg_floor, self.config.resize)
        if action == PoliceAction.DENY:
            self.sim._police_deny(self.ctx, desc, qp)
            return
        if self.batch is not None and desc.msg_bytes < self.config.small_msg_floor:
            full = self.batch.feed(desc.msg_bytes, now)
            self.ctx.batch_descs.append(desc)
            if full is not None:
                self._emit_batch(full)
            elif not self._batch_deadline_armed:
                self._arm_batch_deadline()
            self.schedule()
            return
        for wire in normalize(desc.msg_bytes, self.config.resize if not isinstance(self.config.resize, BatchTo) else None):
            self._push_op(wire, [desc])
        self.schedule()

    def _emit_batch(self, wire: WireMessage) -> None:
        descs = [self.ctx.batch_descs.popleft() for _ in range(wire.user_ops)]
        self._push_op(wire, descs)

    def _arm_batch_deadline(self) -> None:
        assert self.batch is not None
        deadline = self.batch.deadline_ns
        if deadline is None:
            return
        self._batch_deadline_armed = True

        def fire():
            self._batch_deadline_armed = False
            if self.batch.pending_ops and self.batch.deadline_ns is not None:
                if self.batch.deadline_ns <= self.sim.loop.now:
                    flushed = self.batch.flush()
                    if flushed is not None:
                        self._emit_batch(flushed)
                        self.schedule()
                else:
                    self._arm_batch_deadline()

        self.sim.loop.at(deadline, fire)

    def _push_op(self, wire: WireMessage, descs: list[Descriptor]) -> None:
        op = self.sim._make_op(self.ctx, descs[0].qp_id, wire, descs)
        for d in descs:
            self.sim.desc_ops[id(d)] = self.sim.desc_ops.get(id(d), 0) + 1
        self.grant_queue.append(op)

    # -- pacing ---------------------------------------------------------

    def head(self) -> Optional[WireOp]:
        return self.grant_queue[0] if self.grant_queue else None

    def schedule(self) -> None:
        """Arm the minimum-guarantee grant for the head of the queue."""
        op = self.head()
        if op is None:
            return
        if self.min_bucket is None and self.sim.excess is not None:
            return  # best-effort: only the excess scheduler grants
        now = self.sim.loop.now
        cost = self.config.bucket_cost(op.wire)
        t = Fraction(now)
        for bucket in (self.min_bucket, self.max_bucket):
            if bucket is None:
                continue
            r = bucket.ready_time(cost, now)
            if r is None:
                return
            t = max(t, r)
        when = ceil_ns(t)
        if self._armed_at is not None and self._armed_at <= when:
            return
        self._armed_at = when
        self.sim.loop.at(when, self._fire)

    def _fire(self) -> None:
        self._armed_at = None
        op = self.head()
        if op is None:
            return
        if self.min_bucket is None and self.sim.excess is not None:
            return
        now = self.sim.loop.now
        cost = self.config.bucket_cost(op.wire)
        for bucket in (self.min_bucket, self.max_bucket):
            if bucket is None:
                continue
            r = bucket.ready_time(cost, now)
            if r is None or r > Fraction(now):
                self.schedule()  # stale wake-up; re-arm for the true time
                return
        for bucket in (self.min_bucket, self.max_bucket):
            if bucket is not None:
                bucket.debit(cost, now)
        self.grant_queue.popleft()
        self.sim._dispatch_granted(self.ctx, op)
        self.schedule()

    def grant_excess(self, op: WireOp) -> None:
        """ExcessScheduler hands this tenant a share of leftover capacity."""
        now = self.sim.loop.now
        cost = self.config.bucket_cost(op.wire)
        if self.max_bucket is not None:
            self.max_bucket.debit(cost, now)
        assert self.grant_queue and self.grant_queue[0] is op
        self.grant_queue.popleft()
        op.excess_grant = True
        self.excess_inflight += 1
        self.sim._dispatch_granted(self.ctx, op)
        self.schedule()


class ExcessScheduler:
    """Round-robin sharing of capacity left over after all minimum grants.

    Per-direction token buckets meter leftover wire rate; a backlogged tenant
    under its cap may borrow when every channel its head op touches has
    tokens. Completions re-trigger the scan, so the link stays busy whenever
    any tenant is eligible (work conservation up to the utilization target).
    """

    def __init__(self, sim: "Simulation", shapers: list[TenantShaperState], budgets: dict[str, float]):
        self.sim = sim
        self.rr: deque[TenantShaperState] = deque(shapers)
        cap_bits = 2 * max((s.config.burst_messages for s in shapers), default=4) * 65536
        self.buckets = {
            ch: TokenBucket(Fraction(str(max(rate, 0.0))), Fraction(cap_bits))
            for ch, rate in budgets.items()
        }
        self._retry_at: Optional[int] = None

    def _op_wire_costs(self, shaper: TenantShaperState, op: WireOp) -> dict[str, int]:
        return self.sim._op_wire_bits(op)

    def try_grants(self) -> None:
        now = self.sim.loop.now
        earliest: Optional[Fraction] = None
        granted = True
        while granted:
            granted = False
            for _ in range(len(self.rr)):
                shaper = self.rr[0]
                self.rr.rotate(-1)
                op = shaper.head()
                if op is None or shaper.excess_inflight >= shaper.config.burst_messages:
                    continue
                cost = shaper.config.bucket_cost(op.wire)
                if shaper.max_bucket is not None:
                    r = shaper.max_bucket.ready_time(cost, now)
                    if r is None or r > Fraction(now):
                        continue  # capped; the tenant's own schedule handles it
                costs = self._op_wire_costs(shaper, op)
                ready = Fraction(now)
                feasible = True
                for ch, bits in costs.items():
                    r = self.buckets[ch].ready_time(bits, now)
                    if r is None:
                        feasible = False
                        break
                    ready = max(ready, r)
                if not feasible:
                    continue
                if ready > Fraction(now):
                    earliest = ready if earliest is None else min(earliest, ready)
                    continue
                for ch, bits in costs.items():
                    self.buckets[ch].debit(bits, now)
                shaper.grant_excess(op)
                granted = True
        if earliest is not None:
            when = ceil_ns(earliest)
            if self._retry_at is None or self._retry_at > when:
                self._retry_at = when

                def fire():
                    self._retry_at = None
                    self.try_grants()

                self.sim.loop.at(when, fire)


class TenantCtx:
    def __init__(self, sim: "Simulation", flow: FlowSpec, qp_count: int):
        self.sim = sim
        self.flow = flow
        self.rng = tenant_rng(sim.seed, flow.tenant_id)
        self.qps: list[QpCtx] = []
        self.qp_cursor = 0
        self.pull_cursor = 0
        self.pull_busy = False
        self.counters = TenantCounters()
        self.shaper: Optional[TenantShaperState] = None
        self.batch_descs: deque[Descriptor] = deque()
        self.latencies: list[int] = []
        self.window_bytes: list[int] = []
        self.window_ops: list[int] = []
        self.live_descs = 0
        self.park_submit = False  # rated generator blocked on a full SQ
        self.next_arrival: Optional[Fraction] = None
        self.msg_seq = itertools.count()
        self.qp_count = qp_count

    @property
    def tenant_id(self) -> str:
        return self.flow.tenant_id

    def op_kind(self) -> OpKind:
        if self.flow.accelerator is not None:
            return OpKind.INVOKE
        if self.flow.direction is Direction.ACCEL_TO_HOST:
            return OpKind.WRITE
        return OpKind.READ

    def draw_size(self) -> int:
        choices = self.flow.sizes.choices
        if len(choices) == 1:
            return choices[0]
        return self.rng.choice(choices)


class Simulation:
    """One scenario run. Construct, call run_all(), read the outputs."""

    def __init__(
        self,
        *,
        flows: list[FlowSpec],
        pcie: PcieConfig,
        ring: RingConfig,
        duration_ns: int,
        seed: int,
        protocol: ProtocolMode,
        arbitration: Arbitration,
        profiles: dict,
        shaper_configs: dict[str, ShaperConfig],
        excess_budgets: Optional[dict[str, float]] = None,
        qp_overrides: Optional[dict[str, int]] = None,
        fabric_bypass: bool = False,
        engine_buffer_bytes: int = 262144,
        windows: int = 50,
        trace: bool = False,
    ):
        self.loop = EventLoop()
        self.cfg = pcie
        self.ring_cfg = ring
        self.duration = duration_ns
        self.warmup = duration_ns // 10
        self.seed = seed
        self.protocol = protocol
        self.fabric_bypass = fabric_bypass
        self.trace_rows: Optional[list[dict]] = [] if trace else None
        n_windows = max(1, windows)
        span = duration_ns - self.warmup
        self.window_ns = max(1, span // n_windows)
        self.n_windows = max(1, span // self.window_ns)

        self.ops: dict[int, WireOp] = {}
        self.desc_ops: dict[int, int] = {}
        self._op_ids = itertools.count(1)

        if not fabric_bypass:
            # device reads reserve host-completion landing space before issue
            self.read_gate = ReadGate(pcie.credit_data_bytes)
            self.ath = LinkChannel(
                "accel_to_host", pcie, pcie.host_drain, self.loop, self._ath_drained,
                arbitration, read_gate=self.read_gate,
            )
            self.hta = LinkChannel(
                "host_to_accel", pcie, pcie.device_drain, self.loop, self._hta_drained, arbitration
            )
        else:
            self.ath = self.hta = None
            self.read_gate = None

        self.engines: dict[str, AccelEngine] = {}
        for name, profile in profiles.items():
            eng = AccelEngine(profile, self.loop, self._engine_done, engine_buffer_bytes)
            eng.on_space_freed = self._engine_space_freed
            self.engines[name] = eng
        self.engine_waiters: deque[WireOp] = deque()
        self.profiles = profiles

        self.tenants: dict[str, TenantCtx] = {}
        qp_ids = itertools.count(0)
        for flow in flows:
            qp_count = (qp_overrides or {}).get(flow.tenant_id, flow.qp_count)
            ctx = TenantCtx(self, flow, qp_count)
            ctx.window_bytes = [0] * self.n_windows
            ctx.window_ops = [0] * self.n_windows
            for _ in range(qp_count):
                qp_id = next(qp_ids)
                qp = QpCtx(qp_id=qp_id, ring=RingPair(qp_id, ring))
                ctx.qps.append(qp)
                if self.ath is not None:
                    self.ath.register_qp(flow.tenant_id, qp_id)
            self.tenants[flow.tenant_id] = ctx
            cfg = shaper_configs.get(flow.tenant_id)
            if cfg is not None:
                wire_hint = max(flow.sizes.choices)
                if cfg.resize is not None and hasattr(cfg.resize, "target_bytes"):
                    wire_hint = cfg.resize.target_bytes
                ctx.shaper = TenantShaperState(self, ctx, cfg, wire_hint)

        self.excess: Optional[ExcessScheduler] = None
        shaped = [c.shaper for c in self.tenants.values() if c.shaper is not None]
        if shaped and excess_budgets is not None:
            self.excess = ExcessScheduler(self, shaped, excess_budgets)

        self.fetch_records: dict[int, tuple[TenantCtx, QpCtx, list[Descriptor], int]] = {}
        self.fetch_follow: dict[int, tuple[TenantCtx, WireOp]] = {}
        self._fetch_ids = itertools.count(1)
        self.cq_records: dict[int, tuple[TenantCtx, Descriptor, int]] = {}
        self._cq_ids = itertools.count(1)

        for ctx in self.tenants.values():
            jitter = ctx.rng.randrange(START_JITTER_SPAN_NS)
            self.loop.at(jitter, lambda c=ctx: self._start_flow(c))

    # -- generators ----------------------------------------------------------

    def _start_flow(self, ctx: TenantCtx) -> None:
        if ctx.flow.offered_gbps is None:
            for qp in ctx.qps:
                self._refill_qp(ctx, qp)
        else:
            ctx.next_arrival = Fraction(self.loop.now)
            self._arrive(ctx)

    def _refill_qp(self, ctx: TenantCtx, qp: QpCtx) -> None:
        """Saturating source: keep the submission ring full."""
        while qp.ring.sq_space > 0:
            self._submit(ctx, qp, self.loop.now)

    def _arrive(self, ctx: TenantCtx) -> None:
        """Rated source: arrival spacing set by the drawn size and offered rate."""
        qp = ctx.qps[ctx.qp_cursor % len(ctx.qps)]
        if qp.ring.sq_space == 0:
            ctx.park_submit = True
            return
        ctx.qp_cursor += 1
        size = self._submit(ctx, qp, self.loop.now)
        rate = Fraction(str(ctx.flow.offered_gbps))
        ctx.next_arrival = max(Fraction(self.loop.now), ctx.next_arrival) + Fraction(size * 8) / rate
        if ctx.next_arrival < self.duration:
            self.loop.at(ctx.next_arrival, lambda: self._arrive(ctx))

    def _submit(self, ctx: TenantCtx, qp: QpCtx, now: int) -> int:
        size = ctx.draw_size()
        desc = Descriptor(ctx.tenant_id, qp.qp_id, next(ctx.msg_seq), size, now)
        qp.ring.submit(desc)
        ctx.counters.submitted_bytes += size
        ctx.counters.submitted_ops += 1
        ctx.live_descs += 1
        self._doorbell(ctx, qp)
        return size

    def _slot_freed(self, ctx: TenantCtx, qp: QpCtx) -> None:
        if ctx.flow.offered_gbps is None:
            self._refill_qp(ctx, qp)
        elif ctx.park_submit:
            ctx.park_submit = False
            self._arrive(ctx)

    # -- doorbell / fetch ------------------------------------------------------

    def _doorbell(self, ctx: TenantCtx, qp: QpCtx) -> None:
        if self.fabric_bypass:
            self._bypass_pump(ctx, qp)
            return
        if ctx.shaper is not None:
            # pull mode: the interface reacts lazily; the shaper owns timing
            self._pull_more(ctx)
            if self.excess is not None:
                self.excess.try_grants()
            return
        # push mode (and unshaped pull, which degenerates to pass-through
        # grants): fetch a batch whenever the processing queue has drained
        self._push_fetch(ctx, qp)

    def _pull_more(self, ctx: TenantCtx) -> None:
        """Stage SQ work into the shaper up to a bounded backlog; the rest
        stays host-resident until grants free room."""
        if ctx.pull_busy or ctx.shaper is None:
            return
        ctx.pull_busy = True
        try:
            progress = True
            while progress and ctx.shaper.backlog < SHAPER_BACKLOG_CAP:
                progress = False
                for _ in range(len(ctx.qps)):
                    qp = ctx.qps[ctx.pull_cursor % len(ctx.qps)]
                    ctx.pull_cursor += 1
                    if qp.ring.doorbell > 0:
                        desc = qp.ring.fetch(1, self.loop.now)[0]
                        ctx.shaper.ingest(desc, qp)
                        self._slot_freed(ctx, qp)
                        progress = True
                    if ctx.shaper.backlog >= SHAPER_BACKLOG_CAP:
                        break
        finally:
            ctx.pull_busy = False

    def _push_fetch(self, ctx: TenantCtx, qp: QpCtx) -> None:
        # consume-then-fetch: no new batch while unprocessed work remains,
        # so device-side queues stay bounded and backlog lives in the SQ
        if qp.fetch_pending or qp.ring.doorbell == 0 or qp.launchq:
            return
        qp.fetch_pending = True
        batch = qp.ring.fetch(self.ring_cfg.fetch_batch, self.loop.now)
        self._fetch_dma(ctx, qp, batch)
        self._slot_freed(ctx, qp)

    def _fetch_dma(self, ctx: TenantCtx, qp: QpCtx, descs: list[Descriptor]) -> None:
        for d in descs:
            d.wire_fetched = True
        nbytes = len(descs) * self.ring_cfg.descriptor_bytes
        if nbytes == 0 or self.ath is None:
            self.loop.at(self.loop.now, lambda: self._fetch_done(ctx, qp, descs))
            return
        fid = next(self._fetch_ids)
        self.fetch_records[fid] = (ctx, qp, descs, nbytes)
        req = Tlp(
            TlpKind.MEM_READ_REQ,
            0,
            self.cfg.read_request_bytes,
            tenant_id=ctx.tenant_id,
            qp_id=qp.qp_id,
            parent_msg=-fid,  # negative ids mark ring-maintenance reads
            requested_bytes=nbytes,
            data_class=False,
        )
        self.ath.enqueue_control(req)

    def _fetch_done(self, ctx: TenantCtx, qp: QpCtx, descs: list[Descriptor]) -> None:
        qp.fetch_pending = False
        for desc in descs:
            self._process_desc(ctx, qp, desc)
        if self.protocol is ProtocolMode.PUSH:
            self._push_fetch(ctx, qp)  # more doorbells may have landed meanwhile

    # -- descriptor processing (unshaped path) ---------------------------------

    def _process_desc(self, ctx: TenantCtx, qp: QpCtx, desc: Descriptor) -> None:
        for wire in normalize(desc.msg_bytes, None):
            op = self._make_op(ctx, qp.qp_id, wire, [desc])
            self.desc_ops[id(desc)] = self.desc_ops.get(id(desc), 0) + 1
            self._launch_or_queue(ctx, op)

    def _make_op(self, ctx: TenantCtx, qp_id: int, wire: WireMessage, descs: list[Descriptor]) -> WireOp:
        op = WireOp(
            op_id=next(self._op_ids),
            tenant_id=ctx.tenant_id,
            qp_id=qp_id,
            kind=ctx.op_kind(),
            wire=wire,
            descs=descs,
        )
        self.ops[op.op_id] = op
        return op

    # -- shaped dispatch -------------------------------------------------------

    def _dispatch_granted(self, ctx: TenantCtx, op: WireOp) -> None:
        """A grant fires: fetch the descriptors' records, then move payload."""
        unfetched = [d for d in op.descs if not d.wire_fetched]
        for d in unfetched:
            d.wire_fetched = True
            d.fetched_ns = self.loop.now  # ownership passes on the grant
        nbytes = len(unfetched) * self.ring_cfg.descriptor_bytes
        qp = self._qp_of(ctx, op.qp_id)
        self._pull_more(ctx)  # a grant freed staging room; pull the next work in
        if nbytes == 0 or self.ath is None:
            self._launch_or_queue(ctx, op)
            return
        fid = next(self._fetch_ids)
        self.fetch_records[fid] = (ctx, qp, [], nbytes)
        self.fetch_follow[fid] = (ctx, op)
        req = Tlp(
            TlpKind.MEM_READ_REQ,
            0,
            self.cfg.read_request_bytes,
            tenant_id=ctx.tenant_id,
            qp_id=op.qp_id,
            parent_msg=-fid,
            requested_bytes=nbytes,
            data_class=False,
        )
        self.ath.enqueue_control(req)

    def _police_deny(self, ctx: TenantCtx, desc: Descriptor, qp: QpCtx) -> None:
        desc.policed = True
        desc.fetched_ns = self.loop.now
        ctx.counters.policed_ops += 1
        ctx.counters.policed_bytes += desc.msg_bytes
        ctx.live_descs -= 1
        self._complete_desc(ctx, desc)

    # -- launch ------------------------------------------------------------

    def _qp_of(self, ctx: TenantCtx, qp_id: int) -> QpCtx:
        for qp in ctx.qps:
            if qp.qp_id == qp_id:
                return qp
        return ctx.qps[0]

    def _launch_or_queue(self, ctx: TenantCtx, op: WireOp) -> None:
        qp = self._qp_of(ctx, op.qp_id)
        if qp.inflight >= self.ring_cfg.qp_window:
            qp.launchq.append(op)
            return
        self._launch(ctx, qp, op)

    def _launch(self, ctx: TenantCtx, qp: QpCtx, op: WireOp) -> None:
        qp.inflight += 1
        if self.fabric_bypass:
            raise AssertionError("bypass flows never launch fabric ops")
        if op.kind is OpKind.WRITE:
            tlps = segment(
                op.wire.payload_bytes,
                TlpKind.MEM_WRITE,
                self.cfg,
                tenant_id=ctx.tenant_id,
                qp_id=op.qp_id,
                parent_msg=op.op_id,
            )
        else:  # READ and INVOKE ingress
            tlps = segment(
                op.wire.payload_bytes,
                TlpKind.MEM_READ_REQ,
                self.cfg,
                tenant_id=ctx.tenant_id,
                qp_id=op.qp_id,
                parent_msg=op.op_id,
            )
        op.tlps_total = len(tlps)
        for t in tlps:
            self.ath.enqueue_data(ctx.tenant_id, op.qp_id, t)

    # -- fabric callbacks ----------------------------------------------------

    def _ath_drained(self, tlp: Tlp, now: int) -> None:
        if tlp.kind is TlpKind.MEM_READ_REQ:
            if tlp.parent_msg < 0:
                # descriptor fetch: completer returns the ring records
                fid = -tlp.parent_msg
                _, _, _, nbytes = self.fetch_records[fid]
                for c in segment(nbytes, TlpKind.COMPLETION, self.cfg, parent_msg=-fid, data_class=False):
                    self.hta.enqueue_control(c)
                return
            for c in segment(
                tlp.requested_bytes,
                TlpKind.COMPLETION,
                self.cfg,
                tenant_id=tlp.tenant_id,
                qp_id=tlp.qp_id,
                parent_msg=tlp.parent_msg,
            ):
                self.hta.enqueue_control(c)
            return
        if tlp.kind is TlpKind.MEM_WRITE:
            if not tlp.data_class:
                cid = tlp.parent_msg
                ctx, desc, user_bytes = self.cq_records.pop(cid)
                self._desc_done(ctx, desc, now, user_bytes)
                return
            op = self.ops[tlp.parent_msg]
            op.tlps_done += 1
            op.bytes_done += tlp.payload_bytes
            if op.tlps_done == op.tlps_total:
                if op.kind is OpKind.WRITE:
                    self._op_ingress_done(op, now)
                    self._op_finished(op, now)
                else:  # INVOKE egress landed
                    self._op_finished(op, now)
            return
        raise AssertionError(f"unexpected TLP at host receiver: {tlp.kind}")

    def _hta_drained(self, tlp: Tlp, now: int) -> None:
        if tlp.kind is not TlpKind.COMPLETION:
            raise AssertionError(f"unexpected TLP at device receiver: {tlp.kind}")
        if tlp.parent_msg < 0:
            fid = -tlp.parent_msg
            rec = self.fetch_records[fid]
            ctx, qp, descs, nbytes = rec
            done = rec[3] - tlp.payload_bytes
            if done > 0:
                self.fetch_records[fid] = (ctx, qp, descs, done)
                return
            del self.fetch_records[fid]
            follow = self.fetch_follow.pop(fid, None)
            if follow is not None:
                fctx, fop = follow
                self._launch_or_queue(fctx, fop)
            else:
                self._fetch_done(ctx, qp, descs)
            return
        if self.read_gate is not None:
            self.read_gate.release(tlp.payload_bytes)
            self.ath.kick()  # freed landing space may admit the next request
        op = self.ops[tlp.parent_msg]
        op.bytes_done += tlp.payload_bytes
        if op.bytes_done < op.wire.payload_bytes:
            return
        self._op_ingress_done(op, now)
        if op.kind is OpKind.READ:
            self._op_finished(op, now)
        else:  # INVOKE: payload staged, hand to the engine
            self._engine_submit(op)

    # -- engine ------------------------------------------------------------

    def _engine_submit(self, op: WireOp) -> None:
        ctx = self.tenants[op.tenant_id]
        eng = self.engines[ctx.flow.accelerator]
        item = EngineItem(op.tenant_id, op.wire.payload_bytes, token=op.op_id)
        if not eng.try_enqueue(item):
            self.engine_waiters.append(op)

    def _engine_space_freed(self, now: int) -> None:
        while self.engine_waiters:
            op = self.engine_waiters[0]
            ctx = self.tenants[op.tenant_id]
            eng = self.engines[ctx.flow.accelerator]
            item = EngineItem(op.tenant_id, op.wire.payload_bytes, token=op.op_id)
            if not eng.try_enqueue(item):
                return
            self.engine_waiters.popleft()
            if self.fabric_bypass:
                qp = self._qp_of(ctx, op.qp_id)
                qp.fetch_pending = False
                self._bypass_pump(ctx, qp)

    def _engine_done(self, item: EngineItem, egress_bytes: int, now: int) -> None:
        op = self.ops[item.token]
        op.egress_bytes = egress_bytes
        ctx = self.tenants[op.tenant_id]
        if self.fabric_bypass:
            self._op_finished(op, now)
            return
        op.tlps_total = 0
        op.tlps_done = 0
        op.bytes_done = 0
        tlps = segment(
            egress_bytes,
            TlpKind.MEM_WRITE,
            self.cfg,
            tenant_id=op.tenant_id,
            qp_id=op.qp_id,
            parent_msg=op.op_id,
        )
        op.tlps_total = len(tlps)
        op.wire = WireMessage(egress_bytes, op.wire.user_bytes, op.wire.user_ops)
        for t in tlps:
            self.ath.enqueue_data(op.tenant_id, op.qp_id, t)

    # -- bypass path ---------------------------------------------------------

    def _bypass_pump(self, ctx: TenantCtx, qp: QpCtx) -> None:
        """Direct feed into the engine, backpressured by its staging buffer."""
        if qp.fetch_pending or qp.pump_busy:
            return  # parked on engine space, or already inside this pump
        qp.pump_busy = True
        try:
            while qp.ring.doorbell > 0:
                eng = self.engines[ctx.flow.accelerator]
                desc = qp.ring.fetch(1, self.loop.now)[0]
                op = self._make_op(ctx, qp.qp_id, WireMessage(desc.msg_bytes, desc.msg_bytes), [desc])
                self.desc_ops[id(desc)] = 1
                item = EngineItem(op.tenant_id, op.wire.payload_bytes, token=op.op_id)
                if not eng.try_enqueue(item):
                    qp.fetch_pending = True
                    self.engine_waiters.append(op)
                    self._slot_freed(ctx, qp)
                    return
                self._slot_freed(ctx, qp)
        finally:
            qp.pump_busy = False

    # -- completion ------------------------------------------------------------

    def _op_ingress_done(self, op: WireOp, now: int) -> None:
        op.ingress_done_ns = now
        ctx = self.tenants[op.tenant_id]
        ctx.counters.ingress_bytes += op.wire.user_bytes

    def _op_finished(self, op: WireOp, now: int) -> None:
        ctx = self.tenants[op.tenant_id]
        qp = self._qp_of(ctx, op.qp_id)
        if not self.fabric_bypass:
            qp.inflight -= 1
            if qp.launchq and qp.inflight < self.ring_cfg.qp_window:
                self._launch(ctx, qp, qp.launchq.popleft())
            if not qp.launchq and ctx.shaper is None:
                self._push_fetch(ctx, qp)
        delivered = op.egress_bytes if op.kind is OpKind.INVOKE else op.wire.user_bytes
        for desc in op.descs:
            remaining = self.desc_ops[id(desc)] - 1
            share = delivered // len(op.descs)
            desc_done = remaining == 0
            if desc_done:
                del self.desc_ops[id(desc)]
                self._complete_desc(ctx, desc, user_bytes=share if op.kind is OpKind.INVOKE else desc.msg_bytes)
            else:
                self.desc_ops[id(desc)] = remaining
        if op.excess_grant and ctx.shaper is not None:
            ctx.shaper.excess_inflight -= 1
        del self.ops[op.op_id]
        if self.excess is not None:
            self.excess.try_grants()

    def _complete_desc(self, ctx: TenantCtx, desc: Descriptor, user_bytes: int = 0) -> None:
        if desc.policed or self.ring_cfg.completion_bytes == 0 or self.ath is None:
            self._desc_done(ctx, desc, self.loop.now, user_bytes)
            return
        cid = next(self._cq_ids)
        self.cq_records[cid] = (ctx, desc, user_bytes)
        tlp = Tlp(
            TlpKind.MEM_WRITE,
            self.ring_cfg.completion_bytes,
            self.cfg.tlp_header_bytes,
            tenant_id=ctx.tenant_id,
            qp_id=desc.qp_id,
            parent_msg=cid,
            data_class=False,
        )
        self.ath.enqueue_control(tlp)

    def _desc_done(self, ctx: TenantCtx, desc: Descriptor, now: int, user_bytes: int = 0) -> None:
        desc.completed_ns = now
        if desc.policed:
            self._trace(ctx, desc)
            return
        ctx.live_descs -= 1
        ctx.counters.delivered_ops += 1
        ctx.counters.delivered_user_bytes += user_bytes
        if now >= self.warmup:
            idx = (now - self.warmup) // self.window_ns
            if idx < self.n_windows:
                ctx.latencies.append(now - desc.submitted_ns)
                ctx.window_bytes[int(idx)] += user_bytes
                ctx.window_ops[int(idx)] += 1
        rp = self._qp_of(ctx, desc.qp_id).ring
        rp.post_completion()
        rp.host_drain_cq()
        self._trace(ctx, desc)

    def _trace(self, ctx: TenantCtx, desc: Descriptor) -> None:
        if self.trace_rows is None or len(self.trace_rows) >= 20000:
            return
        self.trace_rows.append(
            {
                "tenant": ctx.tenant_id,
                "msg_id": desc.msg_id,
                "bytes": desc.msg_bytes,
                "submitted_ns": desc.submitted_ns,
                "fetched_ns": desc.fetched_ns,
                "completed_ns": desc.completed_ns,
                "policed": desc.policed,
            }
        )

    # -- helpers ------------------------------------------------------------

    def _op_wire_bits(self, op: WireOp) -> dict[str, int]:
        """Wire cost per channel for excess budgeting (headers included)."""
        costs: dict[str, int] = {}
        if op.kind is OpKind.WRITE:
            wire = sum(t.wire_bytes for t in segment(op.wire.payload_bytes, TlpKind.MEM_WRITE, self.cfg))
            costs["accel_to_host"] = wire * 8
            return costs
        reqs = segment(op.wire.payload_bytes, TlpKind.MEM_READ_REQ, self.cfg)
        req_wire = sum(t.wire_bytes for t in reqs)
        cpl_wire = sum(
            c.wire_bytes
            for r in reqs
            for c in segment(r.requested_bytes, TlpKind.COMPLETION, self.cfg)
        )
        costs["host_to_accel"] = cpl_wire * 8
        costs["accel_to_host"] = req_wire * 8
        if op.kind is OpKind.INVOKE:
            ctx = self.tenants[op.tenant_id]
            profile = self.profiles[ctx.flow.accelerator]
            out = egress_size(profile.egress, op.wire.payload_bytes)
            egress_wire = sum(t.wire_bytes for t in segment(out, TlpKind.MEM_WRITE, self.cfg))
            costs["accel_to_host"] += egress_wire * 8
        return costs

    # -- run ------------------------------------------------------------------

    def run_all(self) -> None:
        self.loop.run_until(self.duration)

    def conservation(self) -> dict:
        submitted = sum(c.counters.submitted_bytes for c in self.tenants.values())
        ingress = sum(c.counters.ingress_bytes for c in self.tenants.values())
        policed = sum(c.counters.policed_bytes for c in self.tenants.values())
        live = sum(c.live_descs for c in self.tenants.values())
        submitted_ops = sum(c.counters.submitted_ops for c in self.tenants.values())
        delivered_ops = sum(c.counters.delivered_ops for c in self.tenants.values())
        policed_ops = sum(c.counters.policed_ops for c in self.tenants.values())
        chans_ok = True
        if self.ath is not None:
            chans_ok = self.ath.conservation_ok() and self.hta.conservation_ok()
        return {
            "submitted_bytes": submitted,
            "ingress_bytes": ingress,
            "policed_bytes": policed,
            "live_descs": live,
            "submitted_ops": submitted_ops,
            "delivered_ops": delivered_ops,
            "policed_ops": policed_ops,
            "ops_balanced": submitted_ops == delivered_ops + policed_ops + live,
            "channels_consistent": chans_ok,
        }
