"""Link segmentation, arbitration, credits, drain, and the read gate."""
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from accelshape.events import EventLoop
from accelshape.fabric import (
    Arbitration,
    LinkChannel,
    NoActiveQp,
    QpState,
    ReadGate,
    Tlp,
    TlpKind,
    arbitrate,
    drain_time,
    effective_peak,
    segment,
)
from accelshape.model import DrainConfig, PcieConfig

CFG = PcieConfig()


class TestSegment:
    def test_write_chunks_at_payload_cap(self):
        # frozen oracle: 4096B write over 256B chunks -> 16 TLPs, 24B headers
        tlps = segment(4096, TlpKind.MEM_WRITE, CFG)
        assert len(tlps) == 16
        assert all(t.payload_bytes == 256 and t.header_bytes == 24 for t in tlps)
        assert [t.end_of_message for t in tlps] == [False] * 15 + [True]

    def test_write_remainder_chunk(self):
        tlps = segment(600, TlpKind.MEM_WRITE, CFG)
        assert [t.payload_bytes for t in tlps] == [256, 256, 88]

    def test_read_is_header_only_requests(self):
        # frozen oracle: 4096B read at 512B request cap -> 8 header-only TLPs
        tlps = segment(4096, TlpKind.MEM_READ_REQ, CFG)
        assert len(tlps) == 8
        assert all(t.payload_bytes == 0 and t.header_bytes == 24 for t in tlps)
        assert all(t.requested_bytes == 512 for t in tlps)

    def test_completion_chunks_with_short_header(self):
        tlps = segment(512, TlpKind.COMPLETION, CFG)
        assert [t.payload_bytes for t in tlps] == [256, 256]
        assert all(t.header_bytes == 20 for t in tlps)

    def test_empty_message_rejected(self):
        with pytest.raises(ValueError):
            segment(0, TlpKind.MEM_WRITE, CFG)

    @given(st.integers(min_value=1, max_value=1 << 20))
    def test_payload_conserved(self, n):
        for kind in (TlpKind.MEM_WRITE, TlpKind.COMPLETION):
            assert sum(t.payload_bytes for t in segment(n, kind, CFG)) == n
        assert sum(t.requested_bytes for t in segment(n, TlpKind.MEM_READ_REQ, CFG)) == n

    @given(st.integers(min_value=1, max_value=1 << 20))
    def test_chunks_respect_caps(self, n):
        assert all(t.payload_bytes <= CFG.max_payload_bytes for t in segment(n, TlpKind.MEM_WRITE, CFG))
        assert all(
            t.requested_bytes <= CFG.max_read_req_bytes for t in segment(n, TlpKind.MEM_READ_REQ, CFG)
        )


class TestAnalytic:
    def test_effective_peak_write(self):
        # frozen oracle: 63 * 4096 / (4096 + 16*24) = 57.6
        assert effective_peak(CFG, 4096, TlpKind.MEM_WRITE) == pytest.approx(57.6)

    def test_effective_peak_write_small(self):
        # 64B writes: 63 * 64/88
        assert effective_peak(CFG, 64, TlpKind.MEM_WRITE) == pytest.approx(63 * 64 / 88)

    def test_effective_peak_read_completion_bound(self):
        # 4096B read: completions dominate (16 chunks of 256+20)
        assert effective_peak(CFG, 4096, TlpKind.MEM_READ_REQ) == pytest.approx(63 * 4096 / (16 * 276))

    def test_drain_time_components(self):
        d = DrainConfig()  # 8 ns per TLP + payload at 100 Gbps + 160 ns subline
        full = Tlp(TlpKind.MEM_WRITE, 256, 24)
        assert drain_time(d, full) == Fraction(8) + Fraction(256 * 8, 100)
        tiny = Tlp(TlpKind.MEM_WRITE, 16, 24)
        assert drain_time(d, tiny) == Fraction(8) + Fraction(16 * 8, 100) + 160

    def test_subline_penalty_boundaries(self):
        d = DrainConfig()
        at_line = Tlp(TlpKind.MEM_WRITE, 64, 24)
        assert drain_time(d, at_line) == Fraction(8) + Fraction(64 * 8, 100)
        control = Tlp(TlpKind.MEM_WRITE, 16, 24, data_class=False)
        assert drain_time(d, control) == Fraction(8) + Fraction(16 * 8, 100)
        header_only = Tlp(TlpKind.MEM_READ_REQ, 0, 24)
        assert drain_time(d, header_only) == Fraction(8)


class TestArbitrate:
    def _qps(self, loads):
        qps = []
        for i, n in enumerate(loads):
            q = QpState(qp_id=i, tenant_id=f"t{i}")
            for _ in range(n):
                q.pending.append(Tlp(TlpKind.MEM_WRITE, 1, 24))
            qps.append(q)
        return qps

    def test_round_robin_cycles(self):
        qps = self._qps([2, 2, 2])
        cursor = 0
        order = []
        for _ in range(6):
            q, cursor = arbitrate(qps, cursor)
            q.pending.popleft()
            order.append(q.qp_id)
        assert order == [0, 1, 2, 0, 1, 2]

    def test_skips_idle_queues(self):
        qps = self._qps([1, 0, 1])
        q, cursor = arbitrate(qps, 1)
        assert q.qp_id == 2

    def test_all_idle_raises(self):
        with pytest.raises(NoActiveQp):
            arbitrate(self._qps([0, 0]), 0)
        with pytest.raises(NoActiveQp):
            arbitrate([], 0)


def mk_channel(loop, drained, drain=None, arbitration=Arbitration.PER_TLP, gate=None, cfg=None):
    cfg = cfg or CFG
    return LinkChannel(
        "ch",
        cfg,
        drain or cfg.host_drain,
        loop,
        drained,
        arbitration=arbitration,
        read_gate=gate,
    )


class TestChannel:
    def test_serialization_time_exact(self):
        loop = EventLoop()
        done = []
        ch = mk_channel(loop, lambda t, now: done.append((t, now)))
        ch.register_qp("a", 0)
        tlp = Tlp(TlpKind.MEM_WRITE, 256, 24, tenant_id="a")
        assert ch.schedule_tlp(tlp, 0) == Fraction(280 * 8, 63)

    def test_back_to_back_chain_exactly(self):
        # two TLPs queued together: total wire time is the exact sum, with
        # no whole-nanosecond rounding between them
        loop = EventLoop()
        done = []
        ch = mk_channel(loop, lambda t, now: done.append(now))
        ch.register_qp("a", 0)
        for _ in range(9):
            ch.enqueue_data("a", 0, Tlp(TlpKind.MEM_WRITE, 256, 24, tenant_id="a"))
        loop.run_until(10_000)
        # arrivals at ceil(k * 2240/63); the 9th lands at ceil(320) = 320
        assert ch.busy_until == Fraction(2240 * 9, 63)
        assert len(done) == 9

    def test_per_tlp_round_robin_interleaves(self):
        loop = EventLoop()
        seen = []
        ch = mk_channel(loop, lambda t, now: seen.append(t.tenant_id))
        ch.register_qp("a", 0)
        ch.register_qp("b", 1)
        for t in segment(1024, TlpKind.MEM_WRITE, CFG, tenant_id="a", qp_id=0):
            ch.enqueue_data("a", 0, t)
        for t in segment(1024, TlpKind.MEM_WRITE, CFG, tenant_id="b", qp_id=1):
            ch.enqueue_data("b", 1, t)
        loop.run_until(100_000)
        assert seen[:8] == ["a", "b", "a", "b", "a", "b", "a", "b"]

    def test_per_message_sticks_to_sender(self):
        loop = EventLoop()
        seen = []
        ch = mk_channel(loop, lambda t, now: seen.append(t.tenant_id), arbitration=Arbitration.PER_MESSAGE)
        ch.register_qp("a", 0)
        ch.register_qp("b", 1)
        for t in segment(1024, TlpKind.MEM_WRITE, CFG, tenant_id="a", qp_id=0):
            ch.enqueue_data("a", 0, t)
        for t in segment(1024, TlpKind.MEM_WRITE, CFG, tenant_id="b", qp_id=1):
            ch.enqueue_data("b", 1, t)
        loop.run_until(100_000)
        assert seen == ["a"] * 4 + ["b"] * 4

    def test_control_lane_preempts_data_queue(self):
        loop = EventLoop()
        seen = []
        ch = mk_channel(loop, lambda t, now: seen.append(t.data_class))
        ch.register_qp("a", 0)
        for t in segment(1024, TlpKind.MEM_WRITE, CFG, tenant_id="a", qp_id=0):
            ch.enqueue_data("a", 0, t)
        ch.enqueue_control(Tlp(TlpKind.MEM_WRITE, 16, 24, data_class=False))
        loop.run_until(100_000)
        # the control TLP entered second but lands ahead of the remaining data
        assert seen[1] is False

    def test_credits_bound_inflight_data(self):
        loop = EventLoop()
        drained = []
        # zero per-TLP cost but a huge payload drain keeps TLPs parked in the
        # receiver, pinning credits down
        slow = DrainConfig(per_tlp_ns=0, drain_gbps=0.001, subline_bytes=64, subline_penalty_ns=0)
        ch = mk_channel(loop, lambda t, now: drained.append(t), drain=slow)
        ch.register_qp("a", 0)
        for _ in range(64):
            ch.enqueue_data("a", 0, Tlp(TlpKind.MEM_WRITE, 256, 24, tenant_id="a"))
        loop.run_until(5_000)
        # the 16-header pool binds before the 8192B data pool (32 chunks)
        assert ch.tlps_granted == 16
        assert ch.credit_headers == 0
        assert ch.credit_data == CFG.credit_data_bytes - 16 * 256

    def test_credit_return_resumes_service(self):
        loop = EventLoop()
        drained = []
        ch = mk_channel(loop, lambda t, now: drained.append(t))
        ch.register_qp("a", 0)
        for _ in range(64):
            ch.enqueue_data("a", 0, Tlp(TlpKind.MEM_WRITE, 256, 24, tenant_id="a"))
        loop.run_until(1_000_000)
        assert len(drained) == 64
        assert ch.conservation_ok()
        assert ch.credit_headers == CFG.credit_headers
        assert ch.credit_data == CFG.credit_data_bytes

    def test_drain_is_serial_and_exact(self):
        loop = EventLoop()
        stamps = []
        ch = mk_channel(loop, lambda t, now: stamps.append(now))
        ch.register_qp("a", 0)
        for _ in range(4):
            ch.enqueue_data("a", 0, Tlp(TlpKind.MEM_WRITE, 16, 24, tenant_id="a"))
        loop.run_until(1_000_000)
        # wire 40B = 5.08 ns each; drain 8 + 1.28 + 160 = 169.28 each, serial.
        # first drain completes at wire + drain, the rest queue behind it.
        first = Fraction(40 * 8, 63) + Fraction(8) + Fraction(16 * 8, 100) + 160
        assert stamps[0] == -(-first.numerator // first.denominator)
        for a, b in zip(stamps, stamps[1:]):
            gap = b - a
            assert 169 <= gap <= 170

    def test_conservation_counters(self):
        loop = EventLoop()
        ch = mk_channel(loop, lambda t, now: None)
        ch.register_qp("a", 0)
        for t in segment(3000, TlpKind.MEM_WRITE, CFG, tenant_id="a", qp_id=0):
            ch.enqueue_data("a", 0, t)
        assert ch.conservation_ok()
        loop.run_until(50)
        assert ch.conservation_ok()
        loop.run_until(1_000_000)
        assert ch.conservation_ok()
        assert ch.payload_drained == 3000


class TestReadGate:
    def test_reserve_and_release(self):
        g = ReadGate(1024)
        assert g.can(1024)
        g.take(1024)
        assert not g.can(1)
        g.release(512)
        assert g.can(512)
        assert not g.can(513)

    def test_release_below_zero_rejected(self):
        g = ReadGate(64)
        g.take(64)
        g.release(64)
        with pytest.raises(AssertionError):
            g.release(1)

    def test_applies_only_to_data_reads(self):
        g = ReadGate(64)
        assert g.applies(Tlp(TlpKind.MEM_READ_REQ, 0, 24, requested_bytes=64))
        assert not g.applies(Tlp(TlpKind.MEM_READ_REQ, 0, 24, requested_bytes=64, data_class=False))
        assert not g.applies(Tlp(TlpKind.MEM_WRITE, 64, 24))

    def test_gate_blocks_grants_until_released(self):
        loop = EventLoop()
        ch = mk_channel(loop, lambda t, now: None, gate=ReadGate(512))
        ch.register_qp("a", 0)
        for _ in range(3):
            ch.enqueue_data(
                "a", 0, Tlp(TlpKind.MEM_READ_REQ, 0, 24, tenant_id="a", requested_bytes=512)
            )
        loop.run_until(10_000)
        assert ch.tlps_granted == 1  # landing space for exactly one request
        ch.read_gate.release(512)
        ch.kick()
        loop.run_until(20_000)
        assert ch.tlps_granted == 2

    def test_gate_preserves_header_of_line_order(self):
        # a large read that does not fit must not be overtaken by a small one
        loop = EventLoop()
        seen = []
        ch = mk_channel(loop, lambda t, now: seen.append(t.tenant_id), gate=ReadGate(512))
        ch.register_qp("big", 0)
        ch.register_qp("small", 1)
        ch.read_gate.take(256)  # 256 of 512 already spoken for
        ch.enqueue_data("big", 0, Tlp(TlpKind.MEM_READ_REQ, 0, 24, tenant_id="big", requested_bytes=512))
        ch.enqueue_data(
            "small", 1, Tlp(TlpKind.MEM_READ_REQ, 0, 24, tenant_id="small", requested_bytes=64)
        )
        loop.run_until(10_000)
        assert seen == []  # blocked at the head; the small read cannot leapfrog
        ch.read_gate.release(256)
        ch.kick()
        loop.run_until(20_000)
        assert seen == ["big"]  # big went first; small now waits on its data
        ch.read_gate.release(512)
        ch.kick()
        loop.run_until(30_000)
        assert seen == ["big", "small"]

    def test_control_reads_bypass_gate(self):
        loop = EventLoop()
        seen = []
        ch = mk_channel(loop, lambda t, now: seen.append(t), gate=ReadGate(64))
        ch.register_qp("a", 0)
        ch.read_gate.take(64)  # gate full
        ch.enqueue_control(Tlp(TlpKind.MEM_READ_REQ, 0, 24, requested_bytes=512, data_class=False))
        loop.run_until(10_000)
        assert len(seen) == 1
