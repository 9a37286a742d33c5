"""Compute engine: service pipeline, buffer backpressure, curve fidelity."""
from fractions import Fraction

import pytest

from accelshape.engine import AccelEngine, EngineItem
from accelshape.events import EventLoop
from accelshape.model import AcceleratorProfile, FixedOutput, Proportional


def prof(curve, egress=None, latency=0, name="p"):
    return AcceleratorProfile(
        name=name,
        curve=tuple(curve),
        egress=egress or Proportional(Fraction(1)),
        fixed_latency_ns=latency,
    )


def collected(loop, profile, **kw):
    done = []
    eng = AccelEngine(profile, loop, lambda item, out, now: done.append((item, out, now)), **kw)
    return eng, done


class TestService:
    def test_compute_time_oracle(self):
        # frozen oracle: 4096B at 10 Gbps -> 3276.8 ns of compute
        loop = EventLoop()
        eng, _ = collected(loop, prof([(4096, 10.0)]))
        assert eng.compute_ns(4096) == Fraction(4096 * 8 * 10, 100)
        assert float(eng.compute_ns(4096)) == pytest.approx(3276.8)

    def test_completion_time_includes_fixed_latency(self):
        loop = EventLoop()
        eng, done = collected(loop, prof([(4096, 10.0)], latency=500))
        assert eng.try_enqueue(EngineItem("t", 4096))
        loop.run_until(10_000)
        assert len(done) == 1
        _, _, now = done[0]
        assert now == 3777  # ceil(3276.8 + 500)

    def test_throughput_converges_to_curve_despite_latency(self):
        # pipelining: a large fixed latency must not reduce sustained rate
        loop = EventLoop()
        eng, done = collected(loop, prof([(4096, 10.0)], latency=5000))
        n = 50
        for _ in range(n):
            assert eng.try_enqueue(EngineItem("t", 4096))
        loop.run_until(1_000_000)
        assert len(done) == n
        span = done[-1][2] - done[0][2]
        rate = (n - 1) * 4096 * 8 / span
        assert rate == pytest.approx(10.0, rel=0.02)

    def test_egress_reported_per_item(self):
        loop = EventLoop()
        eng, done = collected(loop, prof([(1024, 8.0)], egress=Proportional(Fraction(1, 2))))
        eng.try_enqueue(EngineItem("t", 1000))
        loop.run_until(10_000)
        assert done[0][1] == 500
        eng2, done2 = collected(loop, prof([(1024, 8.0)], egress=FixedOutput(64)))
        eng2.try_enqueue(EngineItem("t", 1000))
        loop.run_until(20_000)
        assert done2[0][1] == 64

    def test_fifo_across_tenants(self):
        loop = EventLoop()
        eng, done = collected(loop, prof([(1024, 8.0)]))
        for t in ("a", "b", "a", "c"):
            eng.try_enqueue(EngineItem(t, 512))
        loop.run_until(100_000)
        assert [i.tenant_id for i, _, _ in done] == ["a", "b", "a", "c"]


class TestBuffer:
    def test_oversized_input_rejected_loudly(self):
        loop = EventLoop()
        eng, _ = collected(loop, prof([(1024, 8.0)]), buffer_bytes=4096)
        with pytest.raises(ValueError):
            eng.try_enqueue(EngineItem("t", 4097))

    def test_full_buffer_returns_false(self):
        loop = EventLoop()
        eng, _ = collected(loop, prof([(1024, 8.0)]), buffer_bytes=4096)
        assert eng.try_enqueue(EngineItem("t", 4096))
        assert not eng.try_enqueue(EngineItem("t", 1))

    def test_space_frees_at_service_start(self):
        loop = EventLoop()
        eng, done = collected(loop, prof([(4096, 10.0)], latency=1000), buffer_bytes=4096)
        freed = []
        eng.on_space_freed = lambda now: freed.append(now)
        assert eng.try_enqueue(EngineItem("t", 4096))
        loop.run_until(1)  # service begins at t=0; completion is far away
        assert freed == [0]
        assert eng.buffer_used == 0
        assert done == []
        assert eng.try_enqueue(EngineItem("t", 4096))  # room before completion

    def test_occupancy_accounting(self):
        loop = EventLoop()
        eng, _ = collected(loop, prof([(1024, 8.0)]), buffer_bytes=2048)
        assert eng.try_enqueue(EngineItem("t", 1024))
        assert eng.try_enqueue(EngineItem("t", 1024))
        assert eng.buffer_used == 2048  # service has not started yet
        loop.run_until(1)  # first service start frees its slot
        assert eng.buffer_used == 1024
        assert eng.queued_ops == 1


class TestFidelity:
    @pytest.mark.parametrize("size,gbps", [(1024, 4.0), (4096, 8.0), (65536, 16.0)])
    def test_sustained_rate_tracks_curve(self, size, gbps):
        loop = EventLoop()
        p = prof([(1024, 4.0), (4096, 8.0), (65536, 16.0)], latency=750)
        n = 64
        eng, done = collected(loop, p, buffer_bytes=n * size)
        for _ in range(n):
            assert eng.try_enqueue(EngineItem("t", size))
        loop.run_until(10**9)
        span = done[-1][2] - done[0][2]
        rate = (n - 1) * size * 8 / span
        assert rate == pytest.approx(gbps, rel=0.02)
