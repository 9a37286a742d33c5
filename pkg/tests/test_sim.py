"""End-to-end invariants of whole simulation runs on short scenarios."""
from __future__ import annotations

import dataclasses

import pytest

from accelshape.harness import Scenario, csv_text, run
from accelshape.model import (
    AcceleratorProfile,
    Direction,
    FlowSpec,
    Proportional,
    RateMetric,
    SizeDist,
    Sla,
)
from accelshape.ring import ProtocolMode, RingConfig


def writer(tid: str, sizes, qp_count: int = 1, offered: float | None = None) -> FlowSpec:
    if isinstance(sizes, int):
        sizes = (sizes,)
    return FlowSpec(
        tenant_id=tid,
        direction=Direction.ACCEL_TO_HOST,
        sizes=SizeDist(tuple(sizes)),
        qp_count=qp_count,
        offered_gbps=offered,
    )


def reader(tid: str, sizes, qp_count: int = 1, offered: float | None = None) -> FlowSpec:
    if isinstance(sizes, int):
        sizes = (sizes,)
    return FlowSpec(
        tenant_id=tid,
        direction=Direction.HOST_TO_ACCEL,
        sizes=SizeDist(tuple(sizes)),
        qp_count=qp_count,
        offered_gbps=offered,
    )


def invoker(tid: str, sizes, accel: str, offered: float | None = None) -> FlowSpec:
    if isinstance(sizes, int):
        sizes = (sizes,)
    return FlowSpec(
        tenant_id=tid,
        direction=Direction.HOST_TO_ACCEL,
        sizes=SizeDist(tuple(sizes)),
        offered_gbps=offered,
        accelerator=accel,
    )


HALVER = AcceleratorProfile(
    name="halver",
    curve=((1024, 20.0), (8192, 20.0)),
    egress=Proportional(0.5),
    fixed_latency_ns=300,
)

MIXED = Scenario(
    name="unit/mixed",
    flows=(
        writer("w", (512, 4096), qp_count=2),
        reader("r", (256, 1024)),
        invoker("c", (1024, 4096), "halver"),
    ),
    profiles=(HALVER,),
    duration_ns=400_000,
    windows=10,
)


def assert_conserved(res) -> None:
    cons = res.conservation
    assert cons["ops_balanced"], cons
    assert cons["channels_consistent"], cons
    assert cons["live_descs"] >= 0


class TestConservation:
    def test_mixed_traffic(self):
        res = run(MIXED)
        assert_conserved(res)
        assert res.conservation["delivered_ops"] > 0

    def test_pull_unshaped(self):
        res = run(dataclasses.replace(MIXED, name="unit/mixed_pull", protocol=ProtocolMode.PULL))
        assert_conserved(res)

    def test_shaped(self):
        scn = Scenario(
            name="unit/shaped",
            flows=(
                writer("victim", 4096, offered=10.0),
                writer("hog", 64, qp_count=4),
            ),
            slas=(Sla("victim", RateMetric.GBPS, min_rate=8.0),),
            shaping_enabled=True,
            protocol=ProtocolMode.PULL,
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        assert_conserved(res)
        assert res.plan is not None

    def test_register_interface(self):
        scn = dataclasses.replace(
            MIXED,
            name="unit/register",
            ring=RingConfig(descriptor_bytes=0, completion_bytes=0),
        )
        res = run(scn)
        assert_conserved(res)


class TestDeterminism:
    def test_bit_identical_reruns(self):
        a, b = run(MIXED), run(MIXED)
        assert csv_text([a]) == csv_text([b])
        assert a.events_run == b.events_run
        for ma, mb in zip(a.metrics, b.metrics):
            assert ma == mb

    def test_seed_does_not_change_totals_much(self):
        # The seed only perturbs size draws within the same mixture, so the
        # aggregate throughput stays close while event details may differ.
        base = run(MIXED)
        other = run(dataclasses.replace(MIXED, seed=99))
        for ma, mb in zip(base.metrics, other.metrics):
            assert mb.gbps == pytest.approx(ma.gbps, rel=0.25)

    def test_single_size_seed_shift_is_warmup_noise_only(self):
        # A fixed-size saturating flow only uses the seed for its start
        # jitter, which the warm-up absorbs: steady-state totals match to
        # well under a percent even across seeds.
        scn = Scenario(name="unit/solo", flows=(writer("w", 4096),), duration_ns=200_000, windows=5)
        a = run(scn)
        b = run(dataclasses.replace(scn, seed=1234))
        assert b.tenant("w").gbps == pytest.approx(a.tenant("w").gbps, rel=0.005)
        assert b.tenant("w").iops == pytest.approx(a.tenant("w").iops, rel=0.005)


class TestGenerators:
    def test_rated_flow_tracks_offered_rate(self):
        scn = Scenario(
            name="unit/rated",
            flows=(writer("w", 1024, offered=8.0),),
            duration_ns=1_000_000,
            windows=10,
        )
        res = run(scn)
        assert res.tenant("w").gbps == pytest.approx(8.0, rel=0.02)
        assert_conserved(res)

    def test_saturating_exceeds_rated(self):
        sat = run(Scenario(name="unit/sat", flows=(writer("w", 1024),), duration_ns=400_000))
        rated = run(
            Scenario(
                name="unit/rate",
                flows=(writer("w", 1024, offered=8.0),),
                duration_ns=400_000,
            )
        )
        assert sat.tenant("w").gbps > 3 * rated.tenant("w").gbps

    def test_rated_sum_of_tenants(self):
        scn = Scenario(
            name="unit/two_rated",
            flows=(writer("a", 2048, offered=5.0), writer("b", 1024, offered=3.0)),
            duration_ns=1_000_000,
            windows=10,
        )
        res = run(scn)
        assert res.tenant("a").gbps == pytest.approx(5.0, rel=0.03)
        assert res.tenant("b").gbps == pytest.approx(3.0, rel=0.03)


class TestPolicing:
    def test_sub_floor_fraction_of_straddling_mixture_is_denied(self):
        # A mixture straddling the link MTU is split, not padded, so its
        # sub-floor messages are denied at admission when shaping is on.
        scn = Scenario(
            name="unit/deny",
            flows=(writer("t", (32, 4096), offered=5.0), writer("bg", 1024)),
            slas=(Sla("t", RateMetric.GBPS, min_rate=4.0),),
            shaping_enabled=True,
            protocol=ProtocolMode.PULL,
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        m = res.tenant("t")
        assert m.policed_ops > 0
        assert_conserved(res)
        # Denied operations never count toward delivered throughput.
        cons = res.conservation
        assert cons["delivered_ops"] + cons["policed_ops"] + cons["live_descs"] == cons["submitted_ops"]

    def test_padding_policy_reshapes_instead_of_denying(self):
        scn = Scenario(
            name="unit/pad",
            flows=(writer("t", 32, offered=2.0), writer("bg", 1024)),
            slas=(Sla("t", RateMetric.GBPS, min_rate=1.0),),
            shaping_enabled=True,
            protocol=ProtocolMode.PULL,
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        m = res.tenant("t")
        assert m.policed_ops == 0
        assert m.gbps > 0
        assert_conserved(res)


class TestLatencyTrace:
    def test_stamps_are_monotone(self):
        res = run(dataclasses.replace(MIXED, name="unit/trace", trace=True, duration_ns=200_000))
        rows = res.conservation  # run() does not expose trace rows; go direct
        from accelshape.sim import Simulation

        sim = Simulation(
            flows=list(MIXED.flows),
            pcie=MIXED.pcie,
            ring=MIXED.ring,
            duration_ns=200_000,
            seed=MIXED.seed,
            protocol=MIXED.protocol,
            arbitration=MIXED.arbitration,
            profiles={p.name: p for p in MIXED.profiles},
            shaper_configs={},
            trace=True,
        )
        sim.run_all()
        assert sim.trace_rows, "expected completed descriptors in the trace"
        for row in sim.trace_rows:
            assert 0 <= row["submitted_ns"] <= row["fetched_ns"] <= row["completed_ns"]
        assert rows["channels_consistent"]

    def test_latencies_positive(self):
        res = run(MIXED)
        for m in res.metrics:
            assert m.p50_ns > 0
            assert m.p99_ns >= m.p50_ns


class TestBypass:
    def test_engine_waiters_resume_when_buffer_frees(self):
        scn = Scenario(
            name="unit/bypass",
            flows=(invoker("c", 4096, "halver"),),
            profiles=(HALVER,),
            fabric_bypass=True,
            engine_buffer_bytes=8192,  # two invocations in flight at most
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        assert_conserved(res)
        # 20 Gbps curve at 0.5 egress ratio -> 10 Gbps of user output.
        assert res.tenant("c").gbps == pytest.approx(10.0, rel=0.03)

    def test_bypass_matches_curve_without_fabric_overhead(self):
        scn = Scenario(
            name="unit/bypass2",
            flows=(invoker("c", 1024, "halver"),),
            profiles=(HALVER,),
            fabric_bypass=True,
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        assert res.tenant("c").gbps == pytest.approx(10.0, rel=0.03)


class TestProtocolModes:
    def test_unshaped_pull_matches_push_throughput(self):
        push = run(dataclasses.replace(MIXED, name="unit/proto"))
        pull = run(
            dataclasses.replace(MIXED, name="unit/proto", protocol=ProtocolMode.PULL)
        )
        for mp, ml in zip(push.metrics, pull.metrics):
            assert ml.gbps == pytest.approx(mp.gbps, rel=0.02)


class TestAccounting:
    def test_summary_equals_mean_of_windows(self):
        res = run(MIXED)
        for m in res.metrics:
            mean = sum(g for _, g, _ in m.series) / len(m.series)
            assert m.gbps == pytest.approx(mean, rel=1e-9)

    def test_user_bytes_exclude_padding(self):
        # Padding 32 B messages up to the floor changes the wire stream, but
        # every user-facing counter keeps billing the original 32 B.
        scn = Scenario(
            name="unit/userbytes",
            flows=(writer("t", 32, offered=2.0), writer("bg", 1024)),
            slas=(Sla("t", RateMetric.GBPS, min_rate=1.0),),
            shaping_enabled=True,
            protocol=ProtocolMode.PULL,
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        m = res.tenant("t")
        assert m.gbps == pytest.approx(2.0, rel=0.05)
        assert m.ingress_gbps == pytest.approx(m.gbps, rel=0.1)

    def test_invoke_user_rate_reflects_egress_rule(self):
        scn = Scenario(
            name="unit/egress",
            flows=(invoker("c", 2048, "halver"),),
            profiles=(HALVER,),
            duration_ns=400_000,
            windows=10,
        )
        res = run(scn)
        m = res.tenant("c")
        assert m.gbps == pytest.approx(m.ingress_gbps / 2, rel=0.1)
