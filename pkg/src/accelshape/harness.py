"""Scenario definition, execution harness, metrics, and CSV output.

A Scenario is a complete, serializable description of one experiment cell.
run() wires it into a Simulation, executes it, and reduces the raw counters
to per-tenant steady-state metrics: the first tenth of the run is warm-up,
and the remaining span is tiled by equal measurement windows.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, TextIO, Union

from .fabric import Arbitration
from .model import (
    AcceleratorProfile,
    ConfigError,
    Direction,
    FlowSpec,
    MeasuredAt,
    PcieConfig,
    DrainConfig,
    RateMetric,
    SizeDist,
    Sla,
    profile_from_dict,
    profile_to_dict,
)
from .ring import ProtocolMode, RingConfig
from .shaper import (
    DEFAULT_SMALL_MSG_FLOOR,
    DEFAULT_UTIL_TARGET,
    ShapingPlan,
    best_effort_config,
    plan_shaping,
)
from .sim import Simulation

CSV_HEADER = "scenario,tenant,gbps,iops,p50_ns,p99_ns,policed_ops"
SERIES_HEADER = "window_start_ns,tenant,gbps,iops"


@dataclass(frozen=True)
class Scenario:
    """One experiment cell: traffic, interface configuration, and policy."""

    name: str
    flows: tuple[FlowSpec, ...]
    duration_ns: int = 4_000_000
    seed: int = 1
    pcie: PcieConfig = field(default_factory=PcieConfig)
    ring: RingConfig = field(default_factory=RingConfig)
    protocol: ProtocolMode = ProtocolMode.PUSH
    arbitration: Arbitration = Arbitration.PER_TLP
    profiles: tuple[AcceleratorProfile, ...] = ()
    slas: tuple[Sla, ...] = ()
    shaping_enabled: bool = False
    fabric_bypass: bool = False
    qp_pool: Optional[int] = None
    util_target: float = DEFAULT_UTIL_TARGET
    small_msg_floor: int = DEFAULT_SMALL_MSG_FLOOR
    engine_buffer_bytes: int = 262144
    windows: int = 50
    trace: bool = False

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("scenario.name", "must be non-empty")
        if self.duration_ns < 10:
            raise ConfigError("scenario.duration_ns", "too short to measure")
        if self.seed < 0:
            raise ConfigError("scenario.seed", "must be >= 0")
        if not self.flows:
            raise ConfigError("scenario.flows", "at least one flow is required")
        if self.windows < 1:
            raise ConfigError("scenario.windows", "must be >= 1")
        if not (0.0 < self.util_target <= 1.0):
            raise ConfigError("scenario.util_target", "must be in (0, 1]")
        if self.small_msg_floor < 1:
            raise ConfigError("scenario.small_msg_floor", "must be >= 1")
        if self.engine_buffer_bytes < 1:
            raise ConfigError("scenario.engine_buffer_bytes", "must be >= 1")
        if self.qp_pool is not None and self.qp_pool < 1:
            raise ConfigError("scenario.qp_pool", "must be >= 1 when set")
        seen: set[str] = set()
        names = {p.name for p in self.profiles}
        if len(names) != len(self.profiles):
            raise ConfigError("scenario.profiles", "profile names must be unique")
        for i, flow in enumerate(self.flows):
            if flow.tenant_id in seen:
                raise ConfigError(f"scenario.flows[{i}].tenant_id", f"duplicate tenant {flow.tenant_id!r}")
            seen.add(flow.tenant_id)
            if flow.accelerator is not None:
                if flow.accelerator not in names:
                    raise ConfigError(
                        f"scenario.flows[{i}].accelerator", f"unknown profile {flow.accelerator!r}"
                    )
                if max(flow.sizes.choices) > self.engine_buffer_bytes:
                    raise ConfigError(
                        f"scenario.flows[{i}].sizes",
                        "invocation larger than the engine staging buffer",
                    )
        sla_seen: set[str] = set()
        for i, sla in enumerate(self.slas):
            if sla.tenant_id not in seen:
                raise ConfigError(f"scenario.slas[{i}].tenant_id", f"no flow for {sla.tenant_id!r}")
            if sla.tenant_id in sla_seen:
                raise ConfigError(f"scenario.slas[{i}].tenant_id", "one guarantee per tenant")
            sla_seen.add(sla.tenant_id)
        if self.shaping_enabled and self.protocol is not ProtocolMode.PULL:
            raise ConfigError("scenario.protocol", "shaping paces fetches, which requires pull mode")
        if self.fabric_bypass:
            for i, flow in enumerate(self.flows):
                if flow.accelerator is None:
                    raise ConfigError(
                        f"scenario.flows[{i}]", "fabric bypass only carries accelerator flows"
                    )


@dataclass(frozen=True)
class TenantMetrics:
    tenant_id: str
    gbps: float  # user-level delivered rate over the steady span
    iops: float  # completed messages per second
    p50_ns: int
    p99_ns: int
    policed_ops: int
    ingress_gbps: float  # payload pulled across the interface, whole run
    cov_gbps: float  # window-to-window coefficient of variation
    series: tuple[tuple[int, float, float], ...]  # (window_start_ns, gbps, iops)


@dataclass(frozen=True)
class RunResult:
    scenario: Scenario
    metrics: tuple[TenantMetrics, ...]  # sorted by tenant id
    conservation: dict
    events_run: int
    warmup_ns: int
    window_ns: int
    plan: Optional[ShapingPlan] = None

    def tenant(self, tenant_id: str) -> TenantMetrics:
        for m in self.metrics:
            if m.tenant_id == tenant_id:
                return m
        raise KeyError(tenant_id)


def ratio(a: float, b: float) -> float:
    """a/b with an explicit infinity instead of a crash on a starved tenant."""
    if b == 0:
        return float("inf")
    return a / b


def _percentile(sorted_vals: Sequence[int], pct: int) -> int:
    """Nearest-rank percentile of pre-sorted samples; 0 when empty."""
    if not sorted_vals:
        return 0
    n = len(sorted_vals)
    rank = -(-pct * n // 100)  # ceil without floats
    return sorted_vals[min(n - 1, max(0, rank - 1))]


def run(scenario: Scenario) -> RunResult:
    """Execute one scenario and reduce it to per-tenant steady-state metrics."""
    scenario.validate()
    profiles = {p.name: p for p in scenario.profiles}
    shaper_configs = {}
    excess_budgets = None
    qp_overrides = None
    plan: Optional[ShapingPlan] = None
    if scenario.shaping_enabled:
        plan = plan_shaping(
            scenario.flows,
            scenario.slas,
            profiles,
            scenario.pcie,
            qp_total=scenario.qp_pool,
            util_target=scenario.util_target,
            small_msg_floor=scenario.small_msg_floor,
        )
        qp_overrides = {}
        for t in plan.tenants:
            shaper_configs[t.tenant_id] = t.config
            qp_overrides[t.tenant_id] = t.qp_count
        for flow in scenario.flows:
            if flow.tenant_id not in shaper_configs:
                shaper_configs[flow.tenant_id] = best_effort_config(flow, scenario.small_msg_floor)
        excess_budgets = dict(plan.headroom_gbps)

    sim = Simulation(
        flows=list(scenario.flows),
        pcie=scenario.pcie,
        ring=scenario.ring,
        duration_ns=scenario.duration_ns,
        seed=scenario.seed,
        protocol=scenario.protocol,
        arbitration=scenario.arbitration,
        profiles=profiles,
        shaper_configs=shaper_configs,
        excess_budgets=excess_budgets,
        qp_overrides=qp_overrides,
        fabric_bypass=scenario.fabric_bypass,
        engine_buffer_bytes=scenario.engine_buffer_bytes,
        windows=scenario.windows,
        trace=scenario.trace,
    )
    sim.run_all()

    span_ns = sim.n_windows * sim.window_ns
    metrics = []
    for tenant_id in sorted(sim.tenants):
        ctx = sim.tenants[tenant_id]
        total_bytes = sum(ctx.window_bytes)
        total_ops = sum(ctx.window_ops)
        gbps = total_bytes * 8 / span_ns
        iops = total_ops * 1e9 / span_ns
        lat = sorted(ctx.latencies)
        win_gbps = [b * 8 / sim.window_ns for b in ctx.window_bytes]
        mean = sum(win_gbps) / len(win_gbps)
        if mean > 0:
            var = sum((g - mean) ** 2 for g in win_gbps) / len(win_gbps)
            cov = var**0.5 / mean
        else:
            cov = 0.0
        series = tuple(
            (sim.warmup + i * sim.window_ns, win_gbps[i], ctx.window_ops[i] * 1e9 / sim.window_ns)
            for i in range(sim.n_windows)
        )
        metrics.append(
            TenantMetrics(
                tenant_id=tenant_id,
                gbps=gbps,
                iops=iops,
                p50_ns=_percentile(lat, 50),
                p99_ns=_percentile(lat, 99),
                policed_ops=ctx.counters.policed_ops,
                ingress_gbps=ctx.counters.ingress_bytes * 8 / scenario.duration_ns,
                cov_gbps=cov,
                series=series,
            )
        )
    return RunResult(
        scenario=scenario,
        metrics=tuple(metrics),
        conservation=sim.conservation(),
        events_run=sim.loop.events_run,
        warmup_ns=sim.warmup,
        window_ns=sim.window_ns,
        plan=plan,
    )


# -- CSV emission --------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def emit_csv(results: Sequence[RunResult], out: Union[str, TextIO]) -> None:
    """Summary table, one row per (scenario, tenant), stable order."""
    own = isinstance(out, str)
    fh: TextIO = open(out, "w") if own else out  # noqa: SIM115 - symmetric close below
    try:
        fh.write(CSV_HEADER + "\n")
        for res in results:
            for m in res.metrics:
                fh.write(
                    f"{res.scenario.name},{m.tenant_id},{_fmt(m.gbps)},{_fmt(m.iops)},"
                    f"{m.p50_ns},{m.p99_ns},{m.policed_ops}\n"
                )
    finally:
        if own:
            fh.close()


def emit_series_csv(result: RunResult, out: Union[str, TextIO]) -> None:
    """Per-window time series for one scenario, rows sorted by (window, tenant)."""
    own = isinstance(out, str)
    fh: TextIO = open(out, "w") if own else out
    try:
        fh.write(SERIES_HEADER + "\n")
        rows = []
        for m in result.metrics:
            for start, gbps, iops in m.series:
                rows.append((start, m.tenant_id, gbps, iops))
        rows.sort(key=lambda r: (r[0], r[1]))
        for start, tenant, gbps, iops in rows:
            fh.write(f"{start},{tenant},{_fmt(gbps)},{_fmt(iops)}\n")
    finally:
        if own:
            fh.close()


def csv_text(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    emit_csv(results, buf)
    return buf.getvalue()


# -- JSON round trip -----------------------------------------------------------


def _check_keys(obj: dict, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def _drain_from_dict(obj: dict, path: str) -> DrainConfig:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    allowed = {"per_tlp_ns", "drain_gbps", "subline_bytes", "subline_penalty_ns"}
    _check_keys(obj, allowed, path)
    try:
        return DrainConfig(**{k: obj[k] for k in allowed if k in obj})
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _pcie_from_dict(obj: dict, path: str) -> PcieConfig:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    scalar = {
        "link_rate_gbps",
        "max_payload_bytes",
        "max_read_req_bytes",
        "tlp_header_bytes",
        "read_request_bytes",
        "completion_header_bytes",
        "credit_headers",
        "credit_data_bytes",
    }
    _check_keys(obj, scalar | {"host_drain", "device_drain"}, path)
    kwargs: dict = {k: obj[k] for k in scalar if k in obj}
    if "host_drain" in obj:
        kwargs["host_drain"] = _drain_from_dict(obj["host_drain"], f"{path}.host_drain")
    if "device_drain" in obj:
        kwargs["device_drain"] = _drain_from_dict(obj["device_drain"], f"{path}.device_drain")
    try:
        return PcieConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _ring_from_dict(obj: dict, path: str) -> RingConfig:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    allowed = {"sq_depth", "cq_depth", "descriptor_bytes", "completion_bytes", "fetch_batch", "qp_window"}
    _check_keys(obj, allowed, path)
    try:
        return RingConfig(**{k: obj[k] for k in allowed if k in obj})
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _flow_from_dict(obj: dict, path: str) -> FlowSpec:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    allowed = {"tenant_id", "direction", "sizes", "qp_count", "offered_gbps", "accelerator"}
    _check_keys(obj, allowed, path)
    try:
        direction = Direction(obj["direction"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}.direction", "expected host_to_accel or accel_to_host") from exc
    sizes = obj.get("sizes")
    if isinstance(sizes, int):
        sizes = [sizes]
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError(f"{path}.sizes", "expected a size or non-empty list of sizes")
    try:
        return FlowSpec(
            tenant_id=obj["tenant_id"],
            direction=direction,
            sizes=SizeDist(tuple(int(s) for s in sizes)),
            qp_count=int(obj.get("qp_count", 1)),
            offered_gbps=obj.get("offered_gbps"),
            accelerator=obj.get("accelerator"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _sla_from_dict(obj: dict, path: str) -> Sla:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    allowed = {"tenant_id", "metric", "min_rate", "max_rate", "measured_at"}
    _check_keys(obj, allowed, path)
    try:
        return Sla(
            tenant_id=obj["tenant_id"],
            metric=RateMetric(obj["metric"]),
            min_rate=float(obj["min_rate"]),
            max_rate=None if obj.get("max_rate") is None else float(obj["max_rate"]),
            measured_at=MeasuredAt(obj.get("measured_at", "user_level")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def scenario_from_dict(obj: dict, path: str = "scenario") -> Scenario:
    """Strict load: every key must be a known Scenario field."""
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    allowed = {
        "name",
        "duration_ns",
        "seed",
        "pcie",
        "ring",
        "protocol",
        "arbitration",
        "flows",
        "profiles",
        "slas",
        "shaping_enabled",
        "fabric_bypass",
        "qp_pool",
        "util_target",
        "small_msg_floor",
        "engine_buffer_bytes",
        "windows",
        "trace",
    }
    _check_keys(obj, allowed, path)
    if "name" not in obj:
        raise ConfigError(f"{path}.name", "required")
    if "flows" not in obj or not isinstance(obj["flows"], list) or not obj["flows"]:
        raise ConfigError(f"{path}.flows", "required non-empty list")
    kwargs: dict = {"name": obj["name"]}
    kwargs["flows"] = tuple(
        _flow_from_dict(f, f"{path}.flows[{i}]") for i, f in enumerate(obj["flows"])
    )
    if "pcie" in obj:
        kwargs["pcie"] = _pcie_from_dict(obj["pcie"], f"{path}.pcie")
    if "ring" in obj:
        kwargs["ring"] = _ring_from_dict(obj["ring"], f"{path}.ring")
    if "protocol" in obj:
        try:
            kwargs["protocol"] = ProtocolMode(obj["protocol"])
        except ValueError as exc:
            raise ConfigError(f"{path}.protocol", "expected push or pull") from exc
    if "arbitration" in obj:
        try:
            kwargs["arbitration"] = Arbitration(obj["arbitration"])
        except ValueError as exc:
            raise ConfigError(f"{path}.arbitration", "expected per_tlp or per_message") from exc
    if "profiles" in obj:
        if not isinstance(obj["profiles"], list):
            raise ConfigError(f"{path}.profiles", "expected a list")
        kwargs["profiles"] = tuple(
            profile_from_dict(p, f"{path}.profiles[{i}]") for i, p in enumerate(obj["profiles"])
        )
    if "slas" in obj:
        if not isinstance(obj["slas"], list):
            raise ConfigError(f"{path}.slas", "expected a list")
        kwargs["slas"] = tuple(_sla_from_dict(s, f"{path}.slas[{i}]") for i, s in enumerate(obj["slas"]))
    for key in (
        "duration_ns",
        "seed",
        "shaping_enabled",
        "fabric_bypass",
        "qp_pool",
        "util_target",
        "small_msg_floor",
        "engine_buffer_bytes",
        "windows",
        "trace",
    ):
        if key in obj:
            kwargs[key] = obj[key]
    try:
        scenario = Scenario(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc
    scenario.validate()
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    flows = []
    for f in s.flows:
        flows.append(
            {
                "tenant_id": f.tenant_id,
                "direction": f.direction.value,
                "sizes": list(f.sizes.choices),
                "qp_count": f.qp_count,
                "offered_gbps": f.offered_gbps,
                "accelerator": f.accelerator,
            }
        )
    slas = [
        {
            "tenant_id": x.tenant_id,
            "metric": x.metric.value,
            "min_rate": x.min_rate,
            "max_rate": x.max_rate,
            "measured_at": x.measured_at.value,
        }
        for x in s.slas
    ]
    drain = lambda d: {  # noqa: E731 - tiny local serializer
        "per_tlp_ns": d.per_tlp_ns,
        "drain_gbps": d.drain_gbps,
        "subline_bytes": d.subline_bytes,
        "subline_penalty_ns": d.subline_penalty_ns,
    }
    return {
        "name": s.name,
        "duration_ns": s.duration_ns,
        "seed": s.seed,
        "pcie": {
            "link_rate_gbps": s.pcie.link_rate_gbps,
            "max_payload_bytes": s.pcie.max_payload_bytes,
            "max_read_req_bytes": s.pcie.max_read_req_bytes,
            "tlp_header_bytes": s.pcie.tlp_header_bytes,
            "read_request_bytes": s.pcie.read_request_bytes,
            "completion_header_bytes": s.pcie.completion_header_bytes,
            "credit_headers": s.pcie.credit_headers,
            "credit_data_bytes": s.pcie.credit_data_bytes,
            "host_drain": drain(s.pcie.host_drain),
            "device_drain": drain(s.pcie.device_drain),
        },
        "ring": {
            "sq_depth": s.ring.sq_depth,
            "cq_depth": s.ring.cq_depth,
            "descriptor_bytes": s.ring.descriptor_bytes,
            "completion_bytes": s.ring.completion_bytes,
            "fetch_batch": s.ring.fetch_batch,
            "qp_window": s.ring.qp_window,
        },
        "protocol": s.protocol.value,
        "arbitration": s.arbitration.value,
        "flows": flows,
        "profiles": [profile_to_dict(p) for p in s.profiles],
        "slas": slas,
        "shaping_enabled": s.shaping_enabled,
        "fabric_bypass": s.fabric_bypass,
        "qp_pool": s.qp_pool,
        "util_target": s.util_target,
        "small_msg_floor": s.small_msg_floor,
        "engine_buffer_bytes": s.engine_buffer_bytes,
        "windows": s.windows,
        "trace": s.trace,
    }


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(path, f"invalid JSON: {exc}") from exc
    return scenario_from_dict(data)


def with_name(s: Scenario, name: str) -> Scenario:
    return replace(s, name=name)
