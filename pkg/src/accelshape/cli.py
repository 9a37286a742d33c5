"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 infeasible guarantee.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Iterable, Optional

from . import harness, scenarios
from .harness import RunResult, Scenario
from .model import ConfigError, InfeasibleSla
from .shaper import plan_shaping


def _resolve(args: argparse.Namespace) -> list[Scenario]:
    if args.file:
        return [harness.load_scenario(args.file)]
    name = args.name
    if name is None:
        raise ConfigError("run", "give a scenario name or --file")
    try:
        if "/" in name:
            return [scenarios.find_scenario(name)]
        return list(scenarios.get_builtin(name).scenarios)
    except KeyError as exc:
        raise ConfigError("run", str(exc.args[0])) from exc


def _apply_overrides(cells: Iterable[Scenario], args: argparse.Namespace) -> list[Scenario]:
    out = []
    for sc in cells:
        if args.seed is not None:
            sc = replace(sc, seed=args.seed)
        if args.duration is not None:
            sc = replace(sc, duration_ns=args.duration)
        out.append(sc)
    return out


def _series_filename(scenario_name: str) -> str:
    return scenario_name.replace("/", "__") + ".csv"


def _write_outputs(results: list[RunResult], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    harness.emit_csv(results, os.path.join(out_dir, "results.csv"))
    series_dir = os.path.join(out_dir, "series")
    os.makedirs(series_dir, exist_ok=True)
    for res in results:
        harness.emit_series_csv(res, os.path.join(series_dir, _series_filename(res.scenario.name)))


def _print_table(results: list[RunResult], file=None) -> None:
    file = file or sys.stdout
    header = f"{'scenario':<34} {'tenant':<16} {'gbps':>10} {'iops':>14} {'p50_ns':>10} {'p99_ns':>10} {'policed':>8}"
    print(header, file=file)
    print("-" * len(header), file=file)
    for res in results:
        for m in res.metrics:
            print(
                f"{res.scenario.name:<34} {m.tenant_id:<16} {m.gbps:>10.3f} {m.iops:>14.1f}"
                f" {m.p50_ns:>10} {m.p99_ns:>10} {m.policed_ops:>8}",
                file=file,
            )


def _cmd_list(_args: argparse.Namespace) -> int:
    for name in scenarios.BUILTIN_ORDER:
        sset = scenarios.get_builtin(name)
        print(f"{name}  ({len(sset.scenarios)} cells)")
        print(f"  {sset.description}")
        for sc in sset.scenarios:
            print(f"  - {sc.name}")
    return 0


def _run_cells(cells: list[Scenario], out_dir: Optional[str], quiet: bool) -> int:
    results = []
    for sc in cells:
        results.append(harness.run(sc))
    if out_dir:
        _write_outputs(results, out_dir)
    if not quiet:
        _print_table(results)
        bad = [r.scenario.name for r in results if not r.conservation["ops_balanced"]]
        if bad:
            print(f"warning: unbalanced op ledger in: {', '.join(bad)}", file=sys.stderr)
    if out_dir and not quiet:
        print(f"\nwrote {os.path.join(out_dir, 'results.csv')} and {len(results)} series files")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cells = _apply_overrides(_resolve(args), args)
    return _run_cells(cells, args.out, args.quiet)


def _cmd_run_all(args: argparse.Namespace) -> int:
    cells = scenarios.all_scenarios()
    if args.seed is not None:
        cells = [replace(sc, seed=args.seed) for sc in cells]
    return _run_cells(cells, args.out, args.quiet)


def _cmd_plan(args: argparse.Namespace) -> int:
    cells = _resolve(args)
    for sc in cells:
        if not sc.slas:
            print(f"{sc.name}: no guarantees declared, nothing to plan")
            continue
        profiles = {p.name: p for p in sc.profiles}
        plan = plan_shaping(
            sc.flows,
            sc.slas,
            profiles,
            sc.pcie,
            util_target=sc.util_target,
            small_msg_floor=sc.small_msg_floor,
            qp_total=sc.qp_pool,
        )
        print(f"{sc.name}:")
        for t in plan.tenants:
            resize = repr(t.config.resize) if t.config.resize else "none"
            print(
                f"  {t.tenant_id}: ingress {t.ingress_gbps:.3f} Gbps at {t.wire_size}B wire,"
                f" {t.qp_count} QPs, resize {resize}"
            )
        for ch, gbps in sorted(plan.headroom_gbps.items()):
            print(f"  headroom {ch}: {gbps:.3f} Gbps")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="accelshape",
        description="Deterministic multi-tenant accelerator-interconnect simulator and traffic shaper.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="show built-in scenario sets and cells").set_defaults(func=_cmd_list)

    def add_common(sp, with_name=True):
        if with_name:
            sp.add_argument("name", nargs="?", help="scenario set or set/cell name")
            sp.add_argument("--file", help="load a scenario from a JSON file instead")
        sp.add_argument("--out", help="directory for results.csv and series/*.csv")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--quiet", action="store_true", help="suppress the stdout table")

    rp = sub.add_parser("run", help="run one scenario set, one cell, or a JSON scenario")
    add_common(rp)
    rp.add_argument("--duration", type=int, help="override duration in nanoseconds")
    rp.set_defaults(func=_cmd_run)

    ra = sub.add_parser("run-all", help="run every built-in cell")
    add_common(ra, with_name=False)
    ra.set_defaults(func=_cmd_run_all)

    pp = sub.add_parser("plan", help="print the admission plan without simulating")
    pp.add_argument("name", nargs="?", help="scenario set or set/cell name")
    pp.add_argument("--file", help="load a scenario from a JSON file instead")
    pp.set_defaults(func=_cmd_plan)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "seed"):
        args.seed = None
    if not hasattr(args, "duration"):
        args.duration = None
    if not hasattr(args, "file"):
        args.file = None
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleSla as exc:
        print(f"infeasible guarantee: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
