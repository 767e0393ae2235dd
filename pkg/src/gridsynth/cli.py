"""Command-line front end.

Every subcommand reads and writes plain files (CSV, GeoJSON, JSON) so the
pipeline can be driven stage by stage or in one shot. Exit codes: 0 on
success, 2 for bad input, 3 for infeasible models, 4 for internal
invariant failures.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .config import _INT_FIELDS, Config, apply_overrides, load_config
from .errors import GridSynthError, InfeasibleError, InternalError, ValidationError
from .ingest import generate_scenario, load_scenario, write_scenario
from .network import load_geojson, validate_network, write_geojson
from .partition import augment
from .pipeline import (
    read_assignment_csv,
    read_partition_csv,
    read_secondary_geojson,
    run_pipeline,
    stage_map,
    stage_partition,
    stage_powerflow,
    stage_primary,
    stage_secondary,
    write_assignment_csv,
    write_compare_report,
    write_partition_csv,
    write_powerflow_reports,
    write_secondary_geojson,
)
from .powerflow import compare


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_argument_group("tunables (override the config file)")
    group.add_argument("--config", metavar="FILE", help="key=value config file")
    for f in fields(Config):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, type=int if f.name in _INT_FIELDS else float, default=None)


def _resolve_config(args: argparse.Namespace) -> Config:
    base = load_config(args.config) if args.config else Config()
    overrides = {
        f.name: getattr(args, f.name) for f in fields(Config) if getattr(args, f.name, None) is not None
    }
    return apply_overrides(base, **overrides)


def _cmd_gen_scenario(args: argparse.Namespace) -> int:
    scenario = generate_scenario(
        args.seed, args.n_res, args.n_sub, args.extent_km, args.style
    )
    write_scenario(scenario, args.out)
    print(
        f"wrote scenario to {args.out}: {len(scenario.residences)} residences, "
        f"{len(scenario.roads.links)} road links, {len(scenario.substations)} substations"
    )
    return 0


def _cmd_map(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    scenario = load_scenario(args.scenario)
    assignment = stage_map(scenario, config)
    write_assignment_csv(assignment, args.out)
    print(f"wrote {args.out}: {len(assignment.forward)} residences on {len(assignment.inverse)} links")
    return 0


def _cmd_secondary(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    scenario = load_scenario(args.scenario)
    if args.assignment:
        assignment = read_assignment_csv(args.assignment)
    else:
        assignment = stage_map(scenario, config)
    networks = stage_secondary(scenario, assignment, config)
    write_secondary_geojson(networks, scenario, args.out)
    n_trans = sum(len(net.used_transformers) for net in networks)
    print(f"wrote {args.out}: {len(networks)} link networks, {n_trans} transformers")
    return 0


def _cmd_partition(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    scenario = load_scenario(args.scenario)
    secondaries = read_secondary_geojson(args.secondary)
    _, part, communities = stage_partition(scenario, secondaries, config)
    write_partition_csv(part, args.out)
    print(f"wrote {args.out}: {len(part.assignment)} nodes in {len(communities)} communities")
    return 0


def _cmd_primary(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    scenario = load_scenario(args.scenario)
    secondaries = read_secondary_geojson(args.secondary)
    cell_of, communities = read_partition_csv(args.partition)
    graph = augment(scenario.roads, secondaries)
    solutions, network = stage_primary(
        scenario, graph, cell_of, communities, secondaries, config
    )
    write_geojson(network, args.out)
    roots = sum(len(sol.roots) for sol in solutions)
    print(f"wrote {args.out}: {len(network.nodes)} nodes, {len(network.edges)} edges, {roots} feeders")
    return 0


def _cmd_powerflow(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    network = load_geojson(args.network)
    validate_network(network)
    flow, report = stage_powerflow(network, config)
    write_powerflow_reports(
        flow, report, network, args.out_nodes, args.out_edges, args.out_summary
    )
    if args.out_network:
        write_geojson(network, args.out_network)
    print(
        f"voltage range [{report.min_voltage_pu:.4f}, {report.max_voltage_pu:.4f}] pu, "
        f"max loading {report.max_loading:.3f}, {len(report.violations)} violation(s)"
    )
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out_dir = Path(args.out)
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = generate_scenario(config.seed, args.n_res, args.n_sub, args.extent_km, args.style)
        write_scenario(scenario, out_dir / "scenario")
    result = run_pipeline(scenario, config, out_dir)
    print(
        f"wrote {out_dir}: network with {len(result.network.nodes)} nodes, "
        f"{len(result.network.edges)} edges; voltage range "
        f"[{result.operational.min_voltage_pu:.4f}, {result.operational.max_voltage_pu:.4f}] pu; "
        f"{len(result.operational.violations)} violation(s)"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    net_a = load_geojson(args.a)
    net_b = load_geojson(args.b)
    report = compare(net_a, net_b)
    write_compare_report(report, args.out)
    print(
        f"wrote {args.out}: {len(report.deviation_pu)} residences, "
        f"{100.0 * report.fraction_within_1pct:.1f}% within 0.01 pu"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridsynth",
        description="Synthesize radial power distribution networks over road geometry.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-scenario", help="write a synthetic scenario as CSV files")
    gen.add_argument("--out", required=True, metavar="DIR")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-res", type=int, default=500)
    gen.add_argument("--n-sub", type=int, default=3)
    gen.add_argument("--extent-km", type=float, default=2.0)
    gen.add_argument("--style", choices=["grid", "radial"], default="grid")
    gen.set_defaults(func=_cmd_gen_scenario)

    mp = subs.add_parser("map", help="assign each residence to its nearest road link")
    mp.add_argument("--scenario", required=True, metavar="DIR")
    mp.add_argument("--out", required=True, metavar="FILE")
    _add_config_flags(mp)
    mp.set_defaults(func=_cmd_map)

    sec = subs.add_parser("secondary", help="solve the LV network behind every road link")
    sec.add_argument("--scenario", required=True, metavar="DIR")
    sec.add_argument("--assignment", metavar="FILE", help="reuse a map stage output")
    sec.add_argument("--out", required=True, metavar="FILE")
    _add_config_flags(sec)
    sec.set_defaults(func=_cmd_secondary)

    part = subs.add_parser("partition", help="split the road graph into communities")
    part.add_argument("--scenario", required=True, metavar="DIR")
    part.add_argument("--secondary", required=True, metavar="FILE")
    part.add_argument("--out", required=True, metavar="FILE")
    _add_config_flags(part)
    part.set_defaults(func=_cmd_partition)

    prim = subs.add_parser("primary", help="solve the MV network of every community")
    prim.add_argument("--scenario", required=True, metavar="DIR")
    prim.add_argument("--secondary", required=True, metavar="FILE")
    prim.add_argument("--partition", required=True, metavar="FILE")
    prim.add_argument("--out", required=True, metavar="FILE")
    _add_config_flags(prim)
    prim.set_defaults(func=_cmd_primary)

    pf = subs.add_parser("powerflow", help="run linearized power flow on a network file")
    pf.add_argument("--network", required=True, metavar="FILE")
    pf.add_argument("--out-nodes", required=True, metavar="FILE")
    pf.add_argument("--out-edges", required=True, metavar="FILE")
    pf.add_argument("--out-summary", required=True, metavar="FILE")
    pf.add_argument("--out-network", metavar="FILE", help="rewrite the network with voltages")
    _add_config_flags(pf)
    pf.set_defaults(func=_cmd_powerflow)

    pipe = subs.add_parser("pipeline", help="run every stage and write all artifacts")
    pipe.add_argument("--scenario", metavar="DIR", help="input scenario; generated if omitted")
    pipe.add_argument("--out", required=True, metavar="DIR")
    pipe.add_argument("--n-res", type=int, default=500)
    pipe.add_argument("--n-sub", type=int, default=3)
    pipe.add_argument("--extent-km", type=float, default=2.0)
    pipe.add_argument("--style", choices=["grid", "radial"], default="grid")
    _add_config_flags(pipe)
    pipe.set_defaults(func=_cmd_pipeline)

    cmp_ = subs.add_parser("compare", help="voltage and flow comparison of two networks")
    cmp_.add_argument("--a", required=True, metavar="FILE")
    cmp_.add_argument("--b", required=True, metavar="FILE")
    cmp_.add_argument("--out", required=True, metavar="FILE")
    cmp_.set_defaults(func=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InternalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except GridSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
