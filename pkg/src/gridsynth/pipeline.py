"""End-to-end orchestration: scenario in, validated network and reports out.

Stages run in a fixed order (map, secondary, partition, primary, powerflow)
and each one can be re-run from the files the previous stage wrote, so a
long build can be resumed. Any stage failure is re-raised with the stage
name prefixed; the exception type is preserved for exit-code mapping.
"""
from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from .config import Config
from .errors import GridSynthError, InternalError, ValidationError
from .geo import GeoPoint, geodesic_distance
from .ingest import Scenario, validate_scenario
from .mapping import (
    CandidateSite,
    LinkAssignment,
    build_assignment,
    candidates_for_assignment,
)
from .network import DistributionNetwork, validate_network, write_geojson
from .partition import (
    AugmentedRoadGraph,
    PartitionMap,
    augment,
    girvan_newman,
    substation_seeds,
    voronoi_assign,
)
from .powerflow import (
    ComparisonReport,
    FlowSolution,
    OperationalReport,
    check_operational,
    flow_spectrum,
    run_ldf,
)
from .primary import PrimaryEdge, PrimaryProblem, PrimarySolution, solve_primary, stitch
from .secondary import SecondaryEdge, SecondaryNetwork, SecondaryProblem, solve_secondary


@contextmanager
def _stage(name: str):
    try:
        yield
    except GridSynthError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def stage_map(scenario: Scenario, config: Config) -> LinkAssignment:
    return build_assignment(
        scenario, padding_m=config.padding_m, max_distance_m=config.max_mapping_m
    )


def stage_secondary(
    scenario: Scenario, assignment: LinkAssignment, config: Config
) -> list[SecondaryNetwork]:
    candidates = candidates_for_assignment(
        scenario.roads,
        assignment,
        spacing_m=config.spacing_m,
        residences_per_transformer=config.residences_per_transformer,
    )
    residences = {res.res_id: res for res in scenario.residences}
    networks = []
    for lid in sorted(assignment.inverse):
        rs = [
            (rid, residences[rid].location, residences[rid].avg_demand_kw)
            for rid in assignment.inverse[lid]
        ]
        problem = SecondaryProblem(
            lid,
            scenario.roads.segment(lid),
            rs,
            candidates[lid],
            lambda_m=config.lambda_m,
            f_max_kw=config.secondary_cap_kw,
        )
        networks.append(solve_secondary(problem))
    return networks


def stage_partition(
    scenario: Scenario, secondaries: list[SecondaryNetwork], config: Config
) -> tuple[AugmentedRoadGraph, PartitionMap, dict[str, list[str]]]:
    graph = augment(scenario.roads, secondaries)
    seeds = substation_seeds(
        scenario.substations, scenario.roads, max_distance_m=config.max_mapping_m
    )
    part = voronoi_assign(graph, seeds)
    communities: dict[str, list[str]] = {}
    for sub_id in sorted(part.cells):
        members = part.cells[sub_id]
        mset = set(members)
        induced = [(e.u, e.v) for e in graph.edges if e.u in mset and e.v in mset]
        demand = {n: graph.nodes[n].demand_kw for n in members}
        pieces = girvan_newman(
            members, induced, demand, max_nodes=config.max_nodes, max_load_kw=config.max_load_kw
        )
        for k, piece in enumerate(pieces):
            cid = f"{sub_id}.{k}"
            communities[cid] = piece
            for n in piece:
                part.communities[n] = cid
    return graph, part, communities


def community_problem(
    cid: str,
    members: list[str],
    graph: AugmentedRoadGraph,
    substation_location: GeoPoint,
    config: Config,
) -> PrimaryProblem:
    mset = set(members)
    road_points = {n: graph.nodes[n].point for n in members if graph.nodes[n].kind == "road"}
    trans_points = {
        n: graph.nodes[n].point for n in members if graph.nodes[n].kind == "transformer"
    }
    if trans_points and not road_points:
        raise InternalError(f"community {cid!r} has transformers but no road node to root at")
    edges = [
        PrimaryEdge(e.edge_id, e.u, e.v, e.length_m)
        for e in graph.edges
        if e.u in mset and e.v in mset
    ]
    return PrimaryProblem(
        community_id=cid,
        road_points=road_points,
        transformer_points=trans_points,
        demand_kw={t: graph.nodes[t].demand_kw for t in trans_points},
        edges=edges,
        substation_distance_m={
            r: geodesic_distance(substation_location, p) for r, p in road_points.items()
        },
        f_max_kw=config.primary_cap_kw,
        s_max_kw=config.feeder_cap_kw,
        v_min=config.v_min,
        v_max=config.v_max,
        rho_ohm_per_km=config.rho_primary_ohm_per_km,
        v_base_v=config.primary_v_base_v,
        s_base_kva=config.s_base_kva,
    )


def stage_primary(
    scenario: Scenario,
    graph: AugmentedRoadGraph,
    cell_of: dict[str, str],
    communities: dict[str, list[str]],
    secondaries: list[SecondaryNetwork],
    config: Config,
) -> tuple[list[PrimarySolution], DistributionNetwork]:
    sub_loc = {s.sub_id: s.location for s in scenario.substations}
    solutions = []
    for cid in sorted(communities):
        members = communities[cid]
        sub_id = cell_of[members[0]]
        problem = community_problem(cid, members, graph, sub_loc[sub_id], config)
        solutions.append(solve_primary(problem, node_limit=config.node_limit))
    network = stitch(
        scenario,
        graph,
        cell_of,
        solutions,
        secondaries,
        rho_primary_ohm_per_km=config.rho_primary_ohm_per_km,
        rho_secondary_ohm_per_km=config.rho_secondary_ohm_per_km,
    )
    validate_network(network)
    return solutions, network


def stage_powerflow(
    network: DistributionNetwork, config: Config
) -> tuple[FlowSolution, OperationalReport]:
    """Run LDF and write the solved voltages and flows back onto the network."""
    flow = run_ldf(
        network,
        v_base_v={
            "feeder": config.primary_v_base_v,
            "primary": config.primary_v_base_v,
            "secondary": config.secondary_v_base_v,
        },
        capacity_kw={
            "feeder": config.feeder_cap_kw,
            "primary": config.primary_cap_kw,
            "secondary": config.secondary_cap_kw,
        },
    )
    for nid, v in flow.voltage_pu.items():
        network.nodes[nid].voltage_pu = v
    for e in network.edges:
        e.flow_kw = flow.flow_kw[e.edge_id]
    report = check_operational(network, flow, v_min=config.v_min)
    return flow, report


@dataclass
class PipelineResult:
    assignment: LinkAssignment
    secondaries: list[SecondaryNetwork]
    graph: AugmentedRoadGraph
    partition: PartitionMap
    communities: dict[str, list[str]]
    solutions: list[PrimarySolution]
    network: DistributionNetwork
    flow: FlowSolution
    operational: OperationalReport


def run_pipeline(
    scenario: Scenario, config: Config, out_dir: str | Path | None = None
) -> PipelineResult:
    with _stage("ingest"):
        validate_scenario(scenario)
    with _stage("map"):
        assignment = stage_map(scenario, config)
    with _stage("secondary"):
        secondaries = stage_secondary(scenario, assignment, config)
    with _stage("partition"):
        graph, part, communities = stage_partition(scenario, secondaries, config)
    with _stage("primary"):
        solutions, network = stage_primary(
            scenario, graph, part.assignment, communities, secondaries, config
        )
    with _stage("powerflow"):
        flow, report = stage_powerflow(network, config)

    result = PipelineResult(
        assignment, secondaries, graph, part, communities, solutions, network, flow, report
    )
    if out_dir is not None:
        with _stage("artifacts"):
            write_artifacts(result, scenario, Path(out_dir))
    return result


# --- file artifacts ------------------------------------------------------------


def write_artifacts(result: PipelineResult, scenario: Scenario, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_assignment_csv(result.assignment, out_dir / "assignment.csv")
    write_secondary_geojson(result.secondaries, scenario, out_dir / "secondary.geojson")
    write_partition_csv(result.partition, out_dir / "partition.csv")
    write_geojson(result.network, out_dir / "network.geojson")
    write_powerflow_reports(
        result.flow,
        result.operational,
        result.network,
        out_dir / "powerflow_nodes.csv",
        out_dir / "powerflow_edges.csv",
        out_dir / "powerflow_summary.json",
    )


def write_assignment_csv(assignment: LinkAssignment, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["res_id", "link_id", "dist_m"])
        for rid in sorted(assignment.forward):
            writer.writerow([rid, assignment.forward[rid], assignment.distance_m[rid]])


def read_assignment_csv(path: str | Path) -> LinkAssignment:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    forward: dict[str, str] = {}
    inverse: dict[str, list[str]] = {}
    distance: dict[str, float] = {}
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["res_id", "link_id", "dist_m"]:
            raise ValidationError(f"{p}: expected header res_id,link_id,dist_m")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValidationError(f"{p}:{row_no}: expected 3 columns")
            rid, lid, dist = row
            if rid in forward:
                raise ValidationError(f"{p}:{row_no}: duplicate residence {rid!r}")
            try:
                distance[rid] = float(dist)
            except ValueError:
                raise ValidationError(f"{p}:{row_no}: bad distance {dist!r}") from None
            forward[rid] = lid
            inverse.setdefault(lid, []).append(rid)
    for lst in inverse.values():
        lst.sort()
    return LinkAssignment(forward, inverse, distance)


def secondary_to_geojson(networks: list[SecondaryNetwork], scenario: Scenario) -> dict:
    """Per-link LV networks with enough properties to rebuild them."""
    res_loc = {res.res_id: res.location for res in scenario.residences}
    features = []
    objectives = {}
    for net in sorted(networks, key=lambda n: n.link_id):
        objectives[net.link_id] = net.objective
        points: dict[str, GeoPoint] = {}
        for tid in net.used_transformers:
            site = net.transformer_sites[tid]
            points[tid] = site.point
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [site.point.lon, site.point.lat],
                    },
                    "properties": {
                        "id": tid,
                        "kind": "transformer",
                        "link_id": net.link_id,
                        "fraction": site.fraction,
                        "load_kw": net.transformer_load_kw[tid],
                    },
                }
            )
        for rid in sorted(net.tree_of):
            points[rid] = res_loc[rid]
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [res_loc[rid].lon, res_loc[rid].lat],
                    },
                    "properties": {
                        "id": rid,
                        "kind": "residence",
                        "link_id": net.link_id,
                        "transformer": net.tree_of[rid],
                    },
                }
            )
        for i, e in enumerate(net.edges):
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "LineString",
                        "coordinates": [
                            [points[e.u].lon, points[e.u].lat],
                            [points[e.v].lon, points[e.v].lat],
                        ],
                    },
                    "properties": {
                        "id": f"sec_{net.link_id}_{i}",
                        "seq": i,
                        "kind": "secondary",
                        "link_id": net.link_id,
                        "source": e.u,
                        "target": e.v,
                        "length_m": e.length_m,
                        "flow_kw": e.flow_kw,
                    },
                }
            )
    return {"type": "FeatureCollection", "objectives": objectives, "features": features}


def write_secondary_geojson(
    networks: list[SecondaryNetwork], scenario: Scenario, path: str | Path
) -> None:
    text = json.dumps(secondary_to_geojson(networks, scenario), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_secondary_geojson(path: str | Path) -> list[SecondaryNetwork]:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: not valid JSON ({exc})") from None
    if obj.get("type") != "FeatureCollection":
        raise ValidationError(f"{p}: expected a GeoJSON FeatureCollection")
    objectives = obj.get("objectives", {})

    sites: dict[str, dict[str, CandidateSite]] = {}
    loads: dict[str, dict[str, float]] = {}
    trees: dict[str, dict[str, str]] = {}
    raw_edges: dict[str, list[tuple[int, SecondaryEdge]]] = {}
    for i, feat in enumerate(obj.get("features", [])):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        where = f"{p}: feature {i}"
        try:
            lid = str(props["link_id"])
            kind = str(props["kind"])
            if kind == "transformer":
                lon, lat = geom["coordinates"]
                tid = str(props["id"])
                sites.setdefault(lid, {})[tid] = CandidateSite(
                    tid, GeoPoint(float(lon), float(lat)), float(props["fraction"])
                )
                loads.setdefault(lid, {})[tid] = float(props["load_kw"])
            elif kind == "residence":
                trees.setdefault(lid, {})[str(props["id"])] = str(props["transformer"])
            elif kind == "secondary":
                edge = SecondaryEdge(
                    str(props["source"]),
                    str(props["target"]),
                    float(props["length_m"]),
                    float(props["flow_kw"]),
                )
                raw_edges.setdefault(lid, []).append((int(props["seq"]), edge))
            else:
                raise ValidationError(f"{where}: unknown kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{where}: bad feature ({exc})") from None

    networks = []
    for lid in sorted(set(sites) | set(trees) | set(raw_edges)):
        if lid not in sites:
            raise ValidationError(f"{p}: link {lid!r} has no transformer features")
        ordered = [e for _, e in sorted(raw_edges.get(lid, []), key=lambda t: t[0])]
        networks.append(
            SecondaryNetwork(
                lid,
                sorted(sites[lid]),
                sites[lid],
                loads[lid],
                ordered,
                trees.get(lid, {}),
                float(objectives.get(lid, 0.0)),
            )
        )
    return networks


def write_partition_csv(part: PartitionMap, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "substation_id", "community_id"])
        for nid in sorted(part.assignment):
            writer.writerow([nid, part.assignment[nid], part.communities.get(nid, "")])


def read_partition_csv(path: str | Path) -> tuple[dict[str, str], dict[str, list[str]]]:
    """Node-to-substation map plus the node lists of each community."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    cell_of: dict[str, str] = {}
    communities: dict[str, list[str]] = {}
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node_id", "substation_id", "community_id"]:
            raise ValidationError(f"{p}: expected header node_id,substation_id,community_id")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValidationError(f"{p}:{row_no}: expected 3 columns")
            nid, sub_id, cid = row
            if nid in cell_of:
                raise ValidationError(f"{p}:{row_no}: duplicate node {nid!r}")
            if not cid:
                raise ValidationError(f"{p}:{row_no}: node {nid!r} has no community")
            cell_of[nid] = sub_id
            communities.setdefault(cid, []).append(nid)
    for members in communities.values():
        members.sort()
    return cell_of, communities


def write_powerflow_reports(
    flow: FlowSolution,
    report: OperationalReport,
    network: DistributionNetwork,
    nodes_path: str | Path,
    edges_path: str | Path,
    summary_path: str | Path,
) -> None:
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "kind", "voltage_pu"])
        for nid in sorted(flow.voltage_pu):
            writer.writerow([nid, network.nodes[nid].kind, flow.voltage_pu[nid]])
    kind_of = {e.edge_id: e.kind for e in network.edges}
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["edge_id", "kind", "flow_kw", "loading"])
        for eid in sorted(flow.flow_kw):
            writer.writerow([eid, kind_of[eid], flow.flow_kw[eid], flow.loading[eid]])
    hist = flow_spectrum(list(flow.flow_kw.values()))
    summary = {
        "flow_histogram": {
            "bin_edges_kw": hist.bin_edges_kw,
            "counts": hist.counts,
            "zeros": hist.zeros,
        },
        "min_voltage_pu": report.min_voltage_pu,
        "max_voltage_pu": report.max_voltage_pu,
        "max_loading": report.max_loading,
        "voltage_monotone": report.voltage_monotone,
        "violations": report.violations,
    }
    Path(summary_path).write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_compare_report(report: ComparisonReport, path: str | Path) -> None:
    deviations = report.deviation_pu
    payload = {
        "residences": len(deviations),
        "fraction_within_1pct": report.fraction_within_1pct,
        "max_abs_deviation_pu": max((abs(d) for d in deviations.values()), default=0.0),
        "total_length_m": {"a": report.total_length_m_a, "b": report.total_length_m_b},
        "deviation_pu": dict(sorted(deviations.items())),
        "flow_histogram": {
            "bin_edges_kw": report.histogram_a.bin_edges_kw,
            "counts_a": report.histogram_a.counts,
            "counts_b": report.histogram_b.counts,
            "zeros_a": report.histogram_a.zeros,
            "zeros_b": report.histogram_b.zeros,
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
