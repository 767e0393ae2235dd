"""The assembled distribution network and its GeoJSON form.

Nodes are substations, feeder roots, transfer road nodes, transformers, and
residences; edges are HV feeders, primary (MV) lines, and secondary (LV)
lines. Edge flow is signed positive from u toward v.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InternalError, ValidationError
from .geo import GeoPoint

NODE_KINDS = ("substation", "root", "transfer", "transformer", "residence")
EDGE_KINDS = ("feeder", "primary", "secondary")

# which node kinds an edge kind may join, per endpoint (u side irrelevant:
# checked as an unordered pair)
_EDGE_ENDPOINTS = {
    "feeder": ({"substation"}, {"root"}),
    "primary": ({"root", "transfer", "transformer"}, {"root", "transfer", "transformer"}),
    "secondary": ({"transformer", "residence"}, {"residence"}),
}


@dataclass
class NetNode:
    node_id: str
    kind: str
    point: GeoPoint
    demand_kw: float = 0.0
    voltage_pu: float | None = None


@dataclass
class NetEdge:
    edge_id: str
    kind: str
    u: str
    v: str
    length_m: float
    resistance_ohm: float
    flow_kw: float = 0.0


@dataclass
class DistributionNetwork:
    nodes: dict[str, NetNode]
    edges: list[NetEdge]
    adjacency: dict[str, list[tuple[str, NetEdge]]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.rebuild_adjacency()

    def rebuild_adjacency(self) -> None:
        self.adjacency = {nid: [] for nid in self.nodes}
        for e in self.edges:
            self.adjacency[e.u].append((e.v, e))
            self.adjacency[e.v].append((e.u, e))
        for nid in self.adjacency:
            self.adjacency[nid].sort(key=lambda t: (t[0], t[1].edge_id))

    def total_length_m(self, kind: str | None = None) -> float:
        return sum(e.length_m for e in self.edges if kind is None or e.kind == kind)

    def residences(self) -> list[NetNode]:
        return [n for nid, n in sorted(self.nodes.items()) if n.kind == "residence"]


def validate_network(net: DistributionNetwork) -> None:
    """Structural invariants; violations are construction bugs."""
    seen_edges: set[str] = set()
    for e in net.edges:
        if e.edge_id in seen_edges:
            raise InternalError(f"duplicate edge id {e.edge_id!r}")
        seen_edges.add(e.edge_id)
        if e.u == e.v:
            raise InternalError(f"edge {e.edge_id!r} is a self-loop")
        for end in (e.u, e.v):
            if end not in net.nodes:
                raise InternalError(f"edge {e.edge_id!r} references unknown node {end!r}")
        if e.kind not in EDGE_KINDS:
            raise InternalError(f"edge {e.edge_id!r} has unknown kind {e.kind!r}")
        if e.length_m < 0 or e.resistance_ohm < 0:
            raise InternalError(f"edge {e.edge_id!r} has negative length or resistance")
        want_a, want_b = _EDGE_ENDPOINTS[e.kind]
        ka = net.nodes[e.u].kind
        kb = net.nodes[e.v].kind
        if not ((ka in want_a and kb in want_b) or (ka in want_b and kb in want_a)):
            raise InternalError(
                f"{e.kind} edge {e.edge_id!r} joins {ka} to {kb}, which is not allowed"
            )

    for nid, node in net.nodes.items():
        if node.kind not in NODE_KINDS:
            raise InternalError(f"node {nid!r} has unknown kind {node.kind!r}")
        if node.kind == "residence":
            if node.demand_kw <= 0:
                raise InternalError(f"residence {nid!r} must have positive demand")
        elif node.demand_kw != 0.0:
            raise InternalError(f"{node.kind} node {nid!r} carries demand")

    # forest shape: every component holds exactly one substation, no cycles
    seen: set[str] = set()
    for start in sorted(net.nodes):
        if start in seen:
            continue
        members = [start]
        seen.add(start)
        stack = [start]
        edge_count = 0
        while stack:
            n = stack.pop()
            for nbr, _ in net.adjacency[n]:
                edge_count += 1  # each edge seen from both sides
                if nbr not in seen:
                    seen.add(nbr)
                    members.append(nbr)
                    stack.append(nbr)
        edge_count //= 2
        subs = [m for m in members if net.nodes[m].kind == "substation"]
        if len(subs) != 1:
            raise InternalError(
                f"component of {min(members)!r} contains {len(subs)} substations, wanted 1"
            )
        if edge_count != len(members) - 1:
            raise InternalError(f"component of {min(members)!r} contains a cycle")

    for nid, node in sorted(net.nodes.items()):
        if node.kind in ("root", "transfer") and len(net.adjacency[nid]) < 2:
            raise InternalError(f"road node {nid!r} is a leaf")


# --- GeoJSON -----------------------------------------------------------------


def to_geojson(net: DistributionNetwork) -> dict:
    """FeatureCollection: Point features for nodes, LineStrings for edges.

    Edge features carry source/target node ids so the topology survives a
    round trip without geometric matching.
    """
    features = []
    for nid in sorted(net.nodes):
        n = net.nodes[nid]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [n.point.lon, n.point.lat]},
                "properties": {
                    "id": n.node_id,
                    "kind": n.kind,
                    "demand_kw": n.demand_kw,
                    "voltage_pu": n.voltage_pu,
                },
            }
        )
    for e in sorted(net.edges, key=lambda e: e.edge_id):
        pu = net.nodes[e.u].point
        pv = net.nodes[e.v].point
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[pu.lon, pu.lat], [pv.lon, pv.lat]],
                },
                "properties": {
                    "id": e.edge_id,
                    "kind": e.kind,
                    "length_m": e.length_m,
                    "resistance_ohm": e.resistance_ohm,
                    "flow_kw": e.flow_kw,
                    "source": e.u,
                    "target": e.v,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def from_geojson(obj: dict) -> DistributionNetwork:
    if obj.get("type") != "FeatureCollection":
        raise ValidationError("expected a GeoJSON FeatureCollection")
    nodes: dict[str, NetNode] = {}
    edges: list[NetEdge] = []
    for i, feat in enumerate(obj.get("features", [])):
        where = f"feature {i}"
        if feat.get("type") != "Feature":
            raise ValidationError(f"{where}: not a Feature")
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        gtype = geom.get("type")
        if gtype == "Point":
            try:
                lon, lat = geom["coordinates"]
                node = NetNode(
                    str(props["id"]),
                    str(props["kind"]),
                    GeoPoint(float(lon), float(lat)),
                    float(props["demand_kw"]),
                    None if props.get("voltage_pu") is None else float(props["voltage_pu"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: bad node feature ({exc})") from None
            if node.node_id in nodes:
                raise ValidationError(f"{where}: duplicate node id {node.node_id!r}")
            if node.kind not in NODE_KINDS:
                raise ValidationError(f"{where}: unknown node kind {node.kind!r}")
            nodes[node.node_id] = node
        elif gtype == "LineString":
            try:
                edge = NetEdge(
                    str(props["id"]),
                    str(props["kind"]),
                    str(props["source"]),
                    str(props["target"]),
                    float(props["length_m"]),
                    float(props["resistance_ohm"]),
                    float(props["flow_kw"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: bad edge feature ({exc})") from None
            if edge.kind not in EDGE_KINDS:
                raise ValidationError(f"{where}: unknown edge kind {edge.kind!r}")
            edges.append(edge)
        else:
            raise ValidationError(f"{where}: unsupported geometry {gtype!r}")
    for e in edges:
        for end in (e.u, e.v):
            if end not in nodes:
                raise ValidationError(f"edge {e.edge_id!r} references unknown node {end!r}")
    return DistributionNetwork(nodes, edges)


def write_geojson(net: DistributionNetwork, path: str | Path) -> None:
    text = json.dumps(to_geojson(net), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_geojson(path: str | Path) -> DistributionNetwork:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: not valid JSON ({exc})") from None
    return from_geojson(obj)
