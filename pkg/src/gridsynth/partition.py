"""Service-area partitioning of the road graph.

Energized transformers are inserted as nodes on their host links, every
node is assigned to its network-nearest substation (a Voronoi cell over
shortest-path distance), and oversized cells are subdivided by repeated
removal of the highest-betweenness edge.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import InternalError, ValidationError
from .geo import GeoPoint, SpatialIndex, geodesic_distance, index_links
from .ingest import RoadNetwork, Substation
from .mapping import DEFAULT_MAX_MAPPING_M, nearest_link
from .secondary import SecondaryNetwork

DEFAULT_MAX_NODES = 700


@dataclass(frozen=True)
class AugNode:
    node_id: str
    point: GeoPoint
    demand_kw: float
    kind: str  # "road" or "transformer"


@dataclass(frozen=True)
class AugEdge:
    edge_id: str
    u: str
    v: str
    length_m: float
    link_id: str  # host road link


@dataclass
class AugmentedRoadGraph:
    nodes: dict[str, AugNode]
    edges: list[AugEdge]
    adjacency: dict[str, list[tuple[str, float, str]]] = field(init=False)

    def __post_init__(self) -> None:
        self.adjacency = {nid: [] for nid in self.nodes}
        for e in self.edges:
            if e.u not in self.nodes or e.v not in self.nodes:
                raise InternalError(f"edge {e.edge_id!r} references an unknown node")
            self.adjacency[e.u].append((e.v, e.length_m, e.edge_id))
            self.adjacency[e.v].append((e.u, e.length_m, e.edge_id))
        for nid in self.adjacency:
            self.adjacency[nid].sort()

    def total_demand_kw(self) -> float:
        return sum(n.demand_kw for n in self.nodes.values())


def augment(roads: RoadNetwork, networks: list[SecondaryNetwork]) -> AugmentedRoadGraph:
    """Insert each energized transformer as a node splitting its host link.

    Transformer nodes carry their aggregated residence demand; road nodes
    carry zero. Sub-link lengths are fractions of the host link length, so
    they sum back to it exactly.
    """
    nodes: dict[str, AugNode] = {
        nid: AugNode(nid, pt, 0.0, "road") for nid, pt in sorted(roads.nodes.items())
    }
    on_link: dict[str, list[tuple[float, str, GeoPoint, float]]] = {}
    for net in networks:
        for tid in net.used_transformers:
            site = net.transformer_sites[tid]
            load = net.transformer_load_kw[tid]
            if tid in nodes:
                raise InternalError(f"duplicate transformer node id {tid!r}")
            nodes[tid] = AugNode(tid, site.point, load, "transformer")
            on_link.setdefault(net.link_id, []).append((site.fraction, tid, site.point, load))

    edges: list[AugEdge] = []
    for link in sorted(roads.links, key=lambda l: l.link_id):
        length = roads.length_m(link.link_id)
        stops = sorted(on_link.get(link.link_id, []))
        if not stops:
            edges.append(AugEdge(link.link_id, link.u, link.v, length, link.link_id))
            continue
        chain = [(0.0, link.u)] + [(f, tid) for f, tid, _, _ in stops] + [(1.0, link.v)]
        for i in range(len(chain) - 1):
            fa, na = chain[i]
            fb, nb = chain[i + 1]
            if fb <= fa:
                raise InternalError(
                    f"link {link.link_id!r}: transformer fractions not strictly increasing"
                )
            edges.append(AugEdge(f"{link.link_id}.{i}", na, nb, (fb - fa) * length, link.link_id))
    return AugmentedRoadGraph(nodes, edges)


# --- Voronoi assignment -------------------------------------------------------


@dataclass
class PartitionMap:
    assignment: dict[str, str]  # node id -> substation id
    distance_m: dict[str, float]
    cells: dict[str, list[str]]  # substation id -> sorted node ids
    communities: dict[str, str] = field(default_factory=dict)  # node id -> label


def substation_seeds(
    substations: list[Substation],
    roads: RoadNetwork,
    idx: SpatialIndex | None = None,
    max_distance_m: float = DEFAULT_MAX_MAPPING_M,
) -> dict[str, tuple[str, float]]:
    """Each substation's entry node: the nearer endpoint of its nearest link.

    The value is (road node id, geodesic offset from the substation to it).
    """
    if idx is None:
        idx = index_links(roads.link_segments())
    seeds: dict[str, tuple[str, float]] = {}
    for sub in substations:
        link_id, _ = nearest_link(sub.location, idx, roads, max_distance_m, label=sub.sub_id)
        link = roads.link(link_id)
        du = geodesic_distance(sub.location, roads.nodes[link.u])
        dv = geodesic_distance(sub.location, roads.nodes[link.v])
        offset, node = min((du, link.u), (dv, link.v))
        seeds[sub.sub_id] = (node, offset)
    return seeds


def voronoi_assign(graph: AugmentedRoadGraph, seeds: dict[str, tuple[str, float]]) -> PartitionMap:
    """Assign every node to its nearest seed by network distance.

    Multi-source Dijkstra; ties go to the lower substation id. Nodes that no
    substation can reach are a data problem and raise a ValidationError.
    """
    if not seeds:
        raise ValidationError("no substations to assign nodes to")
    for sid, (node, offset) in seeds.items():
        if node not in graph.nodes:
            raise ValidationError(f"substation {sid!r} seeds unknown node {node!r}")
        if offset < 0:
            raise ValidationError(f"substation {sid!r} has negative seed offset")

    dist: dict[str, float] = {}
    owner: dict[str, str] = {}
    heap: list[tuple[float, str, str]] = []
    for sid in sorted(seeds):
        node, offset = seeds[sid]
        heapq.heappush(heap, (offset, sid, node))
    while heap:
        d, sid, node = heapq.heappop(heap)
        if node in owner:
            continue
        owner[node] = sid
        dist[node] = d
        for nbr, length, _ in graph.adjacency[node]:
            if nbr not in owner:
                heapq.heappush(heap, (d + length, sid, nbr))

    missing = sorted(set(graph.nodes) - set(owner))
    if missing:
        raise ValidationError(
            f"{len(missing)} nodes unreachable from any substation: {missing[:10]}"
        )
    cells: dict[str, list[str]] = {sid: [] for sid in seeds}
    for node in sorted(owner):
        cells[owner[node]].append(node)
    pm = PartitionMap(owner, dist, cells)
    for sid, members in cells.items():
        if members and not _is_connected(graph, members):
            raise ValidationError(f"substation {sid!r} cell is not connected")
    return pm


def _is_connected(graph: AugmentedRoadGraph, members: list[str]) -> bool:
    inside = set(members)
    seen = {members[0]}
    stack = [members[0]]
    while stack:
        node = stack.pop()
        for nbr, _, _ in graph.adjacency[node]:
            if nbr in inside and nbr not in seen:
                seen.add(nbr)
                stack.append(nbr)
    return len(seen) == len(inside)


# --- Girvan-Newman ------------------------------------------------------------


def edge_betweenness(
    nodes: list[str], edges: list[tuple[str, str]]
) -> dict[tuple[str, str], Fraction]:
    """Exact shortest-path (hop count) betweenness per undirected edge.

    Brandes accumulation with rational arithmetic; each unordered node pair
    contributes once.
    """
    adjacency: dict[str, list[str]] = {n: [] for n in nodes}
    for u, v in edges:
        adjacency[u].append(v)
        adjacency[v].append(u)
    for n in adjacency:
        adjacency[n].sort()
    bet: dict[tuple[str, str], Fraction] = {
        (u, v) if u < v else (v, u): Fraction(0) for u, v in edges
    }
    for s in sorted(nodes):
        sigma: dict[str, int] = {n: 0 for n in nodes}
        sigma[s] = 1
        depth: dict[str, int] = {s: 0}
        preds: dict[str, list[str]] = {n: [] for n in nodes}
        order: list[str] = []
        queue: deque[str] = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in adjacency[v]:
                if w not in depth:
                    depth[w] = depth[v] + 1
                    queue.append(w)
                if depth[w] == depth[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta: dict[str, Fraction] = {n: Fraction(0) for n in nodes}
        for w in reversed(order):
            for v in preds[w]:
                share = Fraction(sigma[v], sigma[w]) * (1 + delta[w])
                key = (v, w) if v < w else (w, v)
                bet[key] += share
                delta[v] += share
    return {e: b / 2 for e, b in bet.items()}


def girvan_newman(
    nodes: list[str],
    edges: list[tuple[str, str]],
    demand_kw: dict[str, float] | None = None,
    max_nodes: int = DEFAULT_MAX_NODES,
    max_load_kw: float | None = None,
) -> list[list[str]]:
    """Split a connected subgraph until every community meets the stop rule.

    Removes the highest-betweenness edge of any oversized component, ties
    broken by the lexicographically smallest edge, so the outcome does not
    depend on input ordering. Returns sorted communities of sorted node ids.
    """
    if max_nodes < 1:
        raise ValidationError("max_nodes must be at least 1")
    demand_kw = demand_kw or {}
    if max_load_kw is not None:
        for n in nodes:
            if demand_kw.get(n, 0.0) > max_load_kw:
                raise ValidationError(
                    f"node {n!r} alone exceeds max_load_kw ({demand_kw[n]} > {max_load_kw})"
                )

    def ok(component: list[str]) -> bool:
        if len(component) > max_nodes:
            return False
        if max_load_kw is not None:
            if sum(demand_kw.get(n, 0.0) for n in component) > max_load_kw:
                return False
        return True

    def components(members: list[str], live: set[tuple[str, str]]) -> list[list[str]]:
        adjacency: dict[str, list[str]] = {n: [] for n in members}
        for u, v in live:
            adjacency[u].append(v)
            adjacency[v].append(u)
        out = []
        seen: set[str] = set()
        for start in sorted(members):
            if start in seen:
                continue
            comp = [start]
            seen.add(start)
            stack = [start]
            while stack:
                n = stack.pop()
                for w in adjacency[n]:
                    if w not in seen:
                        seen.add(w)
                        comp.append(w)
                        stack.append(w)
            out.append(sorted(comp))
        return out

    canon = {(u, v) if u < v else (v, u) for u, v in edges}
    final: list[list[str]] = []
    work = [(sorted(nodes), canon)]
    while work:
        members, live = work.pop()
        if ok(members):
            final.append(members)
            continue
        if len(members) == 1:
            # size is fine at 1; only an unsatisfiable load cap lands here,
            # and that was rejected up front
            raise InternalError("single-node community failed the stop rule")
        bet = edge_betweenness(members, sorted(live))
        best_val = max(bet.values())
        victim = min(e for e, b in bet.items() if b == best_val)
        live = live - {victim}
        for comp in components(members, live):
            comp_nodes = set(comp)
            work.append((comp, {e for e in live if e[0] in comp_nodes}))
    return sorted(final)
