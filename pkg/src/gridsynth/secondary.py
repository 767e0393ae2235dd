"""Low-voltage network design along a single road link.

Candidate wiring edges come from a Delaunay triangulation over residences
and transformer candidate sites; edge weights add a crossing penalty to the
geodesic length. A small MILP picks a forest of residence chains, each
rooted at one energized transformer, with per-edge capacity limits.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .errors import GridSynthError, InfeasibleError, InternalError, ValidationError
from .geo import LEFT, RIGHT, GeoPoint, Segment, geodesic_distance, side_of
from .mapping import CandidateSite
from .milp import BINARY, EQUAL, LESS_EQUAL, LinearModel, OPTIMAL, solve_milp

DEFAULT_LAMBDA_M = 50.0
DEFAULT_SECONDARY_CAP_KW = 100.0


class CollinearPointsError(GridSynthError):
    """All points lie on one line; no triangulation exists."""


# --- Delaunay triangulation (Bowyer-Watson, local plane) -------------------


def _project(points: list[GeoPoint]) -> list[tuple[float, float]]:
    lat0 = sum(p.lat for p in points) / len(points)
    lon0 = sum(p.lon for p in points) / len(points)
    c = max(math.cos(math.radians(lat0)), 1e-12)
    return [((p.lon - lon0) * c, p.lat - lat0) for p in points]


def _circumcircle(
    a: tuple[float, float], b: tuple[float, float], c: tuple[float, float]
) -> tuple[float, float, float]:
    """Center (x, y) and squared radius; degenerate triangles get r2 = inf."""
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        return 0.0, 0.0, math.inf
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    r2 = (ax - ux) ** 2 + (ay - uy) ** 2
    return ux, uy, r2


def delaunay_triangles(points: list[GeoPoint]) -> list[tuple[int, int, int]]:
    """Triangles (index triples) of the Delaunay triangulation.

    Exact duplicate points are merged onto their first occurrence with a
    warning. Raises CollinearPointsError when no triangle can be formed.
    """
    if len(points) < 3:
        raise ValidationError("triangulation needs at least 3 points")
    canon: dict[GeoPoint, int] = {}
    alias: list[int] = []
    for i, p in enumerate(points):
        if p in canon:
            alias.append(canon[p])
        else:
            canon[p] = i
            alias.append(i)
    if len(canon) != len(points):
        warnings.warn(f"{len(points) - len(canon)} duplicate points merged", stacklevel=2)
    distinct = sorted(canon.values())
    if len(distinct) < 3:
        raise CollinearPointsError("fewer than 3 distinct points")

    xy = _project(points)
    span = max(
        max(x for x, _ in xy) - min(x for x, _ in xy),
        max(y for _, y in xy) - min(y for _, y in xy),
        1e-9,
    )
    cx = sum(x for x, _ in xy) / len(xy)
    cy = sum(y for _, y in xy) / len(xy)
    big = 64.0 * span
    coords = [xy[i] for i in distinct]
    coords.append((cx - big, cy - big / 2.0))
    coords.append((cx + big, cy - big / 2.0))
    coords.append((cx, cy + big))
    s0, s1, s2 = len(coords) - 3, len(coords) - 2, len(coords) - 1

    tris: dict[tuple[int, int, int], tuple[float, float, float]] = {}

    def add(i: int, j: int, k: int) -> None:
        key = tuple(sorted((i, j, k)))
        tris[key] = _circumcircle(coords[i], coords[j], coords[k])

    add(s0, s1, s2)
    for local in range(len(distinct)):
        px, py = coords[local]
        bad = []
        for key, (ux, uy, r2) in tris.items():
            if r2 is math.inf or (px - ux) ** 2 + (py - uy) ** 2 <= r2 * (1.0 + 1e-12):
                bad.append(key)
        boundary: dict[tuple[int, int], int] = {}
        for key in bad:
            del tris[key]
            i, j, k = key
            for edge in ((i, j), (j, k), (i, k)):
                boundary[edge] = boundary.get(edge, 0) + 1
        for (i, j), count in boundary.items():
            if count == 1 and local not in (i, j):
                add(i, j, local)

    out = []
    for key in tris:
        if any(v >= s0 for v in key):
            continue
        out.append(tuple(sorted(distinct[v] for v in key)))
    if not out:
        raise CollinearPointsError("all points are collinear")
    return sorted(out)


def delaunay(points: list[GeoPoint]) -> list[tuple[int, int]]:
    """Undirected Delaunay edges over point indices; 2 points give 1 edge."""
    if len(points) < 2:
        raise ValidationError("triangulation needs at least 2 points")
    if len(points) == 2:
        return [(0, 1)]
    edges: set[tuple[int, int]] = set()
    for i, j, k in delaunay_triangles(points):
        edges.update(((i, j), (j, k), (i, k)))
    return sorted(edges)


# --- problem construction ---------------------------------------------------


@dataclass
class SecondaryProblem:
    link_id: str
    link: Segment
    residences: list[tuple[str, GeoPoint, float]]  # (id, location, avg demand kW)
    candidates: list[CandidateSite]
    lambda_m: float = DEFAULT_LAMBDA_M
    f_max_kw: float = DEFAULT_SECONDARY_CAP_KW

    def __post_init__(self) -> None:
        if self.residences and not self.candidates:
            raise ValidationError(f"link {self.link_id!r}: residences but no candidate sites")
        for _, _, demand in self.residences:
            if demand <= 0:
                raise ValidationError(f"link {self.link_id!r}: non-positive residence demand")


@dataclass(frozen=True)
class CandidateEdge:
    u: str  # node id (residence or candidate)
    v: str
    length_m: float
    weight: float  # length plus crossing penalty


@dataclass
class SecondaryEdge:
    u: str
    v: str
    length_m: float
    flow_kw: float  # positive along u -> v


@dataclass
class SecondaryNetwork:
    link_id: str
    used_transformers: list[str]
    transformer_sites: dict[str, CandidateSite]
    transformer_load_kw: dict[str, float]
    edges: list[SecondaryEdge]
    tree_of: dict[str, str]  # residence id -> its transformer id
    objective: float  # weighted cost, crossing penalties included
    total_length_m: float = field(init=False)

    def __post_init__(self) -> None:
        self.total_length_m = sum(e.length_m for e in self.edges)


def _crossing_penalty(
    link: Segment, kind_u: str, kind_v: str, pu: GeoPoint, pv: GeoPoint
) -> int:
    """0 same side, 2 opposite sides, 1 when one endpoint is a transformer."""
    if kind_u == "t" or kind_v == "t":
        return 1
    su = side_of(pu, link)
    sv = side_of(pv, link)
    if (su == LEFT and sv == RIGHT) or (su == RIGHT and sv == LEFT):
        return 2
    return 0


def candidate_edges(problem: SecondaryProblem) -> list[CandidateEdge]:
    """Delaunay wiring candidates; transformer-transformer pairs are dropped.

    When every point is collinear (no triangulation), falls back to chain
    edges between consecutive points plus residence-candidate shortcuts
    within twice the median chain spacing.
    """
    nodes: list[tuple[str, GeoPoint, str]] = [
        (rid, pt, "h") for rid, pt, _ in problem.residences
    ] + [(site.candidate_id, site.point, "t") for site in problem.candidates]
    if len(nodes) < 2:
        return []
    points = [pt for _, pt, _ in nodes]
    try:
        pairs = delaunay(points)
    except CollinearPointsError:
        pairs = _chain_pairs(points)

    out = []
    for i, j in pairs:
        id_i, pt_i, kind_i = nodes[i]
        id_j, pt_j, kind_j = nodes[j]
        if kind_i == "t" and kind_j == "t":
            continue
        length = geodesic_distance(pt_i, pt_j)
        weight = length + problem.lambda_m * _crossing_penalty(
            problem.link, kind_i, kind_j, pt_i, pt_j
        )
        out.append(CandidateEdge(id_i, id_j, length, weight))
    return out


def _chain_pairs(points: list[GeoPoint]) -> list[tuple[int, int]]:
    """Consecutive pairs along the dominant direction, plus near shortcuts."""
    n = len(points)
    far = (0, 1 if n > 1 else 0)
    far_d = -1.0
    for i in range(n):
        for j in range(i + 1, n):
            d = geodesic_distance(points[i], points[j])
            if d > far_d:
                far_d, far = d, (i, j)
    a = points[far[0]]
    order = sorted(range(n), key=lambda i: (geodesic_distance(a, points[i]), i))
    pairs = [(order[i], order[i + 1]) for i in range(n - 1)]
    gaps = sorted(geodesic_distance(points[u], points[v]) for u, v in pairs)
    if gaps:
        median = gaps[len(gaps) // 2]
        for i in range(n):
            for j in range(i + 1, n):
                if (i, j) not in pairs and (j, i) not in pairs:
                    if geodesic_distance(points[i], points[j]) <= 2.0 * median:
                        pairs.append((i, j))
    return [tuple(sorted(p)) for p in pairs]


# --- MILP ------------------------------------------------------------------


def build_secondary_model(
    problem: SecondaryProblem, edges: list[CandidateEdge]
) -> tuple[LinearModel, list[int], list[int]]:
    """Model with one selection binary and one flow variable per edge."""
    model = LinearModel(f"secondary_{problem.link_id}")
    nh = len(problem.residences)
    x_vars = []
    f_vars = []
    for k, e in enumerate(edges):
        x_vars.append(model.add_variable(f"x{k}", kind=BINARY))
        f_vars.append(
            model.add_variable(f"f{k}", lower=-problem.f_max_kw, upper=problem.f_max_kw)
        )
    incident: dict[str, list[int]] = {}
    for k, e in enumerate(edges):
        incident.setdefault(e.u, []).append(k)
        incident.setdefault(e.v, []).append(k)

    for rid, _, demand in problem.residences:
        touching = incident.get(rid, [])
        model.add_constraint(
            {x_vars[k]: 1.0 for k in touching}, LESS_EQUAL, 2.0, name=f"deg_{rid}"
        )
        balance: dict[int, float] = {}
        for k in touching:
            balance[f_vars[k]] = 1.0 if edges[k].v == rid else -1.0
        model.add_constraint(balance, EQUAL, demand, name=f"bal_{rid}")

    for k in range(len(edges)):
        model.add_constraint(
            {f_vars[k]: 1.0, x_vars[k]: -problem.f_max_kw}, LESS_EQUAL, 0.0, name=f"cap_hi_{k}"
        )
        model.add_constraint(
            {f_vars[k]: -1.0, x_vars[k]: -problem.f_max_kw}, LESS_EQUAL, 0.0, name=f"cap_lo_{k}"
        )
    model.add_constraint({x: 1.0 for x in x_vars}, EQUAL, float(nh), name="edge_count")
    model.set_objective({x_vars[k]: edges[k].weight for k in range(len(edges))})
    return model, x_vars, f_vars


def solve_secondary(problem: SecondaryProblem) -> SecondaryNetwork:
    """Optimal residence chains for one link's residences."""
    by_id = {site.candidate_id: site for site in problem.candidates}
    if not problem.residences:
        return SecondaryNetwork(problem.link_id, [], {}, {}, [], {}, 0.0)

    edges = candidate_edges(problem)
    model, x_vars, f_vars = build_secondary_model(problem, edges)
    sol = solve_milp(model)
    if sol.status != OPTIMAL:
        raise InfeasibleError(
            f"link {problem.link_id!r}: no feasible secondary network for "
            f"{len(problem.residences)} residences and {len(problem.candidates)} candidate "
            f"sites (status {sol.status}); raise f_max_kw or the candidate count"
        )

    chosen = [k for k in range(len(edges)) if sol.value(x_vars[k]) > 0.5]
    demands = {rid: demand for rid, _, demand in problem.residences}
    adjacency: dict[str, list[tuple[str, int]]] = {}
    for k in chosen:
        adjacency.setdefault(edges[k].u, []).append((edges[k].v, k))
        adjacency.setdefault(edges[k].v, []).append((edges[k].u, k))

    if len(chosen) != len(problem.residences):
        raise InternalError(f"link {problem.link_id!r}: edge count differs from residence count")
    for rid in demands:
        if len(adjacency.get(rid, [])) > 2:
            raise InternalError(f"residence {rid!r} has degree above 2")

    used = sorted(t for t in by_id if adjacency.get(t))
    flows, tree_of, loads = _tree_flows(edges, chosen, adjacency, demands, used, problem)
    for k in chosen:
        if abs(flows[k] - sol.value(f_vars[k])) > 1e-6 * max(1.0, abs(flows[k])):
            raise InternalError(
                f"link {problem.link_id!r}: solver flow on edge {k} disagrees with tree flow"
            )

    out_edges = [
        SecondaryEdge(edges[k].u, edges[k].v, edges[k].length_m, flows[k]) for k in sorted(chosen)
    ]
    return SecondaryNetwork(
        problem.link_id,
        used,
        {t: by_id[t] for t in used},
        loads,
        out_edges,
        tree_of,
        float(sol.objective),
    )


def _tree_flows(edges, chosen, adjacency, demands, used, problem):
    """Exact flows from tree structure: each edge carries its far-side demand.

    Also checks the forest shape: every component must contain exactly one
    energized transformer, reached from it without revisiting nodes.
    """
    flows: dict[int, float] = {}
    tree_of: dict[str, str] = {}
    loads: dict[str, float] = {}
    seen: set[str] = set()
    for t in used:
        seen.add(t)

        def down(node: str, parent_edge: int | None) -> float:
            subtotal = demands.get(node, 0.0)
            if node in demands:
                tree_of[node] = t
            for nbr, k in adjacency.get(node, []):
                if k == parent_edge:
                    continue
                if nbr in seen:
                    raise InternalError(f"link {problem.link_id!r}: cycle in secondary network")
                seen.add(nbr)
                sub = down(nbr, k)
                # sign: positive flow follows the stored u -> v orientation
                flows[k] = sub if edges[k].v == nbr else -sub
                subtotal += sub
            return subtotal

        loads[t] = down(t, None)
    orphans = set(demands) - seen
    if orphans:
        raise InternalError(
            f"link {problem.link_id!r}: residences {sorted(orphans)} not connected to a transformer"
        )
    extra = [k for k in chosen if k not in flows]
    if extra:
        raise InternalError(f"link {problem.link_id!r}: selected edges outside any tree")
    return flows, tree_of, loads


def check_components(network: SecondaryNetwork, demands: dict[str, float]) -> bool:
    """Component count equals energized transformer count and flows balance."""
    adjacency: dict[str, list[tuple[str, float, str]]] = {}
    nodes = set(network.used_transformers) | set(demands)
    for e in network.edges:
        # role recorded is the node's own position on the edge
        adjacency.setdefault(e.u, []).append((e.v, e.flow_kw, "tail"))
        adjacency.setdefault(e.v, []).append((e.u, e.flow_kw, "head"))
        nodes.update((e.u, e.v))
    if any(t not in adjacency for t in network.used_transformers):
        return False

    comps = 0
    seen: set[str] = set()
    for start in sorted(nodes):
        if start in seen:
            continue
        comps += 1
        stack = [start]
        seen.add(start)
        while stack:
            node = stack.pop()
            for nbr, _, _ in adjacency.get(node, []):
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
    if comps != len(network.used_transformers):
        return False

    for rid, demand in demands.items():
        net = 0.0
        for _, flow, role in adjacency.get(rid, []):
            net += flow if role == "head" else -flow
        if abs(net - demand) > 1e-9:
            return False
    return True
