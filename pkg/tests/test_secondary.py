"""Low-voltage design: triangulation, crossing costs, and MILP optimality."""
from __future__ import annotations

import itertools
import math
import random
from fractions import Fraction

import pytest

from gridsynth.errors import InfeasibleError, ValidationError
from gridsynth.geo import GeoPoint, Segment, geodesic_distance
from gridsynth.mapping import CandidateSite
from gridsynth.secondary import (
    CollinearPointsError,
    SecondaryProblem,
    candidate_edges,
    check_components,
    delaunay,
    delaunay_triangles,
    solve_secondary,
)

M_PER_DEG = math.radians(1.0) * 6_371_008.8


def _pt(x_m: float, y_m: float) -> GeoPoint:
    """Point x_m east and y_m north of the equatorial origin."""
    return GeoPoint(x_m / M_PER_DEG, y_m / M_PER_DEG)


def _link(length_m: float = 200.0) -> Segment:
    return Segment(_pt(0.0, 0.0), _pt(length_m, 0.0))


def _site(cid: str, x_m: float, frac: float = 0.5) -> CandidateSite:
    return CandidateSite(cid, _pt(x_m, 0.0), frac)


# --- Delaunay ----------------------------------------------------------------


def _incircle_violations(points: list[GeoPoint], tris: list[tuple[int, int, int]]) -> int:
    """Count points strictly inside a triangle circumcircle, exactly."""
    lat0 = sum(p.lat for p in points) / len(points)
    c = Fraction(math.cos(math.radians(lat0)))
    xy = [(Fraction(p.lon) * c, Fraction(p.lat)) for p in points]
    bad = 0
    for i, j, k in tris:
        ax, ay = xy[i]
        bx, by = xy[j]
        cx, cy = xy[k]
        orient = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if orient == 0:
            bad += 1
            continue
        if orient < 0:
            bx, by, cx, cy = cx, cy, bx, by
        for m, (dx, dy) in enumerate(xy):
            if m in (i, j, k):
                continue
            m11, m12 = ax - dx, ay - dy
            m21, m22 = bx - dx, by - dy
            m31, m32 = cx - dx, cy - dy
            det = (
                m11 * (m22 * (m31 * m31 + m32 * m32) - m32 * (m21 * m21 + m22 * m22))
                - m12 * (m21 * (m31 * m31 + m32 * m32) - m31 * (m21 * m21 + m22 * m22))
                + (m11 * m11 + m12 * m12) * (m21 * m32 - m22 * m31)
            )
            if det > 0:
                bad += 1
    return bad


def test_delaunay_empty_circumcircle_property():
    for seed in range(6):
        rng = random.Random(900 + seed)
        points = [_pt(rng.uniform(0, 300), rng.uniform(-60, 60)) for _ in range(24)]
        tris = delaunay_triangles(points)
        assert _incircle_violations(points, tris) == 0
        used = {v for t in tris for v in t}
        assert used == set(range(len(points)))
        edges = delaunay(points)
        assert len(edges) <= 3 * len(points) - 6
        assert all(i < j for i, j in edges)
        assert len(set(edges)) == len(edges)


def test_delaunay_two_points_and_square():
    assert delaunay([_pt(0, 0), _pt(10, 0)]) == [(0, 1)]
    square = [_pt(0, 0), _pt(100, 0), _pt(100, 100), _pt(0, 100)]
    edges = delaunay(square)
    hull = {(0, 1), (1, 2), (2, 3), (0, 3)}
    assert hull <= set(edges)
    assert len(edges) == 5  # hull plus one diagonal


def test_delaunay_collinear_raises():
    points = [_pt(float(i) * 25.0, 0.0) for i in range(5)]
    with pytest.raises(CollinearPointsError):
        delaunay(points)
    with pytest.raises(ValidationError):
        delaunay([_pt(0, 0)])


def test_delaunay_duplicates_merged_with_warning():
    points = [_pt(0, 0), _pt(50, 10), _pt(20, 40), _pt(50, 10), _pt(80, 5)]
    with pytest.warns(UserWarning, match="duplicate"):
        edges = delaunay(points)
    touched = {v for e in edges for v in e}
    assert 3 not in touched  # merged into index 1
    assert touched <= {0, 1, 2, 4}


# --- crossing penalties -------------------------------------------------------


def test_weight_adds_lambda_for_transformer_edge():
    link = _link()
    problem = SecondaryProblem(
        "l0",
        link,
        [("h0", _pt(100.0, 20.0), 1.0)],
        [_site("t_l0_0", 100.0)],
        lambda_m=50.0,
    )
    edges = candidate_edges(problem)
    assert len(edges) == 1
    e = edges[0]
    assert e.length_m == pytest.approx(20.0, abs=1e-4)
    assert e.weight == pytest.approx(e.length_m + 50.0, abs=1e-9)


def test_weight_same_side_opposite_side_and_on():
    link = _link()
    north_a, north_b = _pt(80.0, 15.0), _pt(120.0, 15.0)
    south = _pt(100.0, -15.0)
    on_line = _pt(60.0, 0.0)
    problem = SecondaryProblem(
        "l0",
        link,
        [("h0", north_a, 1.0), ("h1", north_b, 1.0), ("h2", south, 1.0), ("h3", on_line, 1.0)],
        [_site("t_l0_0", 10.0)],
        lambda_m=50.0,
    )
    weights = {}
    for e in candidate_edges(problem):
        weights[tuple(sorted((e.u, e.v)))] = e.weight - e.length_m
    assert weights[("h0", "h1")] == pytest.approx(0.0)  # same side
    assert weights[("h1", "h2")] == pytest.approx(100.0)  # crosses the road
    # an endpoint exactly on the axis never pays the crossing penalty
    for pair, extra in weights.items():
        if "h3" in pair and "t_l0_0" not in pair:
            assert extra == pytest.approx(0.0)


def test_transformer_pairs_never_appear():
    problem = SecondaryProblem(
        "l0",
        _link(),
        [("h0", _pt(100.0, 20.0), 1.0)],
        [_site("t_l0_0", 66.0, 1 / 3), _site("t_l0_1", 133.0, 2 / 3)],
    )
    for e in candidate_edges(problem):
        assert not (e.u.startswith("t_") and e.v.startswith("t_"))


# --- brute-force optimality ---------------------------------------------------


def _oracle_best(problem: SecondaryProblem) -> float | None:
    """Exhaustive minimum over feasible edge subsets, or None."""
    edges = candidate_edges(problem)
    demands = {rid: d for rid, _, d in problem.residences}
    cands = {s.candidate_id for s in problem.candidates}
    nh = len(problem.residences)
    best = None
    for subset in itertools.combinations(range(len(edges)), nh):
        adj: dict[str, list[tuple[str, int]]] = {}
        for k in subset:
            adj.setdefault(edges[k].u, []).append((edges[k].v, k))
            adj.setdefault(edges[k].v, []).append((edges[k].u, k))
        if any(len(adj.get(r, [])) not in (1, 2) for r in demands):
            continue
        feasible = True
        seen: set[str] = set()
        for rid in sorted(demands):
            if rid in seen or not feasible:
                continue
            comp_nodes: list[str] = []
            stack = [rid]
            seen.add(rid)
            while stack:
                n = stack.pop()
                comp_nodes.append(n)
                for nbr, _ in adj.get(n, []):
                    if nbr not in seen:
                        seen.add(nbr)
                        stack.append(nbr)
            roots = [n for n in comp_nodes if n in cands]
            comp_edges = {k for n in comp_nodes for _, k in adj.get(n, [])}
            if len(roots) != 1 or len(comp_edges) != len(comp_nodes) - 1:
                feasible = False
                break

            def load(node: str, parent: str | None) -> float:
                total = demands.get(node, 0.0)
                for nbr, k in adj.get(node, []):
                    if nbr == parent:
                        continue
                    sub = load(nbr, node)
                    if sub > problem.f_max_kw + 1e-9:
                        raise OverflowError
                    total += sub
                return total

            try:
                load(roots[0], None)
            except OverflowError:
                feasible = False
                break
        if not feasible:
            continue
        cost = sum(edges[k].weight for k in subset)
        if best is None or cost < best:
            best = cost
    return best


def test_solver_matches_enumeration_on_random_instances():
    for seed in range(8):
        rng = random.Random(3100 + seed)
        link = _link(220.0)
        residences = []
        for i in range(rng.randint(3, 5)):
            side = rng.choice([-1.0, 1.0])
            residences.append(
                (
                    f"h{i}",
                    _pt(rng.uniform(10, 210), side * rng.uniform(6, 40)),
                    rng.uniform(1.0, 5.0),
                )
            )
        problem = SecondaryProblem(
            "lx",
            link,
            residences,
            [_site("t_lx_0", 73.3, 1 / 3), _site("t_lx_1", 146.6, 2 / 3)],
            f_max_kw=rng.choice([7.0, 100.0]),
        )
        expected = _oracle_best(problem)
        if expected is None:
            with pytest.raises(InfeasibleError):
                solve_secondary(problem)
            continue
        net = solve_secondary(problem)
        assert net.objective == pytest.approx(expected, rel=1e-6)
        assert check_components(net, {rid: d for rid, _, d in residences})


def test_single_transformer_chain_layout():
    link = _link()
    residences = [(f"h{i}", _pt(70.0 + 20.0 * i, 18.0), 1.0) for i in range(4)]
    problem = SecondaryProblem("l0", link, residences, [_site("t_l0_0", 100.0)])
    net = solve_secondary(problem)
    assert net.used_transformers == ["t_l0_0"]
    assert set(net.tree_of) == {"h0", "h1", "h2", "h3"}
    assert set(net.tree_of.values()) == {"t_l0_0"}
    assert net.transformer_load_kw["t_l0_0"] == pytest.approx(4.0)
    assert len(net.edges) == 4
    assert check_components(net, {rid: d for rid, _, d in residences})


def test_capacity_forces_two_trees():
    link = _link()
    residences = [("h0", _pt(40.0, 12.0), 80.0), ("h1", _pt(160.0, 12.0), 80.0)]
    problem = SecondaryProblem(
        "l0",
        link,
        residences,
        [_site("t_l0_0", 40.0, 0.2), _site("t_l0_1", 160.0, 0.8)],
        f_max_kw=100.0,
    )
    net = solve_secondary(problem)
    assert len(net.used_transformers) == 2
    assert net.transformer_load_kw == {"t_l0_0": pytest.approx(80.0), "t_l0_1": pytest.approx(80.0)}


def test_demand_above_line_capacity_is_infeasible():
    problem = SecondaryProblem(
        "l0",
        _link(),
        [("h0", _pt(90.0, 10.0), 110.0), ("h1", _pt(110.0, 10.0), 110.0)],
        [_site("t_l0_0", 100.0)],
        f_max_kw=100.0,
    )
    with pytest.raises(InfeasibleError, match="l0"):
        solve_secondary(problem)


def test_collinear_points_use_chain_fallback():
    link = _link()
    residences = [(f"h{i}", _pt(30.0 + 35.0 * i, 0.0), 1.5) for i in range(4)]
    problem = SecondaryProblem("l0", link, residences, [_site("t_l0_0", 112.0)])
    edges = candidate_edges(problem)
    assert edges, "fallback produced no candidate edges"
    net = solve_secondary(problem)
    assert set(net.tree_of) == {rid for rid, _, _ in residences}
    assert check_components(net, {rid: d for rid, _, d in residences})


def test_empty_and_invalid_problems():
    empty = SecondaryProblem("l0", _link(), [], [])
    net = solve_secondary(empty)
    assert net.edges == [] and net.used_transformers == []
    with pytest.raises(ValidationError):
        SecondaryProblem("l0", _link(), [("h0", _pt(1, 1), 1.0)], [])
    with pytest.raises(ValidationError):
        SecondaryProblem("l0", _link(), [("h0", _pt(1, 1), 0.0)], [_site("t", 100.0)])


def test_check_components_rejects_bad_networks():
    link = _link()
    residences = [("h0", _pt(90.0, 15.0), 2.0), ("h1", _pt(115.0, 15.0), 3.0)]
    problem = SecondaryProblem("l0", link, residences, [_site("t_l0_0", 100.0)])
    net = solve_secondary(problem)
    demands = {rid: d for rid, _, d in residences}
    assert check_components(net, demands)

    broken = solve_secondary(problem)
    broken.edges[0].flow_kw += 1.0
    assert not check_components(broken, demands)

    phantom = solve_secondary(problem)
    phantom.used_transformers = ["t_l0_0", "t_ghost"]
    assert not check_components(phantom, demands)
