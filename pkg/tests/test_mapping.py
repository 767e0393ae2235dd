"""Nearest-link search (vs linear scan) and candidate placement."""
from __future__ import annotations

import random

import pytest

from gridsynth.errors import ValidationError
from gridsynth.geo import GeoPoint, Segment, geodesic_distance, index_links, point_segment_distance
from gridsynth.ingest import generate_scenario
from gridsynth.mapping import (
    build_assignment,
    candidates_for_assignment,
    nearest_link,
    place_candidates,
)


def _scan(p, roads):
    best = None
    for lid, seg in roads.link_segments():
        d = point_segment_distance(p, seg)
        if best is None or (d, lid) < best:
            best = (d, lid)
    return best[1], best[0]


def test_nearest_link_matches_linear_scan():
    sc = generate_scenario(seed=21, n_res=120, n_sub=1, grid_extent_km=1.5)
    idx = index_links(sc.roads.link_segments(), padding_m=100.0)
    for res in sc.residences:
        want_id, want_d = _scan(res.location, sc.roads)
        got_id, got_d = nearest_link(res.location, idx, sc.roads)
        assert got_id == want_id
        assert abs(got_d - want_d) < 1e-9


def test_retry_with_tiny_padding_stays_exact():
    sc = generate_scenario(seed=22, n_res=0, n_sub=1, grid_extent_km=1.0)
    idx = index_links(sc.roads.link_segments(), padding_m=1.0)
    rng = random.Random(4)
    # points well off the road grid: up to ~2 km away
    for _ in range(60):
        p = GeoPoint(-77.2 + rng.uniform(-0.02, 0.03), 39.1 + rng.uniform(-0.02, 0.03))
        want_id, want_d = _scan(p, sc.roads)
        got_id, got_d = nearest_link(p, idx, sc.roads)
        assert got_id == want_id
        assert abs(got_d - want_d) < 1e-9


def test_unmappable_point_raises():
    sc = generate_scenario(seed=23, n_res=0, n_sub=1, grid_extent_km=1.0)
    idx = index_links(sc.roads.link_segments(), padding_m=100.0)
    far = GeoPoint(-76.0, 39.1)  # ~100 km east
    with pytest.raises(ValidationError, match="no road link within"):
        nearest_link(far, idx, sc.roads, label="residence 'h9'")
    try:
        nearest_link(far, idx, sc.roads, label="residence 'h9'")
    except ValidationError as exc:
        assert "h9" in str(exc)


def test_build_assignment_inverse_is_sorted():
    sc = generate_scenario(seed=24, n_res=40, n_sub=1, grid_extent_km=1.0)
    asg = build_assignment(sc)
    assert set(asg.forward) == {r.res_id for r in sc.residences}
    for lid, members in asg.inverse.items():
        assert members == sorted(members)
        for rid in members:
            assert asg.forward[rid] == lid
    for rid, d in asg.distance_m.items():
        assert d <= 65.0  # generator keeps residences within 60 m of a link


def _segment_of_length(meters: float) -> Segment:
    a = GeoPoint(-77.0, 39.0)
    b = GeoPoint(-77.0 + meters / 86_522.0, 39.0)  # approx lon degree at 39N
    s = Segment(a, b)
    scale = meters / geodesic_distance(a, b)
    b = GeoPoint(-77.0 + (b.lon + 77.0) * scale, 39.0)
    return Segment(a, b)


def test_candidate_count_formula():
    s200 = _segment_of_length(200.0)
    sites = place_candidates("l1", s200, n_mapped=40, spacing_m=50.0)
    assert len(sites) == 4  # floor(200/50)=4 beats ceil(40/8)=5
    total = geodesic_distance(s200.a, s200.b)
    for i, site in enumerate(sites, start=1):
        want = total * i / 5.0
        assert abs(geodesic_distance(s200.a, site.point) - want) < 1e-6 * total
        assert abs(site.fraction - i / 5.0) < 1e-12

    s40 = _segment_of_length(40.0)
    sites = place_candidates("l2", s40, n_mapped=3, spacing_m=50.0)
    assert len(sites) == 1  # short link still gets its midpoint
    mid = geodesic_distance(s40.a, sites[0].point)
    assert abs(mid - geodesic_distance(s40.a, s40.b) / 2.0) < 1e-6

    sites = place_candidates("l3", s200, n_mapped=9, spacing_m=50.0)
    assert len(sites) == 2  # ceil(9/8)=2 beats floor(200/50)=4


def test_candidate_spacing_lower_bound():
    rng = random.Random(31)
    for _ in range(40):
        length = rng.uniform(30.0, 600.0)
        seg = _segment_of_length(length)
        n = rng.randint(1, 60)
        sites = place_candidates("lx", seg, n, spacing_m=50.0)
        k = len(sites)
        pts = [seg.a] + [s.point for s in sites] + [seg.b]
        gaps = [geodesic_distance(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
        if k > 1:
            for g in gaps[1:-1]:
                assert g >= 50.0 * k / (k + 1) - 1e-6


def test_candidates_for_assignment_covers_loaded_links():
    sc = generate_scenario(seed=25, n_res=50, n_sub=1, grid_extent_km=1.0)
    asg = build_assignment(sc)
    cands = candidates_for_assignment(sc.roads, asg)
    assert set(cands) == set(asg.inverse)
    ids = [site.candidate_id for sites in cands.values() for site in sites]
    assert len(ids) == len(set(ids))
    for lid, sites in cands.items():
        assert all(site.candidate_id.startswith(f"t_{lid}_") for site in sites)
