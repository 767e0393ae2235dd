"""Residence-to-road assignment and transformer candidate placement.

The nearest-link search shortlists via the quad-tree and stays exact: if the
best shortlist distance exceeds the effective search radius, some closer
link could have been excluded, so the radius doubles and the query repeats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError
from .geo import (
    BBox,
    GeoPoint,
    Segment,
    SpatialIndex,
    geodesic_distance,
    index_links,
    interpolate_along,
    point_segment_distance,
)
from .ingest import RoadNetwork, Scenario

DEFAULT_PADDING_M = 100.0
DEFAULT_MAX_MAPPING_M = 5000.0
DEFAULT_SPACING_M = 50.0
DEFAULT_RESIDENCES_PER_TRANSFORMER = 8

_MAX_ATTEMPTS = 64  # safety net; the radius caps at max_distance long before this


@dataclass
class LinkAssignment:
    forward: dict[str, str]  # residence id -> link id
    inverse: dict[str, list[str]]  # link id -> residence ids, sorted
    distance_m: dict[str, float]


@dataclass(frozen=True)
class CandidateSite:
    candidate_id: str
    point: GeoPoint
    fraction: float  # position along the host link, 0 at u, 1 at v


def nearest_link(
    p: GeoPoint,
    idx: SpatialIndex,
    roads: RoadNetwork,
    max_distance_m: float = DEFAULT_MAX_MAPPING_M,
    label: str | None = None,
) -> tuple[str, float]:
    """Closest road link to p and its distance; ties go to the lower link id."""
    who = label or f"point ({p.lon}, {p.lat})"
    radius = max(idx.padding_m, 1.0)
    for _ in range(_MAX_ATTEMPTS):
        extra = radius - idx.padding_m
        box = BBox.around([p])
        if extra > 0:
            box = box.padded_m(extra)
        best_d = math.inf
        best_id: str | None = None
        for lid in idx.query(box):
            d = point_segment_distance(p, roads.segment(lid))
            if (d, lid) < (best_d, best_id if best_id is not None else "￿"):
                best_d, best_id = d, lid
        if best_id is not None and best_d <= radius:
            if best_d > max_distance_m:
                raise ValidationError(
                    f"no road link within {max_distance_m:.0f} m of {who} (nearest is {best_d:.0f} m)"
                )
            return best_id, best_d
        if radius >= max_distance_m:
            raise ValidationError(f"no road link within {max_distance_m:.0f} m of {who}")
        radius = min(radius * 2.0, max_distance_m)
    raise ValidationError(
        f"mapping search for {who} exceeded {_MAX_ATTEMPTS} retries; "
        f"check the index padding and the mapping distance limit"
    )


def build_assignment(
    scenario: Scenario,
    idx: SpatialIndex | None = None,
    padding_m: float = DEFAULT_PADDING_M,
    max_distance_m: float = DEFAULT_MAX_MAPPING_M,
) -> LinkAssignment:
    """Map every residence to its nearest road link."""
    if idx is None:
        idx = index_links(scenario.roads.link_segments(), padding_m)
    forward: dict[str, str] = {}
    inverse: dict[str, list[str]] = {}
    distance: dict[str, float] = {}
    for res in scenario.residences:
        lid, d = nearest_link(
            res.location, idx, scenario.roads, max_distance_m, label=f"residence {res.res_id!r}"
        )
        forward[res.res_id] = lid
        distance[res.res_id] = d
        inverse.setdefault(lid, []).append(res.res_id)
    for lst in inverse.values():
        lst.sort()
    return LinkAssignment(forward, inverse, distance)


def place_candidates(
    link_id: str,
    segment: Segment,
    n_mapped: int,
    spacing_m: float = DEFAULT_SPACING_M,
    residences_per_transformer: int = DEFAULT_RESIDENCES_PER_TRANSFORMER,
) -> list[CandidateSite]:
    """Evenly spaced pole-top transformer candidate sites along a link.

    k = max(1, min(floor(length/spacing), ceil(n_mapped/rho))): enough sites
    for the mapped residences at the sizing ratio rho, capped by the spacing
    budget, and never zero for a link that has residences to serve.
    """
    if n_mapped < 1:
        raise ValidationError(f"link {link_id!r}: no mapped residences to place candidates for")
    total = geodesic_distance(segment.a, segment.b)
    by_spacing = math.floor(total / spacing_m)
    by_load = math.ceil(n_mapped / residences_per_transformer)
    k = max(1, min(by_spacing, by_load))
    points = interpolate_along(segment, k)
    return [
        CandidateSite(f"t_{link_id}_{i}", pt, (i + 1) / (k + 1)) for i, pt in enumerate(points)
    ]


def candidates_for_assignment(
    roads: RoadNetwork,
    assignment: LinkAssignment,
    spacing_m: float = DEFAULT_SPACING_M,
    residences_per_transformer: int = DEFAULT_RESIDENCES_PER_TRANSFORMER,
) -> dict[str, list[CandidateSite]]:
    """Candidate sites for every link that has at least one mapped residence."""
    out: dict[str, list[CandidateSite]] = {}
    for lid in sorted(assignment.inverse):
        out[lid] = place_candidates(
            lid,
            roads.segment(lid),
            len(assignment.inverse[lid]),
            spacing_m,
            residences_per_transformer,
        )
    return out
