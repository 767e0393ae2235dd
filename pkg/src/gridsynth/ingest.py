"""Scenario data: road network, substations, residences.

CSV round trip (roads.csv, substations.csv, residences.csv), validation with
row-numbered errors, and a seeded synthetic scenario generator.
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .geo import EARTH_RADIUS_M, GeoPoint, Segment, geodesic_distance

ROADS_CSV = "roads.csv"
SUBSTATIONS_CSV = "substations.csv"
RESIDENCES_CSV = "residences.csv"

_ROAD_HEADER = ["link_id", "u_id", "v_id", "u_lon", "u_lat", "v_lon", "v_lat", "level"]
_SUB_HEADER = ["sub_id", "lon", "lat"]
_RES_HEADER_BASE = ["res_id", "lon", "lat", "p_avg_kw"]
_HOURS = 24

_GRID_NODE_SPACING_M = 250.0


@dataclass(frozen=True)
class RoadLink:
    link_id: str
    u: str
    v: str
    level: str


@dataclass
class RoadNetwork:
    nodes: dict[str, GeoPoint]
    links: list[RoadLink]
    _by_id: dict[str, RoadLink] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {}
        for link in self.links:
            if link.link_id in self._by_id:
                raise ValidationError(f"duplicate link id {link.link_id!r}")
            if link.u == link.v:
                raise ValidationError(f"link {link.link_id!r} is a self-loop at {link.u!r}")
            for end in (link.u, link.v):
                if end not in self.nodes:
                    raise ValidationError(f"link {link.link_id!r} references unknown node {end!r}")
            self._by_id[link.link_id] = link

    def link(self, link_id: str) -> RoadLink:
        try:
            return self._by_id[link_id]
        except KeyError:
            raise ValidationError(f"unknown link id {link_id!r}") from None

    def segment(self, link_id: str) -> Segment:
        link = self.link(link_id)
        return Segment(self.nodes[link.u], self.nodes[link.v])

    def length_m(self, link_id: str) -> float:
        link = self.link(link_id)
        return geodesic_distance(self.nodes[link.u], self.nodes[link.v])

    def link_segments(self) -> list[tuple[str, Segment]]:
        return [(l.link_id, self.segment(l.link_id)) for l in self.links]


@dataclass(frozen=True)
class Substation:
    sub_id: str
    location: GeoPoint


@dataclass(frozen=True)
class Residence:
    res_id: str
    location: GeoPoint
    avg_demand_kw: float
    demand_kw: tuple[float, ...]  # hourly profile, mean equals avg_demand_kw


@dataclass
class Scenario:
    roads: RoadNetwork
    substations: list[Substation]
    residences: list[Residence]


def validate_scenario(scenario: Scenario) -> None:
    """Check cross-record invariants; RoadNetwork checks its own on build."""
    seen: set[str] = set()
    for sub in scenario.substations:
        if sub.sub_id in seen:
            raise ValidationError(f"duplicate substation id {sub.sub_id!r}")
        seen.add(sub.sub_id)
    if not scenario.substations:
        raise ValidationError("scenario has no substations")
    seen = set()
    for res in scenario.residences:
        if res.res_id in seen:
            raise ValidationError(f"duplicate residence id {res.res_id!r}")
        seen.add(res.res_id)
        if res.avg_demand_kw <= 0.0:
            raise ValidationError(f"residence {res.res_id!r} has non-positive demand")
        if not res.demand_kw:
            raise ValidationError(f"residence {res.res_id!r} has an empty demand profile")
        if any(h < 0.0 for h in res.demand_kw):
            raise ValidationError(f"residence {res.res_id!r} has a negative hourly demand")
        mean = sum(res.demand_kw) / len(res.demand_kw)
        if abs(mean - res.avg_demand_kw) > 1e-6 * max(1.0, res.avg_demand_kw):
            raise ValidationError(
                f"residence {res.res_id!r}: avg_demand_kw {res.avg_demand_kw} "
                f"does not match profile mean {mean}"
            )


# --- CSV loading ---------------------------------------------------------


def _open_rows(path: Path, expected_header: list[str], allow_extra: bool = False):
    if not path.exists():
        raise ValidationError(f"missing input file {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path.name}: empty file") from None
        if header[: len(expected_header)] != expected_header or (
            not allow_extra and len(header) != len(expected_header)
        ):
            raise ValidationError(f"{path.name}: bad header {header!r}")
        yield header
        for row in reader:
            yield row


def _parse_float(value: str, where: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ValidationError(f"{where}: not a number: {value!r}") from None
    if not math.isfinite(out):
        raise ValidationError(f"{where}: non-finite value {value!r}")
    return out


def load_scenario(directory: str | Path) -> Scenario:
    """Read the three scenario CSVs from a directory and validate them."""
    directory = Path(directory)

    nodes: dict[str, GeoPoint] = {}
    links: list[RoadLink] = []
    rows = _open_rows(directory / ROADS_CSV, _ROAD_HEADER)
    next(rows)
    for i, row in enumerate(rows, start=2):
        where = f"{ROADS_CSV} row {i}"
        if len(row) != len(_ROAD_HEADER):
            raise ValidationError(f"{where}: expected {len(_ROAD_HEADER)} columns, got {len(row)}")
        link_id, u_id, v_id = row[0], row[1], row[2]
        u_pt = GeoPoint(_parse_float(row[3], where), _parse_float(row[4], where))
        v_pt = GeoPoint(_parse_float(row[5], where), _parse_float(row[6], where))
        for nid, pt in ((u_id, u_pt), (v_id, v_pt)):
            known = nodes.get(nid)
            if known is None:
                nodes[nid] = pt
            elif known != pt:
                raise ValidationError(f"{where}: node {nid!r} re-declared at different coordinates")
        links.append(RoadLink(link_id, u_id, v_id, row[7]))
    try:
        roads = RoadNetwork(nodes, links)
    except ValidationError as exc:
        raise ValidationError(f"{ROADS_CSV}: {exc}") from None

    substations: list[Substation] = []
    rows = _open_rows(directory / SUBSTATIONS_CSV, _SUB_HEADER)
    next(rows)
    for i, row in enumerate(rows, start=2):
        where = f"{SUBSTATIONS_CSV} row {i}"
        if len(row) != len(_SUB_HEADER):
            raise ValidationError(f"{where}: expected {len(_SUB_HEADER)} columns, got {len(row)}")
        substations.append(
            Substation(row[0], GeoPoint(_parse_float(row[1], where), _parse_float(row[2], where)))
        )

    residences: list[Residence] = []
    rows = _open_rows(directory / RESIDENCES_CSV, _RES_HEADER_BASE, allow_extra=True)
    header = next(rows)
    has_profile = len(header) > len(_RES_HEADER_BASE)
    if has_profile and header[len(_RES_HEADER_BASE) :] != [f"h{h}" for h in range(_HOURS)]:
        raise ValidationError(f"{RESIDENCES_CSV}: bad profile columns {header!r}")
    width = len(_RES_HEADER_BASE) + (_HOURS if has_profile else 0)
    for i, row in enumerate(rows, start=2):
        where = f"{RESIDENCES_CSV} row {i}"
        if len(row) != width:
            raise ValidationError(f"{where}: expected {width} columns, got {len(row)}")
        loc = GeoPoint(_parse_float(row[1], where), _parse_float(row[2], where))
        avg = _parse_float(row[3], where)
        if has_profile:
            profile = tuple(_parse_float(v, where) for v in row[4:])
        else:
            profile = (avg,) * _HOURS
        residences.append(Residence(row[0], loc, avg, profile))

    scenario = Scenario(roads, substations, residences)
    try:
        validate_scenario(scenario)
    except ValidationError as exc:
        raise ValidationError(f"{directory}: {exc}") from None
    return scenario


def write_scenario(scenario: Scenario, directory: str | Path) -> None:
    """Write the three scenario CSVs. Output is deterministic byte-for-byte."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with (directory / ROADS_CSV).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_ROAD_HEADER)
        for link in scenario.roads.links:
            u = scenario.roads.nodes[link.u]
            v = scenario.roads.nodes[link.v]
            w.writerow(
                [link.link_id, link.u, link.v, repr(u.lon), repr(u.lat), repr(v.lon), repr(v.lat), link.level]
            )

    with (directory / SUBSTATIONS_CSV).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SUB_HEADER)
        for sub in scenario.substations:
            w.writerow([sub.sub_id, repr(sub.location.lon), repr(sub.location.lat)])

    with (directory / RESIDENCES_CSV).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_RES_HEADER_BASE + [f"h{h}" for h in range(_HOURS)])
        for res in scenario.residences:
            row = [res.res_id, repr(res.location.lon), repr(res.location.lat), repr(res.avg_demand_kw)]
            row.extend(repr(h) for h in res.demand_kw)
            w.writerow(row)


# --- synthetic scenario generation ----------------------------------------


def _offset_point(origin: GeoPoint, east_m: float, north_m: float) -> GeoPoint:
    c = max(math.cos(math.radians(origin.lat)), 1e-12)
    return GeoPoint(
        origin.lon + math.degrees(east_m / (EARTH_RADIUS_M * c)),
        origin.lat + math.degrees(north_m / EARTH_RADIUS_M),
    )


def _grid_roads(anchor: GeoPoint, extent_m: float) -> RoadNetwork:
    k = max(2, round(extent_m / _GRID_NODE_SPACING_M) + 1)
    nodes: dict[str, GeoPoint] = {}
    for r in range(k):
        for c in range(k):
            nodes[f"n{r * k + c}"] = _offset_point(anchor, c * _GRID_NODE_SPACING_M, r * _GRID_NODE_SPACING_M)
    links: list[RoadLink] = []
    mid = k // 2
    idx = 0
    for r in range(k):
        for c in range(k):
            here = f"n{r * k + c}"
            if c + 1 < k:
                level = "arterial" if r == mid else "residential"
                links.append(RoadLink(f"l{idx}", here, f"n{r * k + c + 1}", level))
                idx += 1
            if r + 1 < k:
                level = "arterial" if c == mid else "residential"
                links.append(RoadLink(f"l{idx}", here, f"n{(r + 1) * k + c}", level))
                idx += 1
    return RoadNetwork(nodes, links)


def _radial_roads(anchor: GeoPoint, extent_m: float) -> RoadNetwork:
    """Arterial arms from a central node plus a ring at half radius."""
    n_arms = 6
    step = _GRID_NODE_SPACING_M
    hops = max(2, round((extent_m / 2.0) / step))
    center = _offset_point(anchor, extent_m / 2.0, extent_m / 2.0)
    nodes: dict[str, GeoPoint] = {"n0": center}
    links: list[RoadLink] = []
    idx = 0
    ring_hop = max(1, hops // 2)
    ring_nodes: list[str] = []
    for arm in range(n_arms):
        theta = 2.0 * math.pi * arm / n_arms
        prev = "n0"
        for h in range(1, hops + 1):
            nid = f"n{arm * hops + h}"
            nodes[nid] = _offset_point(center, h * step * math.cos(theta), h * step * math.sin(theta))
            links.append(RoadLink(f"l{idx}", prev, nid, "arterial" if h <= ring_hop else "residential"))
            idx += 1
            if h == ring_hop:
                ring_nodes.append(nid)
            prev = nid
    for i, nid in enumerate(ring_nodes):
        links.append(RoadLink(f"l{idx}", nid, ring_nodes[(i + 1) % len(ring_nodes)], "collector"))
        idx += 1
    return RoadNetwork(nodes, links)


def _diurnal_profile(rng: random.Random, avg_kw: float) -> tuple[float, tuple[float, ...]]:
    shape = [
        1.0 + 0.35 * math.sin(2.0 * math.pi * (h - 7.0) / 24.0) + 0.05 * rng.random()
        for h in range(_HOURS)
    ]
    mean_shape = sum(shape) / len(shape)
    profile = tuple(avg_kw * s / mean_shape for s in shape)
    return sum(profile) / len(profile), profile


def generate_scenario(
    seed: int,
    n_res: int = 500,
    n_sub: int = 3,
    grid_extent_km: float = 2.0,
    road_style: str = "grid",
) -> Scenario:
    """Deterministic synthetic scenario around a fixed mid-latitude anchor.

    Residences cluster within 60 m of road links; substations sit just
    outside the road extent; demands carry a diurnal 24 h profile whose mean
    is the stated average.
    """
    if n_res < 0 or n_sub < 1:
        raise ValidationError(f"bad generator arguments n_res={n_res} n_sub={n_sub}")
    if grid_extent_km <= 0:
        raise ValidationError(f"bad extent {grid_extent_km}")
    rng = random.Random(seed)
    anchor = GeoPoint(-77.2, 39.1)
    extent_m = grid_extent_km * 1000.0

    if road_style == "grid":
        roads = _grid_roads(anchor, extent_m)
    elif road_style == "radial":
        roads = _radial_roads(anchor, extent_m)
    else:
        raise ValidationError(f"unknown road style {road_style!r}")

    residences: list[Residence] = []
    for i in range(n_res):
        link = roads.links[rng.randrange(len(roads.links))]
        u = roads.nodes[link.u]
        v = roads.nodes[link.v]
        t = rng.uniform(0.08, 0.92)
        ex = math.radians(v.lon - u.lon) * math.cos(math.radians(u.lat)) * EARTH_RADIUS_M
        ny = math.radians(v.lat - u.lat) * EARTH_RADIUS_M
        norm = math.hypot(ex, ny)
        px, py = -ny / norm, ex / norm
        off = rng.gauss(0.0, 20.0)
        while abs(off) > 60.0:
            off = rng.gauss(0.0, 20.0)
        base = _offset_point(u, t * ex, t * ny)
        loc = _offset_point(base, off * px, off * py)
        avg, profile = _diurnal_profile(rng, rng.uniform(0.3, 5.0))
        residences.append(Residence(f"h{i}", loc, avg, profile))

    substations: list[Substation] = []
    center = _offset_point(anchor, extent_m / 2.0, extent_m / 2.0)
    ring = extent_m * 0.65
    for j in range(n_sub):
        theta = 2.0 * math.pi * j / n_sub + math.pi / 7.0
        substations.append(
            Substation(f"s{j}", _offset_point(center, ring * math.cos(theta), ring * math.sin(theta)))
        )

    scenario = Scenario(roads, substations, residences)
    validate_scenario(scenario)
    return scenario
