"""Geodesic primitives and a quad-tree spatial index.

Coordinates are WGS84 lon/lat in degrees. Distances are meters on a sphere
of radius EARTH_RADIUS_M. Everything here is deterministic and pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

EARTH_RADIUS_M = 6_371_008.8

# side_of() results
LEFT = 1
RIGHT = -1
ON = 0

_COLLINEAR_EPS = 1e-12  # cross-product threshold, degrees^2


@dataclass(frozen=True)
class GeoPoint:
    """A lon/lat position in degrees."""

    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValidationError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise ValidationError(f"coordinate out of range ({self.lon}, {self.lat})")


@dataclass(frozen=True)
class Segment:
    """A straight link between two distinct points."""

    a: GeoPoint
    b: GeoPoint

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValidationError(f"degenerate segment at ({self.a.lon}, {self.a.lat})")

    def reversed(self) -> "Segment":
        return Segment(self.b, self.a)


def geodesic_distance(p: GeoPoint, q: GeoPoint) -> float:
    """Haversine distance in meters."""
    phi1 = math.radians(p.lat)
    phi2 = math.radians(q.lat)
    dphi = phi2 - phi1
    dlam = math.radians(q.lon - p.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _unit_vector(p: GeoPoint) -> tuple[float, float, float]:
    phi = math.radians(p.lat)
    lam = math.radians(p.lon)
    return (math.cos(phi) * math.cos(lam), math.cos(phi) * math.sin(lam), math.sin(phi))


def _from_unit_vector(x: float, y: float, z: float) -> GeoPoint:
    lat = math.degrees(math.asin(max(-1.0, min(1.0, z))))
    lon = math.degrees(math.atan2(y, x))
    return GeoPoint(lon, lat)


def interpolate_along(s: Segment, k: int) -> list[GeoPoint]:
    """k points on s at fractions i/(k+1) of its length, i = 1..k.

    Interpolation follows the great circle through the endpoints, so
    consecutive points are equally spaced in geodesic distance.
    """
    if k < 0:
        raise ValidationError(f"cannot interpolate {k} points")
    ax, ay, az = _unit_vector(s.a)
    bx, by, bz = _unit_vector(s.b)
    dot = max(-1.0, min(1.0, ax * bx + ay * by + az * bz))
    cx, cy, cz = ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx
    omega = math.atan2(math.hypot(cx, cy, cz), dot)
    out = []
    for i in range(1, k + 1):
        t = i / (k + 1)
        if omega < 1e-12:
            x = ax + t * (bx - ax)
            y = ay + t * (by - ay)
            z = az + t * (bz - az)
        else:
            wa = math.sin((1.0 - t) * omega) / math.sin(omega)
            wb = math.sin(t * omega) / math.sin(omega)
            x = wa * ax + wb * bx
            y = wa * ay + wb * by
            z = wa * az + wb * bz
        norm = math.sqrt(x * x + y * y + z * z)
        out.append(_from_unit_vector(x / norm, y / norm, z / norm))
    return out


def _local_xy(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection, meters, centered at origin."""
    c = max(math.cos(math.radians(origin.lat)), 1e-12)
    x = math.radians(p.lon - origin.lon) * c * EARTH_RADIUS_M
    y = math.radians(p.lat - origin.lat) * EARTH_RADIUS_M
    return x, y


def point_segment_distance(p: GeoPoint, s: Segment) -> float:
    """Meters from p to the nearest point of s.

    The foot point is found in a local plane centered at p, then measured
    geodesically. Never exceeds the distance to either endpoint.
    """
    lat0 = math.radians(p.lat)
    ax, ay = _local_xy(s.a, p)
    bx, by = _local_xy(s.b, p)
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom <= 0.0:
        t = 0.0
    else:
        t = max(0.0, min(1.0, -(ax * dx + ay * dy) / denom))
    fx, fy = ax + t * dx, ay + t * dy
    c = max(math.cos(lat0), 1e-12)
    foot = GeoPoint(
        p.lon + math.degrees(fx / (EARTH_RADIUS_M * c)),
        max(-90.0, min(90.0, p.lat + math.degrees(fy / EARTH_RADIUS_M))),
    )
    d = geodesic_distance(p, foot)
    return min(d, geodesic_distance(p, s.a), geodesic_distance(p, s.b))


def side_of(p: GeoPoint, s: Segment) -> int:
    """LEFT, RIGHT, or ON relative to the directed segment a->b.

    Sign of the 2-D cross product in a local equirectangular plane;
    |cross| below 1e-12 (degrees^2) counts as ON.
    """
    c = math.cos(math.radians(0.5 * (s.a.lat + s.b.lat)))
    ux = (s.b.lon - s.a.lon) * c
    uy = s.b.lat - s.a.lat
    vx = (p.lon - s.a.lon) * c
    vy = p.lat - s.a.lat
    cross = ux * vy - uy * vx
    if abs(cross) < _COLLINEAR_EPS:
        return ON
    return LEFT if cross > 0.0 else RIGHT


@dataclass(frozen=True)
class BBox:
    """Closed lon/lat rectangle."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self) -> None:
        if self.min_lon > self.max_lon or self.min_lat > self.max_lat:
            raise ValidationError("inverted bounding box")

    def intersects(self, other: "BBox") -> bool:
        return not (
            other.min_lon > self.max_lon
            or other.max_lon < self.min_lon
            or other.min_lat > self.max_lat
            or other.max_lat < self.min_lat
        )

    def contains(self, other: "BBox") -> bool:
        return (
            self.min_lon <= other.min_lon
            and self.max_lon >= other.max_lon
            and self.min_lat <= other.min_lat
            and self.max_lat >= other.max_lat
        )

    @staticmethod
    def around(points: list[GeoPoint]) -> "BBox":
        if not points:
            raise ValidationError("bounding box of no points")
        return BBox(
            min(p.lon for p in points),
            min(p.lat for p in points),
            max(p.lon for p in points),
            max(p.lat for p in points),
        )

    def padded_m(self, meters: float) -> "BBox":
        """Expand every side by a meter distance, converted conservatively.

        The longitude expansion uses the highest-latitude edge of the box so
        the padded box covers at least `meters` of ground everywhere in it.
        """
        dlat = math.degrees(meters / EARTH_RADIUS_M)
        worst = max(abs(self.min_lat - dlat), abs(self.max_lat + dlat))
        c = max(math.cos(math.radians(min(worst, 89.9))), 1e-12)
        dlon = math.degrees(meters / (EARTH_RADIUS_M * c))
        return BBox(
            max(-180.0, self.min_lon - dlon),
            max(-90.0, self.min_lat - dlat),
            min(180.0, self.max_lon + dlon),
            min(90.0, self.max_lat + dlat),
        )


def segment_bbox(s: Segment, padding_m: float = 0.0) -> BBox:
    box = BBox.around([s.a, s.b])
    return box.padded_m(padding_m) if padding_m > 0.0 else box


class _QTNode:
    __slots__ = ("box", "depth", "entries", "children")

    def __init__(self, box: BBox, depth: int) -> None:
        self.box = box
        self.depth = depth
        self.entries: list[tuple[int, object, BBox]] = []  # (seq, id, box)
        self.children: list["_QTNode"] | None = None

    def _quadrants(self) -> list[BBox]:
        mx = 0.5 * (self.box.min_lon + self.box.max_lon)
        my = 0.5 * (self.box.min_lat + self.box.max_lat)
        b = self.box
        return [
            BBox(b.min_lon, b.min_lat, mx, my),
            BBox(mx, b.min_lat, b.max_lon, my),
            BBox(b.min_lon, my, mx, b.max_lat),
            BBox(mx, my, b.max_lon, b.max_lat),
        ]


class SpatialIndex:
    """Quad-tree over bounding boxes.

    Entries live at the deepest node whose quadrant fully contains them, so
    each entry is stored exactly once and query(b) returns exactly the
    entries whose box intersects b.
    """

    LEAF_CAPACITY = 16
    MAX_DEPTH = 20

    def __init__(self, bounds: BBox, padding_m: float = 0.0) -> None:
        self.root = _QTNode(bounds, 0)
        self.padding_m = padding_m
        self._count = 0

    def insert(self, entry_id: object, box: BBox) -> None:
        self._insert(self.root, self._count, entry_id, box)
        self._count += 1

    def _insert(self, node: _QTNode, seq: int, entry_id: object, box: BBox) -> None:
        while True:
            if node.children is None:
                node.entries.append((seq, entry_id, box))
                if len(node.entries) > self.LEAF_CAPACITY and node.depth < self.MAX_DEPTH:
                    self._split(node)
                return
            child = self._fitting_child(node, box)
            if child is None:
                node.entries.append((seq, entry_id, box))
                return
            node = child

    def _fitting_child(self, node: _QTNode, box: BBox) -> _QTNode | None:
        assert node.children is not None
        for child in node.children:
            if child.box.contains(box):
                return child
        return None

    def _split(self, node: _QTNode) -> None:
        node.children = [_QTNode(q, node.depth + 1) for q in node._quadrants()]
        staying = []
        for seq, eid, box in node.entries:
            child = self._fitting_child(node, box)
            if child is None:
                staying.append((seq, eid, box))
            else:
                child.entries.append((seq, eid, box))
        node.entries = staying

    def query(self, box: BBox) -> list[object]:
        """Ids of all stored entries whose box intersects the query box."""
        hits: list[tuple[int, object]] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.box.intersects(box):
                continue
            for seq, eid, ebox in node.entries:
                if ebox.intersects(box):
                    hits.append((seq, eid))
            if node.children is not None:
                stack.extend(node.children)
        hits.sort(key=lambda t: t[0])
        return [eid for _, eid in hits]

    def __len__(self) -> int:
        return self._count


def index_links(links: list[tuple[object, Segment]], padding_m: float = 100.0) -> SpatialIndex:
    """Spatial index over road links, each padded by padding_m meters."""
    if not links:
        raise ValidationError("cannot index an empty link set")
    boxes = [(lid, segment_bbox(seg, padding_m)) for lid, seg in links]
    bounds = BBox(
        min(b.min_lon for _, b in boxes),
        min(b.min_lat for _, b in boxes),
        max(b.max_lon for _, b in boxes),
        max(b.max_lat for _, b in boxes),
    )
    idx = SpatialIndex(bounds, padding_m=padding_m)
    for lid, box in boxes:
        idx.insert(lid, box)
    return idx
