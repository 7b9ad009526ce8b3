"""Planar geometry kernel.

Everything downstream (masks, clipping, analytics) works in a local
tangent plane: an equirectangular projection centered on the region of
interest.  At county scale (<2 degrees of span) the distortion is far
below the buffer widths used here, so no geodetic machinery is needed.

Polygon booleans and polyline buffering are delegated to shapely (GEOS);
the types in this module stay plain frozen dataclasses so they can be
shared freely between worker processes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import shapely
from shapely.geometry import LineString, Point as _ShPoint, Polygon as _ShPolygon
from shapely.ops import unary_union

from .errors import InputError

EARTH_RADIUS_M = 6_371_000.0

#: Segments used to approximate a full circle in buffers and caps.
CIRCLE_SEGMENTS = 64


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 longitude/latitude pair, in degrees."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise InputError(f"non-finite coordinate: ({self.lon}, {self.lat})")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise InputError(f"coordinate out of range: ({self.lon}, {self.lat})")


@dataclass(frozen=True)
class PlanarPoint:
    """Meters east (x) and north (y) of the projection origin."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InputError(f"non-finite planar point: ({self.x}, {self.y})")

    def distance_to(self, other: "PlanarPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Polyline:
    """An ordered planar vertex chain with at least two distinct vertices."""

    vertices: tuple[PlanarPoint, ...]

    def __init__(self, vertices: Iterable[PlanarPoint]):
        vs = tuple(vertices)
        if len(vs) < 2:
            raise InputError("polyline needs at least 2 vertices")
        for a, b in zip(vs, vs[1:]):
            if a.distance_to(b) <= 1e-9:
                raise InputError("polyline has coincident consecutive vertices")
        object.__setattr__(self, "vertices", vs)

    def coords(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.vertices], dtype=float)

    def length(self) -> float:
        c = self.coords()
        return float(np.sum(np.hypot(*np.diff(c, axis=0).T)))


def _ring_area(coords: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise rings."""
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _normalize_ring(points: Sequence[PlanarPoint], ccw: bool) -> tuple[PlanarPoint, ...]:
    pts = list(points)
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    if len(pts) < 3:
        raise InputError("polygon ring needs at least 3 distinct vertices")
    coords = np.array([(p.x, p.y) for p in pts], dtype=float)
    area = _ring_area(coords)
    if abs(area) <= 0.0:
        raise InputError("polygon ring has zero area")
    if (area > 0) != ccw:
        pts.reverse()
    return tuple(pts)


@dataclass(frozen=True)
class Polygon:
    """A simple polygon with optional holes.

    The exterior ring is stored counter-clockwise and holes clockwise;
    rings are stored open (no repeated closing vertex).  Construction
    validates ring topology via GEOS, so downstream boolean operations
    can assume valid input.
    """

    exterior: tuple[PlanarPoint, ...]
    holes: tuple[tuple[PlanarPoint, ...], ...] = ()

    def __init__(self, exterior: Iterable[PlanarPoint], holes: Iterable[Iterable[PlanarPoint]] = ()):
        ext = _normalize_ring(tuple(exterior), ccw=True)
        hs = tuple(_normalize_ring(tuple(h), ccw=False) for h in holes)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", hs)
        sh = self._build_shapely()
        if not sh.is_valid:
            raise InputError(f"invalid ring topology: {shapely.is_valid_reason(sh)}")
        object.__setattr__(self, "_sh", sh)

    def _build_shapely(self) -> _ShPolygon:
        return _ShPolygon(
            [(p.x, p.y) for p in self.exterior],
            [[(p.x, p.y) for p in h] for h in self.holes],
        )

    def to_shapely(self) -> _ShPolygon:
        return self._sh  # type: ignore[attr-defined]

    @classmethod
    def from_shapely(cls, sh: _ShPolygon) -> "Polygon":
        ext = [PlanarPoint(x, y) for x, y in sh.exterior.coords]
        holes = [[PlanarPoint(x, y) for x, y in ring.coords] for ring in sh.interiors]
        return cls(ext, holes)

    @property
    def area(self) -> float:
        return float(self.to_shapely().area)

    def centroid(self) -> PlanarPoint:
        c = self.to_shapely().centroid
        return PlanarPoint(c.x, c.y)

    def bounds(self) -> tuple[float, float, float, float]:
        return self.to_shapely().bounds


def project_to_local(origin: GeoPoint, points: Sequence[GeoPoint]) -> list[PlanarPoint]:
    """Project lon/lat points onto the tangent plane at ``origin``.

    Equirectangular: x scales longitude by cos(origin latitude), y scales
    latitude; both through the mean Earth radius.  The inverse is
    :func:`unproject_from_local` and round-trips to well below 1e-9 deg.
    """
    if not -90.0 < origin.lat < 90.0:
        raise InputError("projection origin latitude must be strictly inside (-90, 90)")
    kx = EARTH_RADIUS_M * math.pi / 180.0 * math.cos(math.radians(origin.lat))
    ky = EARTH_RADIUS_M * math.pi / 180.0
    return [PlanarPoint((p.lon - origin.lon) * kx, (p.lat - origin.lat) * ky) for p in points]


def unproject_from_local(origin: GeoPoint, points: Sequence[PlanarPoint]) -> list[GeoPoint]:
    """Inverse of :func:`project_to_local`."""
    if not -90.0 < origin.lat < 90.0:
        raise InputError("projection origin latitude must be strictly inside (-90, 90)")
    kx = EARTH_RADIUS_M * math.pi / 180.0 * math.cos(math.radians(origin.lat))
    ky = EARTH_RADIUS_M * math.pi / 180.0
    return [GeoPoint(origin.lon + p.x / kx, origin.lat + p.y / ky) for p in points]


def buffer_polyline(line: Polyline, half_width: float) -> Polygon:
    """Buffer a polyline by ``half_width`` meters with rounded caps.

    The result is the Minkowski sum of the line with a disc, the disc
    approximated by a 64-gon (16 segments per quadrant), so the polygonal
    boundary undershoots the true offset by at most ~0.12% of the width.
    """
    if not half_width > 0:
        raise InputError("half_width must be positive")
    ls = LineString([(p.x, p.y) for p in line.vertices])
    if ls.length <= 1e-9:
        raise InputError("degenerate polyline")
    buf = ls.buffer(half_width, quad_segs=CIRCLE_SEGMENTS // 4,
                    cap_style="round", join_style="round")
    if buf.geom_type != "Polygon":
        buf = max(buf.geoms, key=lambda g: g.area)
    return Polygon.from_shapely(buf)


def buffer_circle(center: PlanarPoint, radius: float) -> Polygon:
    """A regular 64-gon inscribed in the circle of the given radius."""
    if not radius > 0:
        raise InputError("radius must be positive")
    theta = 2.0 * math.pi * np.arange(CIRCLE_SEGMENTS) / CIRCLE_SEGMENTS
    pts = [PlanarPoint(center.x + radius * math.cos(t), center.y + radius * math.sin(t))
           for t in theta]
    return Polygon(pts)


def _areal_pieces(sh) -> list[Polygon]:
    if sh.is_empty:
        return []
    if sh.geom_type == "Polygon":
        return [Polygon.from_shapely(sh)]
    pieces = []
    for g in getattr(sh, "geoms", []):
        if g.geom_type == "Polygon" and g.area > 0:
            pieces.append(Polygon.from_shapely(g))
    return pieces


def clip_difference(subject: Polygon, clips: Sequence[Polygon]) -> list[Polygon]:
    """Subtract the union of ``clips`` from ``subject``.

    Returns the remaining pieces as disjoint polygons (possibly empty).
    """
    if not clips:
        return [subject]
    union = unary_union([c.to_shapely() for c in clips])
    return _areal_pieces(subject.to_shapely().difference(union))


def intersection_area(a: Polygon, b: Polygon) -> float:
    return float(a.to_shapely().intersection(b.to_shapely()).area)


#: Points this close to the boundary count as inside, so interpolated
#: crossing samples never fall out by a rounding ulp.
BOUNDARY_EPS = 1e-9


def point_in_polygon(p: PlanarPoint, poly: Polygon) -> bool:
    """Containment test; boundary points count as inside."""
    sh = poly.to_shapely()
    pt = _ShPoint(p.x, p.y)
    return bool(sh.covers(pt)) or sh.distance(pt) <= BOUNDARY_EPS


def points_in_polygon(xy: np.ndarray, poly: Polygon) -> np.ndarray:
    """Vectorized :func:`point_in_polygon` over an (n, 2) array."""
    pts = shapely.points(np.asarray(xy, dtype=float))
    sh = poly.to_shapely()
    out = shapely.covers(sh, pts)
    near = ~out
    if near.any():
        out[near] = shapely.distance(sh, pts[near]) <= BOUNDARY_EPS
    return out


def _segment_inside_intervals(p0: np.ndarray, p1: np.ndarray, poly: Polygon) -> list[tuple[float, float]]:
    """Parameter intervals of segment p0->p1 lying inside ``poly``.

    Parameters are in [0, 1] along the segment.  Zero-length grazing
    touches are dropped; boundary-inclusive elsewhere.
    """
    seg = LineString([tuple(p0), tuple(p1)])
    if seg.length <= 0:
        return [(0.0, 1.0)] if point_in_polygon(PlanarPoint(*p0), poly) else []
    inter = poly.to_shapely().intersection(seg)
    if inter.is_empty:
        return []
    d = p1 - p0
    dd = float(d @ d)
    pieces = [inter] if inter.geom_type == "LineString" else [
        g for g in getattr(inter, "geoms", []) if g.geom_type == "LineString"
    ]
    out = []
    for piece in pieces:
        ts = [float((np.asarray(c) - p0) @ d / dd) for c in piece.coords]
        lo, hi = max(0.0, min(ts)), min(1.0, max(ts))
        if hi - lo > 1e-12:
            out.append((lo, hi))
    out.sort()
    return out


def clip_journey(journey, poly: Polygon) -> list:
    """Clip a journey to a polygon, splitting at boundary crossings.

    Returns the maximal contiguous sub-journeys inside ``poly``.  Where a
    segment between consecutive samples crosses the boundary, a synthetic
    sample is inserted at the crossing with time, position, and speed
    interpolated linearly.  Sub-journeys keep the parent id and are
    numbered by ``part``.

    Samples must carry planar positions (``xy``); see ingest.clip_to_masks.
    """
    samples = journey.samples
    if any(s.xy is None for s in samples):
        raise InputError("clip_journey requires projected samples (xy set)")
    ts = np.array([s.t for s in samples], dtype=float)
    xy = np.array([(s.xy.x, s.xy.y) for s in samples], dtype=float)

    # Inside-intervals in absolute time over the whole piecewise-linear path.
    intervals: list[tuple[float, float]] = []
    minx, miny, maxx, maxy = poly.bounds()
    for i in range(len(samples) - 1):
        lo_x, hi_x = sorted((xy[i, 0], xy[i + 1, 0]))
        lo_y, hi_y = sorted((xy[i, 1], xy[i + 1, 1]))
        if hi_x < minx or lo_x > maxx or hi_y < miny or lo_y > maxy:
            continue
        t0, t1 = ts[i], ts[i + 1]
        for a, b in _segment_inside_intervals(xy[i], xy[i + 1], poly):
            intervals.append((t0 + a * (t1 - t0), t0 + b * (t1 - t0)))

    if not intervals:
        return []
    # Merge touching intervals (shared sample points produce exact touches).
    intervals.sort()
    merged = [intervals[0]]
    for a, b in intervals[1:]:
        pa, pb = merged[-1]
        if a <= pb + 1e-9:
            merged[-1] = (pa, max(pb, b))
        else:
            merged.append((a, b))

    def sample_at(t: float):
        """Synthesize a sample at absolute time t by linear interpolation."""
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = max(0, min(i, len(samples) - 2))
        t0, t1 = ts[i], ts[i + 1]
        f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        s0, s1 = samples[i], samples[i + 1]
        x = s0.xy.x + f * (s1.xy.x - s0.xy.x)
        y = s0.xy.y + f * (s1.xy.y - s0.xy.y)
        lon = s0.pos.lon + f * (s1.pos.lon - s0.pos.lon)
        lat = s0.pos.lat + f * (s1.pos.lat - s0.pos.lat)
        if s0.speed is None or s1.speed is None:
            speed = s0.speed if s1.speed is None else s1.speed
        else:
            speed = s0.speed + f * (s1.speed - s0.speed)
        return dataclasses.replace(
            s0, t=t, pos=GeoPoint(lon, lat), xy=PlanarPoint(x, y), speed=speed)

    fragments = []
    for a, b in merged:
        if b - a <= 1e-9:
            continue  # grazing touch, no dwell inside
        inner = [s for s, t in zip(samples, ts) if a < t < b]
        first = samples[int(np.searchsorted(ts, a))] if a in ts else sample_at(a)
        last = samples[int(np.searchsorted(ts, b))] if b in ts else sample_at(b)
        frag_samples = [first] + inner + [last]
        # Guard against duplicated endpoints when a crossing lands on a sample.
        dedup = [frag_samples[0]]
        for s in frag_samples[1:]:
            if s.t > dedup[-1].t + 1e-12:
                dedup.append(s)
        if len(dedup) < 2:
            continue
        fragments.append(dataclasses.replace(
            journey, samples=tuple(dedup), part=len(fragments)))
    return fragments


def time_inside(journey, poly: Polygon) -> float:
    """Total time the piecewise-linear motion spends inside ``poly``."""
    samples = journey.samples
    ts = np.array([s.t for s in samples], dtype=float)
    xy = np.array([(s.xy.x, s.xy.y) for s in samples], dtype=float)
    total = 0.0
    for i in range(len(samples) - 1):
        dt = ts[i + 1] - ts[i]
        for a, b in _segment_inside_intervals(xy[i], xy[i + 1], poly):
            total += (b - a) * dt
    return total


# ---------------------------------------------------------------------------
# GeoJSON conversion (geometry level; FeatureCollections live in masks)
# ---------------------------------------------------------------------------

def polygon_to_geojson(poly: Polygon, origin: GeoPoint) -> dict:
    """Serialize to a GeoJSON Polygon in WGS84 (rings closed)."""
    def ring(points):
        geos = unproject_from_local(origin, list(points) + [points[0]])
        return [[g.lon, g.lat] for g in geos]
    return {"type": "Polygon",
            "coordinates": [ring(poly.exterior)] + [ring(h) for h in poly.holes]}


def polygon_from_geojson(geom: dict, origin: GeoPoint) -> Polygon:
    if geom.get("type") != "Polygon":
        raise InputError(f"expected Polygon geometry, got {geom.get('type')}")
    rings = []
    for ring in geom["coordinates"]:
        pts = project_to_local(origin, [GeoPoint(lon, lat) for lon, lat in ring])
        rings.append(pts)
    return Polygon(rings[0], rings[1:])


def polygons_to_geojson(polys: Sequence[Polygon], origin: GeoPoint) -> dict:
    """Serialize several polygons as one GeoJSON MultiPolygon."""
    return {"type": "MultiPolygon",
            "coordinates": [polygon_to_geojson(p, origin)["coordinates"]
                            for p in polys]}


def polygons_from_geojson(geom: dict, origin: GeoPoint) -> list[Polygon]:
    """Parse a Polygon or MultiPolygon geometry into polygon pieces."""
    if geom.get("type") == "Polygon":
        return [polygon_from_geojson(geom, origin)]
    if geom.get("type") != "MultiPolygon":
        raise InputError(f"expected (Multi)Polygon, got {geom.get('type')}")
    return [polygon_from_geojson({"type": "Polygon", "coordinates": c}, origin)
            for c in geom["coordinates"]]


def polyline_to_geojson(line: Polyline, origin: GeoPoint) -> dict:
    geos = unproject_from_local(origin, list(line.vertices))
    return {"type": "LineString", "coordinates": [[g.lon, g.lat] for g in geos]}


def polyline_from_geojson(geom: dict, origin: GeoPoint) -> Polyline:
    if geom.get("type") != "LineString":
        raise InputError(f"expected LineString geometry, got {geom.get('type')}")
    pts = project_to_local(origin, [GeoPoint(lon, lat) for lon, lat in geom["coordinates"]])
    return Polyline(pts)
