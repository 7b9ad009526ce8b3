"""Corridor and intersection mask construction.

Masks are the analysis zones trajectories get clipped to: a disc of
fixed radius around each intersection center, and road-corridor strips
(buffered centerlines) with the intersection discs punched out.  The
whole set shares one local projection whose origin defaults to the
centroid of the intersection centers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from shapely.geometry import LineString, Point as _ShPoint
from shapely.ops import unary_union

from . import geo
from .errors import InputError
from .geo import GeoPoint, PlanarPoint, Polygon, Polyline

DIRECTIONS = ("NB", "EB", "SB", "WB")
OPPOSITE = {"NB": "SB", "SB": "NB", "EB": "WB", "WB": "EB"}

#: Compass bearing of travel for each approach label (NB traffic heads north).
DIRECTION_BEARING = {"NB": 0.0, "EB": 90.0, "SB": 180.0, "WB": 270.0}

DEFAULT_RADIUS_M = 125.0
DEFAULT_HALF_WIDTH_M = 35.0
#: Half the intersection box; stop-bar reference points sit on this ring.
INTERSECTION_HALF_WIDTH_M = 25.0
#: Corridor fragments below this area are dropped as clipping slivers.
MIN_MASK_AREA_M2 = 10.0


def nearest_cardinal(bearing: float) -> str:
    """Nearest compass cardinal of a travel bearing, as an approach label."""
    return DIRECTIONS[int(round((bearing % 360.0) / 90.0)) % 4]


def bearing_of(dx: float, dy: float) -> float:
    """Compass bearing (degrees, 0=N, 90=E) of a planar direction vector."""
    return math.degrees(math.atan2(dx, dy)) % 360.0


def angular_diff(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


@dataclass(frozen=True)
class ApproachZone:
    """One entry side of an intersection.

    ``direction`` is the compass direction of travel of inbound vehicles
    (NB = northbound traffic entering from the south); ``entry_bearing``
    is that travel bearing in degrees.  ``stop_bar`` is the reference
    point queue distances are measured from.
    """

    direction: str
    entry_bearing: float
    stop_bar: PlanarPoint


@dataclass(frozen=True)
class Mask:
    id: str
    kind: str  # "corridor" | "intersection"
    geometry: Polygon
    intersection_id: str | None = None
    center: PlanarPoint | None = None
    approaches: tuple[ApproachZone, ...] = ()


@dataclass(frozen=True)
class MaskSet:
    masks: tuple[Mask, ...]
    origin: GeoPoint

    def __post_init__(self):
        ids = [m.id for m in self.masks]
        if len(set(ids)) != len(ids):
            raise InputError("mask ids must be unique")

    def intersection_masks(self) -> list[Mask]:
        return [m for m in self.masks if m.kind == "intersection"]

    def corridor_masks(self) -> list[Mask]:
        return [m for m in self.masks if m.kind == "corridor"]

    def by_id(self, mask_id: str) -> Mask:
        for m in self.masks:
            if m.id == mask_id:
                return m
        raise KeyError(mask_id)

    def for_intersection(self, intersection_id: str) -> Mask:
        for m in self.masks:
            if m.kind == "intersection" and m.intersection_id == intersection_id:
                return m
        raise KeyError(intersection_id)


def build_intersection_masks(centers: list[tuple[str, GeoPoint]],
                             radius: float = DEFAULT_RADIUS_M,
                             origin: GeoPoint | None = None) -> list[Mask]:
    """One circular mask (64-gon) per intersection center.

    ``origin`` fixes the local projection; when omitted it defaults to the
    centroid of the centers, which is also what build_mask_set uses.
    """
    if not radius > 0:
        raise InputError("radius must be positive")
    ids = [i for i, _ in centers]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate intersection id")
    if not centers:
        return []
    if origin is None:
        origin = centers_centroid([p for _, p in centers])
    planar = geo.project_to_local(origin, [p for _, p in centers])
    out = []
    for (iid, _), c in zip(centers, planar):
        out.append(Mask(id=iid, kind="intersection",
                        geometry=geo.buffer_circle(c, radius),
                        intersection_id=iid, center=c))
    return out


def centers_centroid(points: list[GeoPoint]) -> GeoPoint:
    return GeoPoint(sum(p.lon for p in points) / len(points),
                    sum(p.lat for p in points) / len(points))


def build_corridor_masks(centerlines: list[Polyline],
                         intersection_masks: list[Mask],
                         half_width: float = DEFAULT_HALF_WIDTH_M) -> list[Mask]:
    """Buffer the centerlines, merge them, and punch out the intersections.

    Each disjoint remaining piece becomes its own corridor mask; slivers
    below MIN_MASK_AREA_M2 are dropped.
    """
    if not centerlines:
        return []
    buffers = [geo.buffer_polyline(line, half_width) for line in centerlines]
    merged = unary_union([b.to_shapely() for b in buffers])
    clips = unary_union([m.geometry.to_shapely() for m in intersection_masks]) \
        if intersection_masks else None
    remaining = merged if clips is None else merged.difference(clips)
    pieces = geo._areal_pieces(remaining)
    masks = []
    for poly in pieces:
        if poly.area < MIN_MASK_AREA_M2:
            continue
        masks.append(Mask(id=f"corridor-{len(masks):03d}", kind="corridor",
                          geometry=poly))
    return masks


def _boundary_crossings(line: Polyline, mask: Mask) -> list[tuple[PlanarPoint, float]]:
    """(crossing point, inbound travel bearing) for each spot where the
    centerline crosses the mask boundary heading inward."""
    sh_poly = mask.geometry.to_shapely()
    boundary = sh_poly.exterior
    ls = LineString([(p.x, p.y) for p in line.vertices])
    inter = sh_poly.intersection(ls)
    if inter.is_empty:
        return []
    pieces = [inter] if inter.geom_type == "LineString" else [
        g for g in getattr(inter, "geoms", []) if g.geom_type == "LineString"]
    crossings = []
    for piece in pieces:
        coords = np.asarray(piece.coords)
        if len(coords) < 2:
            continue
        for end in (0, -1):
            pt = coords[end]
            if boundary.distance(_ShPoint(pt)) > 1e-6:
                continue  # line terminates inside the mask, not a crossing
            nxt = coords[1] if end == 0 else coords[-2]
            d = nxt - pt
            norm = math.hypot(*d)
            if norm <= 1e-9:
                continue
            crossings.append((PlanarPoint(*pt), bearing_of(d[0] / norm, d[1] / norm)))
    return crossings


def derive_approaches(mask: Mask, centerlines: list[Polyline]) -> Mask:
    """Fill a mask's approach zones from centerline boundary crossings.

    Each crossing yields an approach labeled by the nearest cardinal of
    the inbound travel bearing; the stop-bar reference sits on the inner
    intersection box (INTERSECTION_HALF_WIDTH_M from the center) on the
    side the traffic comes from.  When several crossings share a
    cardinal, the first one wins.
    """
    if mask.kind != "intersection":
        raise InputError("derive_approaches expects an intersection mask")
    crossings = []
    for line in centerlines:
        crossings.extend(_boundary_crossings(line, mask))
    if len(crossings) < 2:
        raise InputError(
            f"mask {mask.id}: {len(crossings)} boundary crossing(s); "
            "not an intersection geometry")
    center = mask.center or mask.geometry.centroid()
    zones: dict[str, ApproachZone] = {}
    for pt, bearing in crossings:
        label = nearest_cardinal(bearing)
        if label in zones:
            continue
        rad = math.radians(bearing)
        stop_bar = PlanarPoint(
            center.x - INTERSECTION_HALF_WIDTH_M * math.sin(rad),
            center.y - INTERSECTION_HALF_WIDTH_M * math.cos(rad))
        zones[label] = ApproachZone(direction=label, entry_bearing=bearing,
                                    stop_bar=stop_bar)
    ordered = tuple(zones[d] for d in DIRECTIONS if d in zones)
    return replace(mask, approaches=ordered)


def build_mask_set(road_lines: list[list[GeoPoint]],
                   intersections: list[tuple[str, GeoPoint]],
                   half_width: float = DEFAULT_HALF_WIDTH_M,
                   radius: float = DEFAULT_RADIUS_M) -> MaskSet:
    """End-to-end mask construction from geographic inputs."""
    if intersections:
        origin = centers_centroid([p for _, p in intersections])
    elif road_lines:
        pts = [p for line in road_lines for p in line]
        origin = centers_centroid(pts)
    else:
        raise InputError("no inputs to build masks from")

    centerlines = [Polyline(geo.project_to_local(origin, line)) for line in road_lines]
    inter_masks = build_intersection_masks(intersections, radius=radius, origin=origin)
    with_approaches = []
    for m in inter_masks:
        try:
            with_approaches.append(derive_approaches(m, centerlines))
        except InputError as exc:
            warnings.warn(f"approaches not derived for {m.id}: {exc}")
            with_approaches.append(m)
    corridors = build_corridor_masks(centerlines, inter_masks, half_width=half_width)
    return MaskSet(masks=tuple(with_approaches + corridors), origin=origin)


# ---------------------------------------------------------------------------
# GeoJSON interface
# ---------------------------------------------------------------------------

def read_roads_geojson(doc: dict) -> list[list[GeoPoint]]:
    lines = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        if geom.get("type") == "LineString":
            lines.append([GeoPoint(lon, lat) for lon, lat in geom["coordinates"]])
        elif geom.get("type") == "MultiLineString":
            for part in geom["coordinates"]:
                lines.append([GeoPoint(lon, lat) for lon, lat in part])
    if not lines:
        raise InputError("no LineString features in roads input")
    return lines


def read_intersections_geojson(doc: dict) -> list[tuple[str, GeoPoint]]:
    out = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            continue
        props = feat.get("properties") or {}
        iid = props.get("id")
        if iid is None:
            raise InputError("intersection Point feature missing 'id' property")
        lon, lat = geom["coordinates"]
        out.append((str(iid), GeoPoint(lon, lat)))
    if not out:
        raise InputError("no Point features in intersections input")
    return out


def mask_set_to_geojson(ms: MaskSet) -> dict:
    features = []
    for m in ms.masks:
        props: dict = {"id": m.id, "kind": m.kind, "intersection_id": m.intersection_id}
        if m.center is not None:
            c = geo.unproject_from_local(ms.origin, [m.center])[0]
            props["center"] = [c.lon, c.lat]
        if m.approaches:
            approaches = []
            for a in m.approaches:
                sb = geo.unproject_from_local(ms.origin, [a.stop_bar])[0]
                approaches.append({"direction": a.direction,
                                   "entry_bearing": a.entry_bearing,
                                   "stop_bar": [sb.lon, sb.lat]})
            props["approaches"] = approaches
        features.append({"type": "Feature", "properties": props,
                         "geometry": geo.polygon_to_geojson(m.geometry, ms.origin)})
    return {"type": "FeatureCollection",
            "projection_origin": [ms.origin.lon, ms.origin.lat],
            "features": features}


def mask_set_from_geojson(doc: dict) -> MaskSet:
    try:
        lon, lat = doc["projection_origin"]
    except (KeyError, ValueError) as exc:
        raise InputError("mask GeoJSON missing projection_origin") from exc
    origin = GeoPoint(lon, lat)
    masks = []
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        poly = geo.polygon_from_geojson(feat["geometry"], origin)
        center = None
        if props.get("center"):
            center = geo.project_to_local(origin, [GeoPoint(*props["center"])])[0]
        approaches = []
        for a in props.get("approaches", []) or []:
            sb = geo.project_to_local(origin, [GeoPoint(*a["stop_bar"])])[0]
            approaches.append(ApproachZone(direction=a["direction"],
                                           entry_bearing=float(a["entry_bearing"]),
                                           stop_bar=sb))
        masks.append(Mask(id=props["id"], kind=props["kind"], geometry=poly,
                          intersection_id=props.get("intersection_id"),
                          center=center, approaches=tuple(approaches)))
    return MaskSet(masks=tuple(masks), origin=origin)
