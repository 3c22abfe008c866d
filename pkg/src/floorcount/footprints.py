"""Building footprints with LoD2 attributes and a uniform-grid spatial index."""
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRing, EmptyCollection, InvalidValue, MalformedDocument
from .geo import METERS_PER_DEG, project_local, unproject_local

log = logging.getLogger(__name__)

ROOF_TYPES = ("flat", "nonflat", "unknown")
FUNCTIONS = ("residential", "commercial", "other", "unknown")
DEFAULT_CELL_SIZE_DEG = 0.005

_FLOOR_KEYS = ("floors", "floor_count", "storeysAboveGround")
_HEIGHT_KEYS = ("height_m", "measuredHeight", "height")
_ROOF_KEYS = ("roof_type", "roofType")


@dataclass(frozen=True)
class Footprint:
    id: str
    exterior: tuple  # closed ring of (lon, lat), counter-clockwise
    floor_count: int | None = None
    height_m: float | None = None
    roof_type: str = "unknown"
    function: str = "unknown"

    @property
    def vertices(self):
        """Ring vertices without the closing duplicate, as an (n, 2) array."""
        return np.asarray(self.exterior[:-1], dtype=float)

    def bbox(self):
        v = self.vertices
        return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    def to_feature(self):
        props = {"roof_type": self.roof_type, "function": self.function}
        if self.floor_count is not None:
            props["floors"] = self.floor_count
        if self.height_m is not None:
            props["height_m"] = self.height_m
        return {
            "type": "Feature",
            "id": self.id,
            "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [[list(p) for p in self.exterior]]},
        }


def signed_area(ring):
    """Shoelace signed area of an (n, 2) vertex array (open or closed); > 0 means CCW."""
    v = np.asarray(ring, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def segments_intersect(a, b, c, d):
    """Closed-segment intersection test (touching and collinear overlap count)."""
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0 > o2) or (o1 < 0 < o2)) and ((o3 > 0 > o4) or (o3 < 0 < o4)):
        return True
    return ((o1 == 0 and _on_segment(a, b, c)) or (o2 == 0 and _on_segment(a, b, d))
            or (o3 == 0 and _on_segment(c, d, a)) or (o4 == 0 and _on_segment(c, d, b)))


def is_simple(vertices):
    """True when the open vertex list describes a non-self-intersecting ring."""
    n = len(vertices)
    edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent edges share exactly one vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def normalize_ring(coords):
    """Validate a ring and return it closed and counter-clockwise.

    Raises :class:`InvalidValue` for too few vertices or self-intersection and
    :class:`DegenerateRing` for zero area.
    """
    pts = [(float(p[0]), float(p[1])) for p in coords]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    # drop consecutive duplicates
    dedup = [p for i, p in enumerate(pts) if i == 0 or p != pts[i - 1]]
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    if len(set(dedup)) < 3:
        raise InvalidValue("exterior", len(dedup), "ring needs at least 3 distinct vertices")
    if not all(math.isfinite(c) for p in dedup for c in p):
        raise InvalidValue("exterior", "non-finite coordinate")
    if not is_simple(dedup):
        raise InvalidValue("exterior", "self-intersecting ring")
    area = signed_area(dedup)
    if area == 0.0:
        raise DegenerateRing("ring has zero area")
    if area < 0:
        dedup.reverse()
    return tuple(dedup) + (dedup[0],)


def _roof(value):
    if value is None:
        return "unknown"
    s = str(value).strip().lower().replace("-", "").replace("_", "")
    if s in ("flat", "flachdach", "1000"):
        return "flat"
    if s in ("nonflat", "pitched", "hipped", "gabled"):
        return "nonflat"
    # any other ALKIS roof-form code (2100 gable, 3100 hip, ...) is non-flat
    if s.isdigit():
        return "nonflat"
    return "unknown"


def _function(value):
    if value is None:
        return "unknown"
    s = str(value).strip().lower()
    if s in FUNCTIONS:
        return s
    # ALKIS building-function codes: 31001_1xxx residential, 31001_2xxx commerce/industry
    if s.startswith("31001_1"):
        return "residential"
    if s.startswith("31001_2"):
        return "commercial"
    return "other"


def _lookup(props, keys):
    for k in keys:
        if props.get(k) is not None:
            return props[k]
    return None


def feature_to_footprint(feature, index=0):
    if not isinstance(feature, dict):
        raise InvalidValue("feature", type(feature).__name__)
    props = feature.get("properties") or {}
    fid = feature.get("id", props.get("id"))
    fid = str(index) if fid is None else str(fid)
    geom = feature.get("geometry")
    if not isinstance(geom, dict):
        raise InvalidValue("geometry", geom)
    gtype = geom.get("type")
    coords = geom.get("coordinates")
    if gtype == "MultiPolygon" and isinstance(coords, list) and len(coords) == 1:
        gtype, coords = "Polygon", coords[0]
    if gtype != "Polygon" or not isinstance(coords, list) or not coords:
        raise InvalidValue("geometry", gtype, "expected a single Polygon")
    if len(coords) > 1:
        log.warning("footprint %s: ignoring %d interior ring(s)", fid, len(coords) - 1)
    try:
        ring = normalize_ring(coords[0])
    except (TypeError, IndexError, ValueError):
        raise InvalidValue("exterior", coords[0]) from None

    floors = _lookup(props, _FLOOR_KEYS)
    if floors is not None:
        floors = int(floors)
        if floors < 1:
            raise InvalidValue("floors", floors, "must be >= 1")
    height = _lookup(props, _HEIGHT_KEYS)
    if height is not None:
        height = float(height)
        if not height > 0:
            raise InvalidValue("height_m", height, "must be > 0")
    return Footprint(
        id=fid,
        exterior=ring,
        floor_count=floors,
        height_m=height,
        roof_type=_roof(_lookup(props, _ROOF_KEYS)),
        function=_function(props.get("function")),
    )


class SpatialIndex:
    """Uniform lon/lat grid mapping cells to the footprints whose bbox overlaps them."""

    def __init__(self, footprints, cell_size_deg=DEFAULT_CELL_SIZE_DEG):
        if not cell_size_deg > 0:
            raise InvalidValue("cell_size_deg", cell_size_deg)
        self.cell_size_deg = float(cell_size_deg)
        self.cells = defaultdict(list)
        for fp in footprints:
            for cell in self._cells_for_bbox(fp.bbox()):
                self.cells[cell].append(fp.id)
        self.cells = dict(self.cells)

    def _cells_for_bbox(self, bbox):
        s = self.cell_size_deg
        lon_min, lat_min, lon_max, lat_max = bbox
        i0, i1 = math.floor(lon_min / s), math.floor(lon_max / s)
        j0, j1 = math.floor(lat_min / s), math.floor(lat_max / s)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                yield (i, j)

    def candidates(self, bbox):
        """Ids whose bbox may overlap ``bbox`` (a superset of the true answer)."""
        out = set()
        for cell in self._cells_for_bbox(bbox):
            out.update(self.cells.get(cell, ()))
        return out


def point_in_ring(x, y, ring_xy):
    """Even-odd crossing test; ``ring_xy`` is an open (n, 2) array."""
    xs, ys = ring_xy[:, 0], ring_xy[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    straddle = (ys > y) != (yn > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = xs + (y - ys) * (xn - xs) / (yn - ys)
    return bool(np.count_nonzero(straddle & (x < x_cross)) % 2)


def distance_to_ring(x, y, ring_xy):
    """Minimum distance from (x, y) to the boundary segments of an open ring."""
    a = ring_xy
    b = np.roll(ring_xy, -1, axis=0)
    ab = b - a
    ap = np.array([x, y]) - a
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.hypot(closest[:, 0] - x, closest[:, 1] - y)))


def intersects_circle(fp, center, radius_m):
    """Exact polygon/disc intersection test on the tangent plane at ``center``."""
    ring = project_local(center, fp.vertices)
    if point_in_ring(0.0, 0.0, ring):
        return True
    return distance_to_ring(0.0, 0.0, ring) <= radius_m


def buffer_bbox(center, radius_m):
    lon, lat = center
    dlat = radius_m / METERS_PER_DEG
    dlon = radius_m / (METERS_PER_DEG * math.cos(math.radians(lat)))
    # pad against rounding at cell edges; the exact test removes extras
    pad = 1e-9
    return (lon - dlon - pad, lat - dlat - pad, lon + dlon + pad, lat + dlat + pad)


class FootprintStore:
    """Immutable collection of footprints plus their spatial index."""

    def __init__(self, footprints, cell_size_deg=DEFAULT_CELL_SIZE_DEG, issues=()):
        self._by_id = {}
        for fp in footprints:
            self._by_id[fp.id] = fp
        self.index = SpatialIndex(self._by_id.values(), cell_size_deg)
        self.issues = tuple(issues)

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())

    def __contains__(self, fid):
        return fid in self._by_id

    def __getitem__(self, fid):
        return self._by_id[fid]

    @property
    def footprints(self):
        return list(self._by_id.values())

    def query_buffer(self, center, radius_m):
        """Footprints whose polygon intersects the circle of ``radius_m`` about ``center``.

        Results are ordered by id for determinism.
        """
        if not radius_m > 0:
            raise InvalidValue("radius_m", radius_m, "must be > 0")
        ids = self.index.candidates(buffer_bbox(center, radius_m))
        hits = [self._by_id[i] for i in ids if intersects_circle(self._by_id[i], center, radius_m)]
        return sorted(hits, key=lambda fp: fp.id)

    def to_geojson(self):
        doc = {
            "type": "FeatureCollection",
            "cell_size_deg": self.index.cell_size_deg,
            "features": [fp.to_feature() for fp in self._by_id.values()],
        }
        return json.dumps(doc, sort_keys=True) + "\n"


def load_footprints(document, cell_size_deg=None):
    """Parse a GeoJSON FeatureCollection into a :class:`FootprintStore`.

    Invalid features are skipped and recorded in ``store.issues`` as
    ``(index, id, message)`` tuples. Duplicate ids keep the first feature.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"footprints are not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedDocument("expected a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise MalformedDocument("FeatureCollection has no 'features' array")
    if not features:
        raise EmptyCollection("FeatureCollection has no features")
    if cell_size_deg is None:
        cell_size_deg = doc.get("cell_size_deg", DEFAULT_CELL_SIZE_DEG)

    footprints, issues, seen = [], [], set()
    for i, feat in enumerate(features):
        fid = feat.get("id") if isinstance(feat, dict) else None
        try:
            fp = feature_to_footprint(feat, i)
        except (InvalidValue, DegenerateRing, TypeError, ValueError) as exc:
            log.warning("skipping feature %d (%s): %s", i, fid, exc)
            issues.append((i, None if fid is None else str(fid), str(exc)))
            continue
        if fp.id in seen:
            log.warning("skipping feature %d: duplicate id %s", i, fp.id)
            issues.append((i, fp.id, "duplicate id"))
            continue
        seen.add(fp.id)
        footprints.append(fp)
    if not footprints:
        raise EmptyCollection("no valid footprints in collection")
    return FootprintStore(footprints, cell_size_deg, issues)


def centroid(fp):
    """Area centroid of the footprint, computed on the tangent plane and returned as (lon, lat)."""
    ref = tuple(fp.exterior[0])
    xy = project_local(ref, fp.vertices)
    # shift to the vertex mean to keep the cross products well conditioned
    shift = xy.mean(axis=0)
    x, y = xy[:, 0] - shift[0], xy[:, 1] - shift[1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        raise DegenerateRing(f"footprint {fp.id} has zero area")
    cx = ((x + xn) * cross).sum() / (6.0 * area) + shift[0]
    cy = ((y + yn) * cross).sum() / (6.0 * area) + shift[1]
    lon, lat = unproject_local(ref, (cx, cy))
    return (float(lon), float(lat))
