"""Street-level image metadata: parsing, filtering and GPX export.

Records are JSON objects. The flat schema is::

    {"id": "123", "captured_at": "2021-06-01T10:15:00Z", "lon": 11.57, "lat": 48.14,
     "heading": 92.5, "camera_type": "perspective", "quality_score": 0.8,
     "width": 2048, "height": 1536, "hfov_deg": 65.0}

Mapillary-style aliases are accepted as well: ``captured_at`` in epoch
milliseconds, ``computed_geometry``/``geometry`` GeoJSON points,
``compass_angle``/``computed_compass_angle`` for the heading and ``spherical``/
``equirectangular`` camera types (both treated as panoramas).
"""
import csv
import io
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from zoneinfo import ZoneInfo

from .errors import EmptyInput, InvalidValue, MalformedDocument, MissingField
from .geo import normalize_bearing

log = logging.getLogger(__name__)

CAMERA_TYPES = ("perspective", "panorama", "unknown")
_CAMERA_ALIASES = {
    "perspective": "perspective",
    "fisheye": "perspective",
    "brown": "perspective",
    "panorama": "panorama",
    "spherical": "panorama",
    "equirectangular": "panorama",
}

REJECT_REASONS = ("OutOfBounds", "Panorama", "Night", "LowQuality")

# south-west / north-east corners of the Munich LoD2 coverage
MUNICH_BBOX = (11.3212, 48.0557, 11.7774, 48.2872)

GPX_NS = "http://www.topografix.com/GPX/1/1"


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    captured_at: datetime
    lon: float
    lat: float
    heading_deg: float
    camera_type: str = "unknown"
    quality_score: float | None = None
    image_width_px: int = 1
    image_height_px: int = 1
    hfov_deg: float | None = None

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidValue("lon", self.lon, "outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidValue("lat", self.lat, "outside [-90, 90]")
        if self.camera_type not in CAMERA_TYPES:
            raise InvalidValue("camera_type", self.camera_type)
        if self.quality_score is not None and not 0.0 <= self.quality_score <= 1.0:
            raise InvalidValue("quality_score", self.quality_score, "outside [0, 1]")
        if self.image_width_px <= 0 or self.image_height_px <= 0:
            raise InvalidValue("width/height", (self.image_width_px, self.image_height_px))
        if self.hfov_deg is not None and not 0.0 < self.hfov_deg < 180.0:
            raise InvalidValue("hfov_deg", self.hfov_deg, "outside (0, 180)")
        if self.captured_at.tzinfo is None:
            raise InvalidValue("captured_at", self.captured_at, "timestamp must be timezone-aware")
        object.__setattr__(self, "heading_deg", normalize_bearing(self.heading_deg))

    def to_record(self):
        rec = {
            "id": self.image_id,
            "captured_at": format_time(self.captured_at),
            "lon": self.lon,
            "lat": self.lat,
            "heading": self.heading_deg,
            "camera_type": self.camera_type,
            "quality_score": self.quality_score,
            "width": self.image_width_px,
            "height": self.image_height_px,
        }
        if self.hfov_deg is not None:
            rec["hfov_deg"] = self.hfov_deg
        return rec


@dataclass(frozen=True)
class FilterConfig:
    min_quality: float = 0.5
    # half-open [start, end) in local hours; wraps past midnight when start > end
    night_hours: tuple = (21, 6)
    exclude_panoramas: bool = True
    bounding_box: tuple = MUNICH_BBOX
    timezone: str = "Europe/Berlin"

    def __post_init__(self):
        lon_min, lat_min, lon_max, lat_max = self.bounding_box
        if not (lon_min < lon_max and lat_min < lat_max):
            raise InvalidValue("bounding_box", self.bounding_box, "min must be < max on both axes")
        if not 0.0 <= self.min_quality <= 1.0:
            raise InvalidValue("min_quality", self.min_quality)
        start, end = self.night_hours
        if not (0 <= start < 24 and 0 <= end <= 24):
            raise InvalidValue("night_hours", self.night_hours)


@dataclass(frozen=True)
class RecordIssue:
    index: int
    image_id: str | None
    kind: str
    detail: str


def format_time(t):
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_time(value):
    if isinstance(value, bool):
        raise InvalidValue("captured_at", value)
    if isinstance(value, (int, float)):
        # Mapillary reports epoch milliseconds
        return datetime.fromtimestamp(value / 1000.0, tz=timezone.utc)
    if isinstance(value, str):
        s = value.strip()
        if s.endswith("Z"):
            s = s[:-1] + "+00:00"
        try:
            t = datetime.fromisoformat(s)
        except ValueError:
            raise InvalidValue("captured_at", value) from None
        if t.tzinfo is None:
            t = t.replace(tzinfo=timezone.utc)
        return t
    raise InvalidValue("captured_at", value)


def _first(rec, *names):
    for n in names:
        if n in rec and rec[n] is not None:
            return rec[n]
    raise MissingField(names[0])


def _number(rec, *names):
    v = _first(rec, *names)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InvalidValue(names[0], v)
    return float(v)


def record_to_meta(rec):
    """Build one :class:`ImageMeta` from a decoded JSON record."""
    if not isinstance(rec, dict):
        raise InvalidValue("record", type(rec).__name__, "expected an object")
    image_id = str(_first(rec, "id", "image_id"))
    geom = rec.get("computed_geometry") or rec.get("geometry")
    if geom is not None and "lon" not in rec:
        try:
            lon, lat = (float(v) for v in geom["coordinates"][:2])
        except (KeyError, TypeError, ValueError):
            raise InvalidValue("geometry", geom) from None
    else:
        lon = _number(rec, "lon", "longitude")
        lat = _number(rec, "lat", "latitude")
    heading = _number(rec, "heading", "heading_deg", "compass_angle", "computed_compass_angle")
    cam_raw = str(rec.get("camera_type") or "unknown").lower()
    camera_type = _CAMERA_ALIASES.get(cam_raw, "unknown")
    q = rec.get("quality_score")
    if q is not None:
        q = _number(rec, "quality_score")
    width = rec.get("width", rec.get("image_width_px"))
    height = rec.get("height", rec.get("image_height_px"))
    if width is None:
        raise MissingField("width")
    if height is None:
        raise MissingField("height")
    hfov = rec.get("hfov_deg")
    return ImageMeta(
        image_id=image_id,
        captured_at=_parse_time(_first(rec, "captured_at")),
        lon=lon,
        lat=lat,
        heading_deg=heading,
        camera_type=camera_type,
        quality_score=q,
        image_width_px=int(width),
        image_height_px=int(height),
        hfov_deg=None if hfov is None else float(hfov),
    )


def parse_metadata(document):
    """Parse a JSON array of metadata records.

    Returns ``(metas, issues)``. Records that fail validation are skipped and
    reported in ``issues``; only a syntactically broken document raises.
    A top-level ``{"data": [...]}`` wrapper, as returned by the Mapillary
    API, is unwrapped.
    """
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"metadata is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("data"), list):
        data = data["data"]
    if not isinstance(data, list):
        raise MalformedDocument("metadata document must be a JSON array of records")

    metas, issues = [], []
    for i, rec in enumerate(data):
        try:
            metas.append(record_to_meta(rec))
        except (MissingField, InvalidValue, ValueError, TypeError) as exc:
            rid = rec.get("id") if isinstance(rec, dict) else None
            kind = "MissingField" if isinstance(exc, MissingField) else "InvalidValue"
            issue = RecordIssue(i, None if rid is None else str(rid), kind, str(exc))
            log.warning("skipping record %d (%s): %s", i, issue.image_id, exc)
            issues.append(issue)
    return metas, issues


def dump_metadata(metas):
    return json.dumps([m.to_record() for m in metas], indent=1, sort_keys=True) + "\n"


def _is_night(t, cfg, tz):
    hour = t.astimezone(tz).hour
    start, end = cfg.night_hours
    if start == end:
        return False
    if start < end:
        return start <= hour < end
    return hour >= start or hour < end


def rejection_reason(meta, cfg, tz=None):
    """First failing check for ``meta``, or None if it passes."""
    lon_min, lat_min, lon_max, lat_max = cfg.bounding_box
    if not (lon_min <= meta.lon <= lon_max and lat_min <= meta.lat <= lat_max):
        return "OutOfBounds"
    if cfg.exclude_panoramas and meta.camera_type == "panorama":
        return "Panorama"
    if _is_night(meta.captured_at, cfg, tz or ZoneInfo(cfg.timezone)):
        return "Night"
    if meta.quality_score is not None and meta.quality_score < cfg.min_quality:
        return "LowQuality"
    return None


def filter_metadata(metas, cfg=None):
    """Split ``metas`` into ``(kept, rejected)``; rejected holds ``(meta, reason)`` pairs."""
    cfg = cfg or FilterConfig()
    tz = ZoneInfo(cfg.timezone)
    kept, rejected = [], []
    for m in metas:
        reason = rejection_reason(m, cfg, tz)
        if reason is None:
            kept.append(m)
        else:
            rejected.append((m, reason))
    return kept, rejected


def rejection_log_csv(rejected):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "reason"])
    for m, reason in rejected:
        w.writerow([m.image_id, reason])
    return buf.getvalue()


def _fmt_coord(v):
    return f"{v:.9f}"


def export_gpx(metas, creator="floorcount"):
    """GPX 1.1 document with one waypoint per image, in capture-time order."""
    if not metas:
        raise EmptyInput("export_gpx needs at least one image")
    root = ET.Element("gpx", {"version": "1.1", "creator": creator, "xmlns": GPX_NS})
    for m in sorted(metas, key=lambda m: (m.captured_at, m.image_id)):
        wpt = ET.SubElement(root, "wpt", {"lat": _fmt_coord(m.lat), "lon": _fmt_coord(m.lon)})
        ET.SubElement(wpt, "time").text = format_time(m.captured_at)
        ET.SubElement(wpt, "name").text = m.image_id
        ET.SubElement(wpt, "type").text = m.camera_type
    ET.indent(root, space=" ")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


@dataclass
class Waypoint:
    lon: float
    lat: float
    name: str | None = None
    time: datetime | None = None
    extra: dict = field(default_factory=dict)


def _children(root, tag):
    return root.findall(f"{{{GPX_NS}}}{tag}") or root.findall(tag)


def _read_point(el):
    def text(tag):
        child = el.find(f"{{{GPX_NS}}}{tag}")
        if child is None:
            child = el.find(tag)
        return None if child is None else child.text

    t = text("time")
    return Waypoint(
        lon=float(el.get("lon")),
        lat=float(el.get("lat")),
        name=text("name"),
        time=None if t is None else _parse_time(t),
    )


def parse_gpx(text, kind="wpt"):
    """Read waypoints (``kind="wpt"``) or route points (``kind="rtept"``) from GPX text."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedDocument(f"invalid GPX: {exc}") from exc
    if kind == "wpt":
        return [_read_point(el) for el in _children(root, "wpt")]
    points = []
    for rte in _children(root, "rte"):
        points.extend(_read_point(el) for el in _children(rte, "rtept"))
    return points
