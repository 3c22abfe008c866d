"""Dataset summaries: images per floor count and source, and height-vs-floor exports."""
import csv
import io
from dataclasses import dataclass

from .errors import EmptyInput, InvalidValue, MalformedDocument

SOURCES = ("mapillary", "self_captured")
OVERFLOW = "19+"


@dataclass(frozen=True)
class DatasetRecord:
    image_id: str
    footprint_id: str
    floor_count: int
    source: str
    height_m: float | None = None

    def __post_init__(self):
        if self.floor_count < 1:
            raise InvalidValue("floor_count", self.floor_count, "must be >= 1")
        if self.source not in SOURCES:
            raise InvalidValue("source", self.source, f"expected one of {SOURCES}")


def _bucket(floors):
    return floors if floors <= 18 else OVERFLOW


def floor_histogram(records):
    """``{floor or "19+": {"total": n, "mapillary": n, "self_captured": n}}`` in floor order."""
    if not records:
        raise EmptyInput("no records")
    table = {}
    for r in records:
        row = table.setdefault(_bucket(r.floor_count), dict.fromkeys(("total",) + SOURCES, 0))
        row[r.source] += 1
        row["total"] += 1
    keys = sorted(k for k in table if k != OVERFLOW) + ([OVERFLOW] if OVERFLOW in table else [])
    return {k: table[k] for k in keys}


def histogram_totals(hist):
    return {c: sum(row[c] for row in hist.values()) for c in ("total",) + SOURCES}


def histogram_csv(hist):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["floors", "total", "mapillary", "self_captured"])
    for k, row in hist.items():
        w.writerow([k, row["total"], row["mapillary"], row["self_captured"]])
    tot = histogram_totals(hist)
    w.writerow(["total", tot["total"], tot["mapillary"], tot["self_captured"]])
    return buf.getvalue()


def read_records_csv(text):
    """Records CSV: ``image_id, footprint_id, floor_count, source[, height_m]``."""
    reader = csv.DictReader(io.StringIO(text))
    need = {"image_id", "footprint_id", "floor_count", "source"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise MalformedDocument(f"records CSV needs columns {sorted(need)}")
    out = []
    for i, row in enumerate(reader):
        try:
            h = (row.get("height_m") or "").strip()
            out.append(DatasetRecord(row["image_id"], row["footprint_id"], int(row["floor_count"]),
                                     row["source"].strip(), float(h) if h else None))
        except (ValueError, InvalidValue) as exc:
            raise MalformedDocument(f"records row {i + 1}: {exc}") from None
    return out


def height_floor_export(footprints):
    """CSV of ``floor_count, height_m, roof_type, function``; returns ``(csv_text, skipped)``.

    Footprints missing either floor count or height are skipped and counted.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["footprint_id", "floor_count", "height_m", "roof_type", "function"])
    skipped = 0
    for fp in footprints:
        if fp.floor_count is None or fp.height_m is None:
            skipped += 1
            continue
        w.writerow([fp.id, fp.floor_count, repr(float(fp.height_m)), fp.roof_type, fp.function])
    return buf.getvalue(), skipped


def read_height_floor_csv(text):
    return [(r["footprint_id"], int(r["floor_count"]), float(r["height_m"]), r["roof_type"], r["function"])
            for r in csv.DictReader(io.StringIO(text))]
