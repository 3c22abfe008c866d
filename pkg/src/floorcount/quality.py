"""Accept or reject façade crops from segmentation summaries and window detections."""
import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSummary, MalformedDocument

REASONS = ("LowBuilding", "HighVegetation", "NoWindows", "TruncatedTop", "OccludedTop")

# class ids used by summarize_mask
BUILDING, VEGETATION, SKY, OTHER = 0, 1, 2, 3


@dataclass(frozen=True)
class SegmentationSummary:
    frac_building: float
    frac_vegetation: float
    frac_sky: float
    frac_other: float
    top_rows_building_frac: float
    top_rows_vegetation_frac: float
    window_detected: bool

    def validate(self):
        fracs = (self.frac_building, self.frac_vegetation, self.frac_sky, self.frac_other,
                 self.top_rows_building_frac, self.top_rows_vegetation_frac)
        for v in fracs:
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InvalidSummary(f"fraction {v!r} outside [0, 1]")
        total = self.frac_building + self.frac_vegetation + self.frac_sky + self.frac_other
        if abs(total - 1.0) > 1e-6:
            raise InvalidSummary(f"class fractions sum to {total}, expected 1")
        if self.top_rows_building_frac + self.top_rows_vegetation_frac > 1.0 + 1e-6:
            raise InvalidSummary("top-band fractions sum past 1")


@dataclass(frozen=True)
class Thresholds:
    min_building: float = 0.20
    max_vegetation: float = 0.70
    top_building: float = 0.5
    top_vegetation: float = 0.5
    top_band: float = 0.05  # share of image rows forming the top band


@dataclass(frozen=True)
class Decision:
    reasons: frozenset = frozenset()

    @property
    def keep(self):
        return not self.reasons

    def codes(self):
        """Reason codes in canonical order, ``;``-joined."""
        return ";".join(r for r in REASONS if r in self.reasons)


def evaluate_filters(s, t=None):
    """Keep/reject decision; a rejection lists every rule that fired."""
    t = t or Thresholds()
    s.validate()
    reasons = set()
    if s.frac_building < t.min_building:
        reasons.add("LowBuilding")
    if s.frac_vegetation > t.max_vegetation:
        reasons.add("HighVegetation")
    if not s.window_detected:
        reasons.add("NoWindows")
    if s.top_rows_building_frac > t.top_building:
        reasons.add("TruncatedTop")
    if s.top_rows_vegetation_frac > t.top_vegetation:
        reasons.add("OccludedTop")
    return Decision(frozenset(reasons))


def summarize_mask(mask, window_detected, top_band=0.05):
    """Summary from an (h, w) array of class ids (building, vegetation, sky, other = 0..3)."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise InvalidSummary("mask must be a non-empty 2-D array")
    counts = np.bincount(mask.ravel(), minlength=4)[:4] / mask.size
    rows = max(1, int(math.ceil(top_band * mask.shape[0])))
    top = mask[:rows]
    return SegmentationSummary(
        frac_building=float(counts[BUILDING]),
        frac_vegetation=float(counts[VEGETATION]),
        frac_sky=float(counts[SKY]),
        frac_other=float(1.0 - counts[BUILDING] - counts[VEGETATION] - counts[SKY]),
        top_rows_building_frac=float(np.mean(top == BUILDING)),
        top_rows_vegetation_frac=float(np.mean(top == VEGETATION)),
        window_detected=bool(window_detected),
    )


_FIELDS = ("frac_building", "frac_vegetation", "frac_sky", "frac_other",
           "top_rows_building_frac", "top_rows_vegetation_frac")


def _truthy(v):
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "y")
    return bool(v)


def _summary_from_row(row):
    try:
        vals = {k: float(row[k]) for k in _FIELDS}
        return SegmentationSummary(**vals, window_detected=_truthy(row["window_detected"]))
    except KeyError as exc:
        raise MalformedDocument(f"summary row missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad summary row: {exc}") from None


def read_summaries(text):
    """Parse summaries from a JSON array or CSV; returns ``[((image_id, crop_index), summary)]``."""
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"summaries are not valid JSON: {exc}") from exc
    else:
        rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        if not isinstance(row, dict) or "image_id" not in row:
            raise MalformedDocument("summary row needs an image_id")
        key = (str(row["image_id"]), int(row.get("crop_index", 0) or 0))
        out.append((key, _summary_from_row(row)))
    return out


def decision_log_csv(items):
    """CSV decision log from ``[((image_id, crop_index), Decision)]``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "crop_index", "decision", "reasons"])
    for (image_id, crop_index), d in items:
        w.writerow([image_id, crop_index, "keep" if d.keep else "reject", d.codes()])
    return buf.getvalue()
