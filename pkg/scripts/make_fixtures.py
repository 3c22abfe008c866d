"""Regenerate the bundled fixtures under src/floorcount/data/.

    python scripts/make_fixtures.py

Outputs are deterministic; rerunning must leave the files byte-identical.
"""
import json
from pathlib import Path

import numpy as np

from floorcount.geo import unproject_local
from floorcount.model import dataset_csv, synthetic_long_tail

DATA = Path(__file__).resolve().parents[1] / "src" / "floorcount" / "data"

# floor count -> (from Mapillary, self-captured), Munich benchmark
MUNICH_COUNTS = {
    1: (835, 0), 2: (1535, 0), 3: (1126, 0), 4: (1594, 0), 5: (784, 0), 6: (441, 0),
    7: (103, 0), 8: (37, 33), 9: (18, 48), 10: (0, 48), 11: (0, 48), 12: (0, 33),
    13: (0, 33), 14: (0, 18), 15: (0, 30), 16: (0, 24), 17: (0, 12), 18: (0, 27),
}
PHOTOS_PER_BUILDING = 3


def munich_records():
    rng = np.random.default_rng(2024)
    lines = ["image_id,footprint_id,floor_count,source,height_m"]
    img = bld = 0
    for floors, (n_mly, n_self) in MUNICH_COUNTS.items():
        for _ in range(n_mly):
            img += 1
            bld += 1
            h = 3.0 * floors + rng.uniform(1.0, 6.0)
            lines.append(f"mly_{img:06d},DEBY_{bld:07d},{floors},mapillary,{h:.1f}")
        for k in range(n_self):
            img += 1
            if k % PHOTOS_PER_BUILDING == 0:
                bld += 1
                h = 3.1 * floors + rng.uniform(1.0, 6.0)
            lines.append(f"own_{img:06d},DEBY_{bld:07d},{floors},self_captured,{h:.1f}")
    return "\n".join(lines) + "\n"


ORIGIN = (11.5755, 48.1374)

# id -> local rectangle (x0, y0, x1, y1) in metres, attributes
MINI_FOOTPRINTS = {
    "A": ((-15, 30, 15, 50), dict(floors=4, height_m=14.5, roof_type="flat", function="residential")),
    "B": ((40, -10, 60, 10), dict(floors=6, height_m=21.0, roof_type="nonflat", function="residential")),
    "C": ((-10, -60, 10, -40), dict(floors=2, height_m=8.2, roof_type="nonflat", function="commercial")),
    "D": ((-70, -12, -45, 12), dict(floors=10, height_m=33.0, roof_type="flat", function="commercial")),
    "E": ((100, 100, 130, 130), dict(floors=18, height_m=61.0, roof_type="flat", function="other")),
}


def _ll(xy):
    lon, lat = unproject_local(ORIGIN, np.asarray(xy, dtype=float))
    return [round(float(lon), 9), round(float(lat), 9)]


def mini_footprints():
    feats = []
    for fid, ((x0, y0, x1, y1), props) in MINI_FOOTPRINTS.items():
        # listed clockwise on purpose; the loader normalises orientation
        ring = [_ll((x0, y0)), _ll((x0, y1)), _ll((x1, y1)), _ll((x1, y0)), _ll((x0, y0))]
        feats.append({"type": "Feature", "id": fid, "properties": props,
                      "geometry": {"type": "Polygon", "coordinates": [ring]}})
    return json.dumps({"type": "FeatureCollection", "features": feats}, indent=1) + "\n"


def mini_metadata():
    def rec(i, xy, heading, t, cam="perspective", q=0.9):
        lon, lat = _ll(xy)
        return {"id": i, "captured_at": t, "lon": lon, "lat": lat, "heading": heading,
                "camera_type": cam, "quality_score": q, "width": 2000, "height": 1500}
    recs = [
        rec("img1", (0, 0), 0.0, "2021-06-01T09:12:00Z"),
        rec("img2", (0, 0), 90.0, "2021-06-01T09:13:30Z"),
        rec("img3", (0, -5), 180.0, "2021-06-01T09:15:10Z"),
        rec("img4", (0, 0), 270.0, "2021-06-01T09:16:45Z"),
        rec("pano1", (5, 5), 45.0, "2021-06-01T09:20:00Z", cam="spherical"),
        rec("night1", (0, 0), 0.0, "2021-06-01T22:30:00Z"),
    ]
    return json.dumps(recs, indent=1) + "\n"


def mini_crops():
    crops = [
        {"image_id": "img1", "crop_index": 0, "x_min": 700, "x_max": 1300},
        {"image_id": "img1", "crop_index": 1, "x_min": 0, "x_max": 150},
        {"image_id": "img2", "crop_index": 0, "x_min": 600, "x_max": 1400},
        {"image_id": "img3", "crop_index": 0, "x_min": 800, "x_max": 1200},
        {"image_id": "img4", "crop_index": 0, "x_min": 500, "x_max": 1500},
    ]
    return json.dumps(crops, indent=1) + "\n"


def mini_summaries():
    def s(i, c, b, v, sky, top_b, top_v, win):
        return {"image_id": i, "crop_index": c, "frac_building": b, "frac_vegetation": v,
                "frac_sky": sky, "frac_other": round(1 - b - v - sky, 6),
                "top_rows_building_frac": top_b, "top_rows_vegetation_frac": top_v,
                "window_detected": win}
    rows = [
        s("img1", 0, 0.55, 0.10, 0.25, 0.1, 0.0, True),
        s("img1", 1, 0.12, 0.60, 0.20, 0.0, 0.6, False),
        s("img2", 0, 0.62, 0.05, 0.20, 0.2, 0.1, True),
        s("img3", 0, 0.48, 0.15, 0.30, 0.0, 0.1, True),
        s("img4", 0, 0.70, 0.05, 0.15, 0.3, 0.0, True),
    ]
    return json.dumps(rows, indent=1) + "\n"


MINI_CONFIG = """\
# Mini pipeline over the bundled five-footprint scene.
[paths]
footprints = footprints.geojson
metadata = metadata.json
crops = crops.json
summaries = summaries.json
quota = quota.json
dataset = features.csv

[matcher]
hfov_deg = 70
buffer_m = 100
eps_deg = 0.5
max_range_m = 100

[ingest]
min_quality = 0.5
night_hours = 21,6
timezone = Europe/Berlin
exclude_panoramas = true
bounding_box = 11.3212,48.0557,11.7774,48.2872

[filter]
min_building = 0.20
max_vegetation = 0.70
top_building = 0.5
top_vegetation = 0.5

[plan]
photos_per_building = 3
closed = false

[train]
variant = hyb+httc
feature_dim = 16
hidden = 32
epochs = 5
batch_size = 32
lr = 0.001

[run]
seed = 7
"""


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "munich_records.csv").write_text(munich_records())
    mini = DATA / "mini"
    mini.mkdir(exist_ok=True)
    (mini / "footprints.geojson").write_text(mini_footprints())
    (mini / "metadata.json").write_text(mini_metadata())
    (mini / "crops.json").write_text(mini_crops())
    (mini / "summaries.json").write_text(mini_summaries())
    (mini / "quota.json").write_text(json.dumps({"4": 1, "6": 1, "10": 1, "18": 1, "12": 2}, indent=1) + "\n")
    (mini / "config.ini").write_text(MINI_CONFIG)
    ds = synthetic_long_tail(n=300, feature_dim=16, seed=0)
    (mini / "features.csv").write_text(dataset_csv(ds))
    (mini / "pairs.csv").write_text("pred,gt\n3,3\n4,5\n5,7\n")


if __name__ == "__main__":
    main()
