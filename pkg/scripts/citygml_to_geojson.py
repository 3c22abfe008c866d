#!/usr/bin/env python3
"""Flatten CityGML LoD2 buildings into a footprint GeoJSON for ``floorcount``.

Each ``Building`` (or ``BuildingPart``) becomes one Feature. The ground plan
is the first ``GroundSurface`` ring, falling back to ``lod0FootPrint``; z is
dropped. Attributes copied when present: ``storeysAboveGround`` -> floors,
``measuredHeight`` -> height_m, ``roofType`` -> roof_type, ``function``.
Codes are passed through untouched; the footprint loader maps ALKIS roof and
function codes.

Input coordinates are taken as lon/lat unless ``--source-crs`` names a
projected CRS (e.g. EPSG:25832 for Bavarian LoD2 tiles), which needs pyproj.

    python3 scripts/citygml_to_geojson.py tile.gml -o footprints.geojson --source-crs EPSG:25832

Not part of the installed package: the full CityGML model is out of scope and
only the handful of fields the matcher and statistics use are read.
"""
import argparse
import json
import logging
import sys
import xml.etree.ElementTree as ET

log = logging.getLogger("citygml_to_geojson")

BUILDING_TAGS = ("Building", "BuildingPart")
ATTRS = {"storeysAboveGround": "floors", "measuredHeight": "height_m", "roofType": "roof_type",
         "function": "function"}


def local(tag):
    return tag.rsplit("}", 1)[-1]


def _children(el, name):
    return [c for c in el if local(c.tag) == name]


def _descendants(el, name):
    return [c for c in el.iter() if local(c.tag) == name]


def _ring(el, dim):
    """First exterior ring under ``el`` as a list of (x, y)."""
    for ring in _descendants(el, "LinearRing"):
        pos_list = _descendants(ring, "posList")
        if pos_list:
            d = int(pos_list[0].get("srsDimension") or dim)
            vals = [float(v) for v in pos_list[0].text.split()]
            return [(vals[i], vals[i + 1]) for i in range(0, len(vals) - d + 1, d)]
        pts = [[float(v) for v in p.text.split()] for p in _descendants(ring, "pos")]
        if pts:
            return [(p[0], p[1]) for p in pts]
    return None


def _own(el):
    """Descendants of a building element that do not belong to a nested BuildingPart."""
    stack = list(el)
    while stack:
        c = stack.pop()
        if local(c.tag) in BUILDING_TAGS:
            continue
        yield c
        stack.extend(c)


def building_to_feature(el, dim=3, transform=None):
    ground = [c for c in _own(el) if local(c.tag) in ("GroundSurface", "lod0FootPrint")]
    ground.sort(key=lambda c: local(c.tag) != "GroundSurface")
    ring = next((r for r in (_ring(g, dim) for g in ground) if r), None)
    if ring is None or len(ring) < 4:
        return None
    if transform is not None:
        ring = [transform(x, y) for x, y in ring]
    props = {}
    for child in el:
        key = ATTRS.get(local(child.tag))
        if key is None or child.text is None:
            continue
        text = child.text.strip()
        if key == "floors":
            props[key] = int(float(text))
        elif key == "height_m":
            props[key] = float(text)
        else:
            props[key] = text
    fid = el.get("{http://www.opengis.net/gml}id") or el.get("id")
    return {"type": "Feature", "id": fid, "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [[list(p) for p in ring]]}}


def convert(source, transform=None):
    root = ET.parse(source).getroot()
    features, skipped = [], 0
    for el in root.iter():
        if local(el.tag) not in BUILDING_TAGS:
            continue
        f = building_to_feature(el, transform=transform)
        if f is None:
            # parent buildings whose geometry lives only in their parts are expected here
            skipped += 1
            continue
        features.append(f)
    return {"type": "FeatureCollection", "features": features}, skipped


def _transformer(crs):
    if crs is None:
        return None
    from pyproj import Transformer
    t = Transformer.from_crs(crs, "EPSG:4326", always_xy=True)
    return lambda x, y: t.transform(x, y)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", help="CityGML file")
    ap.add_argument("-o", "--output", help="GeoJSON output (default: stdout)")
    ap.add_argument("--source-crs", help="CRS of the input coordinates, e.g. EPSG:25832")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    doc, skipped = convert(args.source, _transformer(args.source_crs))
    text = json.dumps(doc, indent=1)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    log.info("%d buildings written, %d without a ground plan skipped", len(doc["features"]), skipped)
    return 0


if __name__ == "__main__":
    sys.exit(main())
