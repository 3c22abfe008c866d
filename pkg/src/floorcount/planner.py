"""Pick under-represented buildings per floor category and order them into a short capture route."""
import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPlan, InvalidMatrix, InvalidValue
from .footprints import centroid
from .geo import haversine_m
from .ingestion import GPX_NS, parse_gpx

MAX_FLOORS = 18
MAX_PASSES = 10_000


@dataclass
class CapturePlan:
    stops: list  # [(footprint_id, (lon, lat))] in visit order
    total_distance_m: float
    photos_per_building: int = 3
    closed: bool = False
    legs_m: list = field(default_factory=list)


def select_targets(store, quota, seed):
    """Draw ``min(quota, available)`` footprints per floor category, uniformly without replacement.

    Returns ``(selected, shortfalls)`` where ``shortfalls`` maps a floor count
    to the number of buildings that could not be supplied. Buildings above
    18 floors never qualify.
    """
    rng = np.random.default_rng(seed)
    by_floor = {}
    for fp in store:
        if fp.floor_count is not None and fp.floor_count <= MAX_FLOORS:
            by_floor.setdefault(fp.floor_count, []).append(fp)
    quota = {int(k): int(v) for k, v in quota.items()}
    selected, shortfalls = [], {}
    for floors in sorted(quota):
        want = quota[floors]
        if want < 0:
            raise InvalidValue("quota", (floors, want), "counts must be >= 0")
        pool = sorted(by_floor.get(floors, []), key=lambda fp: fp.id)
        take = min(want, len(pool))
        if take < want:
            shortfalls[floors] = want - take
        if take:
            picks = rng.choice(len(pool), size=take, replace=False)
            selected.extend(pool[i] for i in picks)
    return selected, shortfalls


def distance_matrix(points):
    n = len(points)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = haversine_m(points[i], points[j])
    return d


def tour_length(matrix, order, closed=False):
    d = np.asarray(matrix)
    total = sum(d[order[i], order[i + 1]] for i in range(len(order) - 1))
    if closed and len(order) > 1:
        total += d[order[-1], order[0]]
    return float(total)


def _check_matrix(d):
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InvalidMatrix(f"distance matrix must be square, got {d.shape}")
    if d.shape[0] < 2:
        raise InvalidMatrix("need at least 2 points")
    if not np.all(np.isfinite(d)):
        raise InvalidMatrix("non-finite distances")
    if np.any(d < 0):
        raise InvalidMatrix("negative distances")
    if np.max(np.abs(d - d.T)) > 1e-9:
        raise InvalidMatrix("matrix is not symmetric")
    if np.any(np.diag(d) != 0):
        raise InvalidMatrix("diagonal must be zero")


def nearest_neighbor(d, start=0):
    n = len(d)
    order = [start]
    left = set(range(n)) - {start}
    while left:
        last = order[-1]
        # lowest index breaks distance ties
        nxt = min(left, key=lambda j: (d[last, j], j))
        order.append(nxt)
        left.remove(nxt)
    return order


def _gain(d, order, i, j, closed):
    """Length change from reversing ``order[i:j+1]``."""
    n = len(order)
    a = order[i - 1] if i > 0 else (order[-1] if closed else None)
    e = order[j + 1] if j + 1 < n else (order[0] if closed else None)
    b, c = order[i], order[j]
    before = after = 0.0
    if a is not None:
        before += d[a, b]
        after += d[a, c]
    if e is not None:
        before += d[c, e]
        after += d[b, e]
    return after - before


def two_opt(d, order, closed=False, max_passes=MAX_PASSES):
    """Best-improvement 2-opt.

    On an open path, reversing a prefix or suffix moves an endpoint, so the
    route may end up starting elsewhere than ``order[0]``. A closed tour keeps
    its first stop.
    """
    order = list(order)
    n = len(order)
    lo = 1 if closed else 0
    for _ in range(max_passes):
        best, move = -1e-9, None
        for i in range(lo, n - 1):
            for j in range(i + 1, n):
                if i == 0 and j == n - 1:
                    continue  # whole-path reversal changes nothing
                g = _gain(d, order, i, j, closed)
                if g < best:
                    best, move = g, (i, j)
        if move is None:
            break
        i, j = move
        order[i:j + 1] = order[i:j + 1][::-1]
    return order


def solve_tsp(matrix, closed=False):
    """Visiting order: nearest-neighbour construction from index 0, then 2-opt to a local optimum."""
    d = np.asarray(matrix, dtype=float)
    _check_matrix(d)
    return two_opt(d, nearest_neighbor(d, 0), closed=closed)


def build_plan(footprints, photos_per_building=3, closed=False):
    """Route through the centroids of ``footprints``."""
    if not footprints:
        raise EmptyPlan("no buildings to visit")
    ids = [fp.id for fp in footprints]
    if len(set(ids)) != len(ids):
        raise InvalidValue("footprints", ids, "duplicate footprint ids")
    points = [centroid(fp) for fp in footprints]
    if len(points) == 1:
        order = [0]
    else:
        order = solve_tsp(distance_matrix(points), closed=closed)
    stops = [(ids[i], points[i]) for i in order]
    legs = [haversine_m(stops[k][1], stops[k + 1][1]) for k in range(len(stops) - 1)]
    if closed and len(stops) > 1:
        legs.append(haversine_m(stops[-1][1], stops[0][1]))
    return CapturePlan(stops, float(sum(legs)), photos_per_building, closed, legs)


def export_route(plan, name="capture route"):
    """Return ``(gpx_text, legs_csv_text)`` for a plan."""
    if not plan.stops:
        raise EmptyPlan("plan has no stops")
    root = ET.Element("gpx", {"version": "1.1", "creator": "floorcount", "xmlns": GPX_NS})
    rte = ET.SubElement(root, "rte")
    ET.SubElement(rte, "name").text = name
    for seq, (fid, (lon, lat)) in enumerate(plan.stops, start=1):
        pt = ET.SubElement(rte, "rtept", {"lat": f"{lat:.9f}", "lon": f"{lon:.9f}"})
        ET.SubElement(pt, "name").text = fid
        ET.SubElement(pt, "desc").text = f"stop {seq}, {plan.photos_per_building} photos"
    ET.indent(root, space=" ")
    gpx = '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seq", "footprint_id", "lon", "lat", "leg_m", "cumulative_m"])
    cum = 0.0
    for seq, (fid, (lon, lat)) in enumerate(plan.stops):
        leg = plan.legs_m[seq - 1] if seq > 0 else 0.0
        cum += leg
        w.writerow([seq + 1, fid, f"{lon:.9f}", f"{lat:.9f}", f"{leg:.3f}", f"{cum:.3f}"])
    if plan.closed and len(plan.stops) > 1:
        fid, (lon, lat) = plan.stops[0]
        cum += plan.legs_m[-1]
        w.writerow([len(plan.stops) + 1, fid, f"{lon:.9f}", f"{lat:.9f}",
                    f"{plan.legs_m[-1]:.3f}", f"{cum:.3f}"])
    return gpx, buf.getvalue()


def read_route_gpx(text):
    """Footprint ids of a route GPX, in visit order."""
    return [p.name for p in parse_gpx(text, kind="rtept")]


def shortfall_csv(shortfalls, quota):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["floors", "requested", "shortfall"])
    for floors in sorted(quota, key=int):
        w.writerow([int(floors), int(quota[floors]), shortfalls.get(int(floors), 0)])
    return buf.getvalue()
