"""Local tangent-plane projection and great-circle distance.

All planar geometry in the toolkit (ray casting, buffer queries, centroids)
runs on an equirectangular plane anchored at a reference point, with x pointing
east and y pointing north, in metres.
"""
import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG = math.pi / 180.0 * EARTH_RADIUS_M


def project_local(origin, p):
    """Project lon/lat ``p`` onto the tangent plane at ``origin``; returns (x_m, y_m).

    ``p`` may also be an (n, 2) array of lon/lat pairs.
    """
    lon0, lat0 = origin
    k = math.cos(math.radians(lat0)) * METERS_PER_DEG
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return ((p[0] - lon0) * k, (p[1] - lat0) * METERS_PER_DEG)
    out = np.empty_like(p)
    out[:, 0] = (p[:, 0] - lon0) * k
    out[:, 1] = (p[:, 1] - lat0) * METERS_PER_DEG
    return out


def unproject_local(origin, xy):
    """Inverse of :func:`project_local`."""
    lon0, lat0 = origin
    k = math.cos(math.radians(lat0)) * METERS_PER_DEG
    xy = np.asarray(xy, dtype=float)
    if xy.ndim == 1:
        return (lon0 + xy[0] / k, lat0 + xy[1] / METERS_PER_DEG)
    out = np.empty_like(xy)
    out[:, 0] = lon0 + xy[:, 0] / k
    out[:, 1] = lat0 + xy[:, 1] / METERS_PER_DEG
    return out


def haversine_m(a, b):
    """Great-circle distance in metres between two (lon, lat) points."""
    lon1, lat1 = map(math.radians, a)
    lon2, lat2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def normalize_bearing(deg):
    """Wrap a compass bearing into [0, 360)."""
    b = math.fmod(deg, 360.0)
    if b < 0:
        b += 360.0
    # fmod of a tiny negative can round up to exactly 360
    return 0.0 if b >= 360.0 else b
