"""Match cropped façade images to footprints by casting rays across the crop's field of view.

Bearings are compass bearings in degrees (0 = north, clockwise). On the
tangent plane a bearing ``b`` points along ``(sin b, cos b)``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidCrop, InvalidValue
from .footprints import point_in_ring
from .geo import normalize_bearing, project_local

DEFAULT_HFOV_DEG = {"perspective": 70.0, "unknown": 70.0}
DEFAULT_MAX_RANGE_M = 100.0
DEFAULT_BUFFER_M = 100.0
DEFAULT_EPS_DEG = 0.5


@dataclass(frozen=True)
class CropBox:
    image_id: str
    x_min_px: float
    x_max_px: float
    crop_index: int = 0


@dataclass(frozen=True)
class CameraView:
    origin: tuple
    heading_deg: float
    image_width_px: int
    hfov_deg: float = 70.0

    def __post_init__(self):
        if not 0.0 < self.hfov_deg < 180.0:
            raise InvalidValue("hfov_deg", self.hfov_deg, "must lie in (0, 180)")
        if self.image_width_px <= 0:
            raise InvalidValue("image_width_px", self.image_width_px)


@dataclass
class MatchResult:
    footprint_id: str | None
    votes: dict = field(default_factory=dict)
    confidence: float = 0.0
    rays_cast: int = 0
    mean_distance_m: dict = field(default_factory=dict)


def camera_for(meta, hfov_deg=None):
    """CameraView for an ImageMeta; per-image FoV wins over ``hfov_deg``, then the camera-type default."""
    fov = meta.hfov_deg or hfov_deg or DEFAULT_HFOV_DEG.get(meta.camera_type)
    if fov is None:
        raise InvalidValue("hfov_deg", None, f"no field of view for camera type {meta.camera_type!r}")
    return CameraView((meta.lon, meta.lat), meta.heading_deg, meta.image_width_px, fov)


def crop_bearings(crop, cam):
    """Bearings of the crop's left and right pixel edges, each in [0, 360)."""
    if not (0 <= crop.x_min_px < crop.x_max_px <= cam.image_width_px):
        raise InvalidCrop(
            f"crop [{crop.x_min_px}, {crop.x_max_px}) outside image of width {cam.image_width_px}")

    def bearing(x):
        return normalize_bearing(cam.heading_deg + (x / cam.image_width_px - 0.5) * cam.hfov_deg)

    return bearing(crop.x_min_px), bearing(crop.x_max_px)


def _span(bearings):
    start, end = bearings
    width = (end - start) % 360.0
    return start, width


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


class RayScene:
    """Candidate footprints projected onto the tangent plane at the camera origin.

    Holds every boundary segment in flat arrays so batches of rays can be
    intersected in one vectorised pass.
    """

    def __init__(self, origin, candidates, max_range_m=DEFAULT_MAX_RANGE_M):
        self.origin = tuple(origin)
        self.max_range_m = float(max_range_m)
        self.ids = [fp.id for fp in candidates]
        self.rings = [project_local(self.origin, fp.vertices) for fp in candidates]
        a, b, owner = [], [], []
        for k, ring in enumerate(self.rings):
            a.append(ring)
            b.append(np.roll(ring, -1, axis=0))
            owner.append(np.full(len(ring), k))
        if a:
            self.a = np.concatenate(a)
            self.e = np.concatenate(b) - self.a
            self.owner = np.concatenate(owner)
        else:
            self.a = np.zeros((0, 2))
            self.e = np.zeros((0, 2))
            self.owner = np.zeros(0, dtype=int)
        # candidates are ordered by id, so the lowest id wins if the origin is somehow in two
        self.inside = -1
        for k, ring in enumerate(self.rings):
            if point_in_ring(0.0, 0.0, ring):
                self.inside = k
                break
        self._events = None

    def cast(self, bearings_deg, chunk=2048):
        """Nearest hit per bearing: ``(owner, distance)`` arrays, owner -1 for a miss."""
        bearings = np.atleast_1d(np.asarray(bearings_deg, dtype=float))
        n = len(bearings)
        if self.inside >= 0:
            return np.full(n, self.inside), np.zeros(n)
        owner = np.full(n, -1)
        dist = np.full(n, np.inf)
        if len(self.owner) == 0:
            return owner, dist
        ax, ay = self.a[:, 0], self.a[:, 1]
        ex, ey = self.e[:, 0], self.e[:, 1]
        for lo in range(0, n, chunk):
            rad = np.radians(bearings[lo:lo + chunk])[:, None]
            dx, dy = np.sin(rad), np.cos(rad)
            denom = _cross(dx, dy, ex, ey)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = _cross(ax, ay, ex, ey) / denom
                s = _cross(ax, ay, dx, dy) / denom
            # parallel and collinear segments (denom == 0) count as misses
            ok = (denom != 0) & (t > 0) & (t <= self.max_range_m) & (s >= 0) & (s <= 1)
            t = np.where(ok, t, np.inf)
            j = np.argmin(t, axis=1)
            best = t[np.arange(len(j)), j]
            hit = np.isfinite(best)
            owner[lo:lo + chunk] = np.where(hit, self.owner[j], -1)
            dist[lo:lo + chunk] = best
        return owner, dist

    def events(self):
        """Bearings where the visible footprint can change: ``(bearing, distance, owner)`` arrays.

        These are the footprint vertices within range plus the points where
        boundary segments cross the range circle.
        """
        if self._events is not None:
            return self._events
        b, d, o = [], [], []
        if len(self.owner):
            r = np.hypot(self.a[:, 0], self.a[:, 1])
            keep = (r <= self.max_range_m) & (r > 0)
            b.append(np.degrees(np.arctan2(self.a[keep, 0], self.a[keep, 1])))
            d.append(r[keep])
            o.append(self.owner[keep])
            # |a + s e|^2 = R^2
            qa = np.einsum("ij,ij->i", self.e, self.e)
            qb = 2.0 * np.einsum("ij,ij->i", self.a, self.e)
            qc = np.einsum("ij,ij->i", self.a, self.a) - self.max_range_m ** 2
            disc = qb * qb - 4 * qa * qc
            real = disc >= 0
            root = np.sqrt(np.where(real, disc, 0.0))
            for sign in (-1.0, 1.0):
                s = (-qb + sign * root) / (2 * qa)
                m = real & (s >= 0) & (s <= 1)
                p = self.a[m] + s[m, None] * self.e[m]
                b.append(np.degrees(np.arctan2(p[:, 0], p[:, 1])))
                d.append(np.full(len(p), self.max_range_m))
                o.append(self.owner[m])
        if b:
            self._events = (np.mod(np.concatenate(b), 360.0), np.concatenate(d), np.concatenate(o))
        else:
            self._events = (np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))
        return self._events


def cast_ray(origin, bearing_deg, max_range_m, candidates):
    """Nearest footprint hit along one bearing as ``(footprint_id, distance_m)``, or None.

    A camera standing inside a footprint hits that footprint at distance 0.
    """
    scene = candidates if isinstance(candidates, RayScene) else RayScene(origin, candidates, max_range_m)
    owner, dist = scene.cast([bearing_deg])
    if owner[0] < 0:
        return None
    return scene.ids[owner[0]], float(dist[0])


def _result(scene, weights, dist_sum, dist_n, width, rays):
    votes = {scene.ids[k]: w for k, w in weights.items() if w > 0}
    mean_d = {scene.ids[k]: dist_sum[k] / dist_n[k] for k in weights if dist_n.get(k)}
    if not votes:
        return MatchResult(None, {}, 0.0, rays, {})
    winner = min(votes, key=lambda i: (-votes[i], mean_d.get(i, math.inf), i))
    conf = min(1.0, votes[winner] / width) if width > 0 else 0.0
    return MatchResult(winner, votes, conf, rays, mean_d)


def _scene(origin, candidates, max_range_m):
    if isinstance(candidates, RayScene):
        return candidates
    return RayScene(origin, candidates, max_range_m)


def match_dense(origin, bearings, candidates, n_rays, max_range_m=DEFAULT_MAX_RANGE_M):
    """Vote with ``n_rays`` equally spaced rays over the bearing interval (endpoints included).

    Each ray carries ``width / n_rays`` degrees of angular weight.
    """
    if n_rays < 2:
        raise InvalidValue("n_rays", n_rays, "need at least 2 rays")
    scene = _scene(origin, candidates, max_range_m)
    start, width = _span(bearings)
    offsets = np.linspace(0.0, width, n_rays)
    owner, dist = scene.cast(start + offsets)
    weights, dist_sum, dist_n = {}, {}, {}
    step = width / n_rays
    for k in np.unique(owner[owner >= 0]):
        sel = owner == k
        cnt = int(np.count_nonzero(sel))
        weights[int(k)] = cnt * step
        dist_sum[int(k)] = float(dist[sel].sum())
        dist_n[int(k)] = cnt
    return _result(scene, weights, dist_sum, dist_n, width, n_rays)


def match_bisect(origin, bearings, candidates, eps_deg=DEFAULT_EPS_DEG, max_range_m=DEFAULT_MAX_RANGE_M):
    """Vote by recursive interval bisection over the bearing interval.

    Rays are cast at both ends of an interval. When both ends agree and no
    other footprint can show up in between, the whole interval goes to that
    outcome; otherwise the interval is halved, down to ``eps_deg``, where
    each end takes half the width.

    "Can show up in between" is decided from the scene's event bearings:
    a vertex of another footprint lying inside the interval and nearer than
    the endpoint hits (or, for two misses, any vertex or range-circle
    crossing). For convex, non-overlapping footprints this makes agreeing
    endpoints a proof that the interval is uniform.
    """
    if not eps_deg > 0:
        raise InvalidValue("eps_deg", eps_deg, "must be > 0")
    scene = _scene(origin, candidates, max_range_m)
    start, width = _span(bearings)

    ev_b, ev_d, ev_o = scene.events()
    ev_off = np.mod(ev_b - start, 360.0)
    order = np.argsort(ev_off, kind="stable")
    ev_off, ev_d, ev_o = ev_off[order], ev_d[order], ev_o[order]

    cache = {}

    def ray(off):
        if off not in cache:
            o, d = scene.cast([start + off])
            cache[off] = (int(o[0]), float(d[0]))
        return cache[off]

    def uniform(lo, hi, k, d_lo, d_hi):
        i = np.searchsorted(ev_off, lo, side="right")
        j = np.searchsorted(ev_off, hi, side="left")
        if i >= j:
            return True
        if k < 0:
            return False
        reach = max(d_lo, d_hi)
        sel = slice(i, j)
        return not np.any((ev_o[sel] != k) & (ev_d[sel] < reach))

    weights, dist_sum, dist_n = {}, {}, {}

    def credit(k, w):
        if k >= 0:
            weights[k] = weights.get(k, 0.0) + w

    stack = [(0.0, width)]
    while stack:
        lo, hi = stack.pop()
        (k_lo, d_lo), (k_hi, d_hi) = ray(lo), ray(hi)
        if k_lo == k_hi and uniform(lo, hi, k_lo, d_lo, d_hi):
            credit(k_lo, hi - lo)
        elif hi - lo < eps_deg:
            credit(k_lo, 0.5 * (hi - lo))
            credit(k_hi, 0.5 * (hi - lo))
        else:
            mid = 0.5 * (lo + hi)
            stack.append((mid, hi))
            stack.append((lo, mid))

    for k, d in cache.values():
        if k >= 0:
            dist_sum[k] = dist_sum.get(k, 0.0) + d
            dist_n[k] = dist_n.get(k, 0) + 1
            weights.setdefault(k, 0.0)
    return _result(scene, weights, dist_sum, dist_n, width, len(cache))


def match_crop(crop, cam, store, buffer_m=DEFAULT_BUFFER_M, eps_deg=DEFAULT_EPS_DEG,
               max_range_m=DEFAULT_MAX_RANGE_M):
    """Full matching step for one crop: buffer query, FoV bearings, bisection voting."""
    candidates = store.query_buffer(cam.origin, buffer_m)
    return match_bisect(cam.origin, crop_bearings(crop, cam), candidates, eps_deg, max_range_m)
