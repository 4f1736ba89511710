"""Annotation masks from vector polylines: buffers, PoI masks, tile windows.

Pixel ``(row=j, col=i)`` has its center at ``(x=i, y=j)``; membership of a
buffer is decided at pixel centers with Euclidean point-to-segment distance,
which gives round end caps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_ANNOTATION_RADIUS = 5.0
DEFAULT_POI_RADIUS = 30.0

_EPS = 1e-9
THIN_RADIUS = math.sqrt(0.5)      # below this the centre rule alone can break a line apart


@dataclass
class Polyline:
    points: np.ndarray
    id: str = ""
    properties: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError(f"polyline {self.id!r} needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"polyline {self.id!r} has non-finite coordinates")
        if np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
            raise ValueError(f"polyline {self.id!r} has repeated consecutive points")
        self.points = pts

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))

    def bounds(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return lo[0], lo[1], hi[0], hi[1]


@dataclass(frozen=True)
class TileWindow:
    x0: int
    y0: int
    width: int
    height: int
    source_polyline_ids: tuple = ()

    @property
    def slices(self):
        return slice(self.y0, self.y0 + self.height), slice(self.x0, self.x0 + self.width)


def clean_points(points) -> np.ndarray:
    """Drop consecutive duplicate vertices."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
    return pts[keep]


def segment_distance(px, py, a, b):
    """Distance from points ``(px, py)`` to the segment ``a``-``b``."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    if ll == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / ll, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def segment_distance_inf(px, py, a, b):
    """Chebyshev (L-infinity) distance from points ``(px, py)`` to the segment ``a``-``b``."""
    u = np.asarray(px, dtype=float) - a[0]
    v = np.asarray(py, dtype=float) - a[1]
    dx, dy = b[0] - a[0], b[1] - a[1]
    # max(|u - t dx|, |v - t dy|) is convex piecewise linear in t: check the kinks
    cands = [np.zeros_like(u), np.ones_like(u)]
    for num, den in ((u, dx), (v, dy), (u - v, dx - dy), (u + v, dx + dy)):
        if den != 0:
            cands.append(np.clip(num / den, 0.0, 1.0))
    return np.min([np.maximum(np.abs(u - t * dx), np.abs(v - t * dy)) for t in cands], axis=0)


def buffer_rasterize(lines, radius: float, canvas) -> np.ndarray:
    """Rasterize the ``radius`` buffer of ``lines`` onto a ``(H, W)`` canvas.

    A pixel is set iff its center lies within ``radius`` of some segment, or
    the segment itself crosses the pixel's open square. The second rule only
    matters below ``radius = sqrt(2) / 2`` and keeps thin buffers connected;
    ``radius = 0`` gives a 1-px line raster.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    h, w = int(canvas[0]), int(canvas[1])
    out = np.zeros((h, w), dtype=bool)
    reach = radius + _EPS
    for line in lines:
        pts = line.points if isinstance(line, Polyline) else np.asarray(line, dtype=float)
        for a, b in zip(pts[:-1], pts[1:]):
            x0 = max(int(math.floor(min(a[0], b[0]) - reach)), 0)
            x1 = min(int(math.ceil(max(a[0], b[0]) + reach)), w - 1)
            y0 = max(int(math.floor(min(a[1], b[1]) - reach)), 0)
            y1 = min(int(math.ceil(max(a[1], b[1]) + reach)), h - 1)
            if x0 > x1 or y0 > y1:
                continue
            ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
            hit = segment_distance(xs, ys, a, b) <= reach
            if radius < THIN_RADIUS:
                hit |= segment_distance_inf(xs, ys, a, b) < 0.5
            out[y0:y1 + 1, x0:x1 + 1] |= hit
    return out


def make_poi(lines, canvas, radius: float = DEFAULT_POI_RADIUS) -> np.ndarray:
    """Pixels-of-interest mask: the wide buffer the corrected label may occupy."""
    return buffer_rasterize(lines, radius, canvas)


def _axis_starts(lo: int, hi: int, size: int, window: int, step: int) -> list[int]:
    """Window origins along one axis covering [lo, hi] within [0, size)."""
    if size <= window:
        return [0]
    starts = []
    s = max(0, min(lo, size - window))
    while True:
        starts.append(s)
        if s + window > hi:
            break
        nxt = s + step
        if nxt + window > size:
            nxt = size - window
            if nxt <= s:
                break
            starts.append(nxt)
            break
        s = nxt
    return starts


def tile_windows(lines, map_dims, window: int = 128, overlap: int = 32,
                 buffer: float = DEFAULT_POI_RADIUS) -> list[TileWindow]:
    """Per-line processing windows covering each line's ``buffer`` extent.

    Windows step by ``window - overlap`` inside the clipped bounding box of the
    buffered line; windows that contain no buffered pixel are dropped.
    """
    if window <= 2 * overlap:
        raise ValueError("window must exceed twice the overlap")
    h, w = int(map_dims[0]), int(map_dims[1])
    if min(h, w) < 32:
        raise ValueError("map must be at least 32x32 pixels")
    win_h, win_w = min(window, h), min(window, w)
    step = window - overlap
    tiles = []
    for idx, line in enumerate(lines):
        lid = line.id or str(idx)
        bx0, by0, bx1, by1 = line.bounds()
        x_lo = max(int(math.floor(bx0 - buffer)), 0)
        x_hi = min(int(math.ceil(bx1 + buffer)), w - 1)
        y_lo = max(int(math.floor(by0 - buffer)), 0)
        y_hi = min(int(math.ceil(by1 + buffer)), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        covered = buffer_rasterize([line], buffer, (h, w))
        for y0 in _axis_starts(y_lo, y_hi, h, win_h, step):
            for x0 in _axis_starts(x_lo, x_hi, w, win_w, step):
                if covered[y0:y0 + win_h, x0:x0 + win_w].any():
                    tiles.append(TileWindow(x0, y0, win_w, win_h, (lid,)))
    return tiles
