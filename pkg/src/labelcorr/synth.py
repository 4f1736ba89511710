"""Deterministic synthetic map scenes with ground truth and corrupted labels.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``; the draw
order is fixed, so a (spec, seed) pair reproduces bit-identical rasters and
geometry on any platform running the same numpy major version.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .annot import Polyline, buffer_rasterize

BACKGROUND_RGB = (0.92, 0.90, 0.84)
CLUTTER_GRAY = 0.70


@dataclass(frozen=True)
class SynthSpec:
    canvas: tuple[int, int] = (256, 256)
    line_width: float = 5.0
    line_contrast: float = 0.6
    background: str = "flat"        # flat | noise | clutter
    noise_sigma: float = 0.05
    clutter_density: float = 0.02   # fraction of canvas area covered by clutter items
    n_lines: int = 2
    style: str = "solid"            # solid | dashed
    dash_period: float = 12.0
    dash_duty: float = 0.6
    channels: int = 3

    def __post_init__(self):
        if self.line_width < 1:
            raise ValueError("line_width must be >= 1")
        if not 0 < self.line_contrast <= 1:
            raise ValueError("line_contrast must lie in (0, 1]")
        if self.noise_sigma < 0 or self.clutter_density < 0:
            raise ValueError("noise_sigma and clutter_density must be >= 0")
        if self.background not in ("flat", "noise", "clutter"):
            raise ValueError(f"unknown background {self.background!r}")
        if self.style not in ("solid", "dashed"):
            raise ValueError(f"unknown style {self.style!r}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.n_lines < 0:
            raise ValueError("n_lines must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "canvas" in d:
            d["canvas"] = tuple(int(v) for v in d["canvas"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        return d


@dataclass(frozen=True)
class CorruptionSpec:
    translate_max: float = 0.0
    rotate_max: float = 0.0         # radians
    scale_jitter: float = 0.0
    shear_max: float = 0.0
    false_fraction: float = 0.0
    drop_fraction: float = 0.0
    false_clearance: float = 40.0   # px between a false line and any true line

    def __post_init__(self):
        for name in ("translate_max", "rotate_max", "scale_jitter", "shear_max", "false_clearance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("false_fraction", "drop_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LineTruth:
    id: str
    source_id: str
    status: str                     # true | false | dropped
    affine: dict = field(default_factory=dict)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _random_polyline(rng, canvas, margin, idx) -> Polyline:
    h, w = canvas
    for _ in range(1000):
        n_seg = int(rng.integers(1, 4))
        start = np.array([rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)])
        heading = rng.uniform(0, 2 * math.pi)
        pts = [start]
        for k in range(n_seg):
            if k:
                turn = rng.uniform(math.radians(20), math.radians(60)) * rng.choice([-1.0, 1.0])
                heading += turn
            seg_len = rng.uniform(0.25, 0.45) * min(h, w)
            pts.append(pts[-1] + seg_len * np.array([math.cos(heading), math.sin(heading)]))
        arr = np.round(np.array(pts), 2)
        if (arr[:, 0].min() >= margin and arr[:, 0].max() <= w - 1 - margin
                and arr[:, 1].min() >= margin and arr[:, 1].max() <= h - 1 - margin):
            return Polyline(arr, id=f"gt{idx}")
    raise RuntimeError("could not place a polyline inside the canvas")


def _dash_pieces(line: Polyline, period: float, duty: float) -> list[Polyline]:
    """Split a polyline into dashes of length ``period * duty``."""
    pts = line.points
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    def at(s):
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = (s - cum[i]) / seg_len[i]
        return pts[i] + t * seg[i]

    pieces = []
    s = 0.0
    while s < total:
        e = min(s + period * duty, total)
        inner = [p for c, p in zip(cum, pts) if s < c < e]
        chunk = np.array([at(s), *inner, at(e)])
        chunk = chunk[np.r_[True, np.any(np.diff(chunk, axis=0) != 0, axis=1)]]
        if len(chunk) >= 2:
            pieces.append(Polyline(chunk, id=line.id))
        s += period
    return pieces


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def gen_scene(spec: SynthSpec, seed: int):
    """Render a synthetic scanned map.

    Returns
    -------
    image : ndarray, shape (H, W, C), values on the 8-bit lattice in [0, 1]
    gt_lines : list of Polyline
    gt_mask : ndarray of bool
        Buffer of the drawn line geometry at ``line_width / 2``.
    """
    rng = make_rng(seed)
    h, w = spec.canvas
    base = np.array(BACKGROUND_RGB if spec.channels == 3 else (BACKGROUND_RGB[1],))
    img = np.broadcast_to(base, (h, w, spec.channels)).copy()

    if spec.background == "clutter":
        n_items = int(round(spec.clutter_density * h * w / 40.0))
        clutter = []
        discs = np.zeros((h, w), dtype=bool)
        for _ in range(n_items):
            cx, cy = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
            if rng.uniform() < 0.5:
                ang = rng.uniform(0, math.pi)
                ln = rng.uniform(6, 16)
                d = 0.5 * ln * np.array([math.cos(ang), math.sin(ang)])
                clutter.append(np.array([[cx, cy] - d, [cx, cy] + d]))
            else:
                r = rng.uniform(2.0, 4.0)
                yy, xx = np.ogrid[:h, :w]
                discs |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        strokes = buffer_rasterize(clutter, 1.0, (h, w)) if clutter else np.zeros((h, w), bool)
        img[strokes | discs] = CLUTTER_GRAY

    gt_lines = [_random_polyline(rng, (h, w), margin=8, idx=i) for i in range(spec.n_lines)]
    drawn = gt_lines
    if spec.style == "dashed":
        drawn = [p for line in gt_lines for p in _dash_pieces(line, spec.dash_period, spec.dash_duty)]
    gt_mask = buffer_rasterize(drawn, spec.line_width / 2.0, (h, w))
    img[gt_mask] = np.clip(base - spec.line_contrast, 0.0, 1.0)

    if spec.background == "noise" or (spec.background == "clutter" and spec.noise_sigma > 0):
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return _quantize(img), gt_lines, gt_mask


def _affine_about(points, center, theta, scale, shear, t):
    c, s = math.cos(theta), math.sin(theta)
    m = scale * np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    return (np.asarray(points) - center) @ m.T + center + np.asarray(t)


def corrupt_annotations(gt_lines, cspec: CorruptionSpec, seed: int, canvas, avoid=None):
    """Misalign, falsify and drop ground-truth lines to mimic external vector data.

    ``avoid`` is the ground-truth mask false lines must keep clear of
    (``cspec.false_clearance`` px, relaxed if the canvas leaves no room).
    Returns the corrupted lines and one :class:`LineTruth` per input line.
    """
    rng = make_rng(seed)
    h, w = int(canvas[0]), int(canvas[1])
    if avoid is None:
        avoid = buffer_rasterize(gt_lines, 1.0, (h, w))
    dist = ndimage.distance_transform_edt(~avoid) if avoid.any() else np.full((h, w), np.inf)

    out, truth = [], []
    for line in gt_lines:
        drop = rng.uniform() < cspec.drop_fraction
        false = rng.uniform() < cspec.false_fraction
        theta = rng.uniform(-cspec.rotate_max, cspec.rotate_max)
        scale = 1.0 + rng.uniform(-cspec.scale_jitter, cspec.scale_jitter)
        shear = rng.uniform(-cspec.shear_max, cspec.shear_max)
        t = rng.uniform(-cspec.translate_max, cspec.translate_max, size=2)
        affine = {"tx": float(t[0]), "ty": float(t[1]), "theta": float(theta),
                  "scale": float(scale), "shear": float(shear)}
        if drop:
            truth.append(LineTruth(line.id, line.id, "dropped", affine))
            continue
        if false:
            pts, affine = _place_false(rng, line, dist, cspec.false_clearance, (h, w))
            status = "false"
        else:
            if theta == 0 and scale == 1 and shear == 0 and not t.any():
                pts = line.points.copy()
            else:
                pts = _affine_about(line.points, line.points.mean(axis=0), theta, scale, shear, t)
            status = "true"
        out.append(Polyline(pts, id=line.id))
        truth.append(LineTruth(line.id, line.id, status, affine))
    return out, truth


def _place_false(rng, line, dist, clearance, canvas):
    h, w = canvas
    center = line.points.mean(axis=0)
    need = clearance
    while True:
        for _ in range(200):
            theta = rng.uniform(0, 2 * math.pi)
            rot = _affine_about(line.points, center, theta, 1.0, 0.0, (0.0, 0.0)) - center
            lo, hi = rot.min(axis=0), rot.max(axis=0)
            # centers that keep the rotated line 2 px inside the canvas
            cx_lo, cx_hi = 2 - lo[0], w - 3 - hi[0]
            cy_lo, cy_hi = 2 - lo[1], h - 3 - hi[1]
            if cx_lo > cx_hi or cy_lo > cy_hi:
                continue
            target = np.array([rng.uniform(cx_lo, cx_hi), rng.uniform(cy_lo, cy_hi)])
            pts = rot + target
            foot = buffer_rasterize([pts], 1.0, canvas)
            if dist[foot].min() >= need:
                tr = target - center
                return pts, {"tx": float(tr[0]), "ty": float(tr[1]), "theta": float(theta),
                             "scale": 1.0, "shear": 0.0}
        if need <= 1.0:
            raise RuntimeError("no room on the canvas for a false annotation")
        need = max(need * 0.75, 1.0)
