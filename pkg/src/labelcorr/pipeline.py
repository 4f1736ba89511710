"""Tile-level orchestration of label correction over a full map.

Each annotation polyline is cut into overlapping windows; every window is
corrected independently and the accepted masks are OR-merged onto the full
canvas. Results are collected in window order, so the merged output does not
depend on how many worker processes ran.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .annot import (DEFAULT_ANNOTATION_RADIUS, DEFAULT_POI_RADIUS, Polyline, TileWindow,
                    buffer_rasterize, tile_windows)
from .grid import as_image
from .lca import LcaOptions, lca_run

log = logging.getLogger(__name__)


@dataclass
class TileReport:
    window: TileWindow
    line_id: str
    verdict: str
    affine: dict
    iterations: int
    lam: float
    overlap: float
    contrast: float
    energies: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        w = self.window
        return {
            "line_id": self.line_id,
            "window": {"x0": w.x0, "y0": w.y0, "width": w.width, "height": w.height},
            "verdict": self.verdict,
            "affine": self.affine,
            "iterations": self.iterations,
            "lambda": self.lam,
            "overlap": self.overlap,
            "contrast": self.contrast,
            "energies": self.energies,
            "flags": self.flags,
        }


@dataclass
class MapCorrection:
    mask: np.ndarray
    tiles: list

    @property
    def n_rejected(self) -> int:
        return sum(t.verdict == "rejected_false" for t in self.tiles)

    def report(self) -> dict:
        return {
            "n_tiles": len(self.tiles),
            "n_rejected": self.n_rejected,
            "tiles": [t.to_dict() for t in self.tiles],
        }


def _shifted(line: Polyline, x0: int, y0: int) -> Polyline:
    return Polyline(line.points - np.array([x0, y0], dtype=float), id=line.id)


def correct_tile(img, line: Polyline, window: TileWindow, opts: LcaOptions,
                 annotation_radius: float = DEFAULT_ANNOTATION_RADIUS,
                 poi_radius: float = DEFAULT_POI_RADIUS):
    """Run LCA for one line inside one window; returns (tile mask, TileReport)."""
    rows, cols = window.slices
    tile = img[rows, cols]
    local = _shifted(line, window.x0, window.y0)
    shape = tile.shape[:2]
    prior = buffer_rasterize([local], annotation_radius, shape)
    poi = buffer_rasterize([local], poi_radius, shape)
    res = lca_run(tile, prior, poi, opts)
    rep = TileReport(window, line.id, res.verdict, res.final_affine.to_dict(), res.iterations,
                     res.lam, res.overlap, res.contrast, res.trace.energies, list(res.flags))
    return res.corrected_mask, rep


def annotation_in_window(line: Polyline, window: TileWindow, radius: float) -> bool:
    local = _shifted(line, window.x0, window.y0)
    return bool(buffer_rasterize([local], radius, (window.height, window.width)).any())


def _work(args):
    return correct_tile(*args)


def correct_map(img, lines, opts: LcaOptions | None = None, *,
                annotation_radius: float = DEFAULT_ANNOTATION_RADIUS,
                poi_radius: float = DEFAULT_POI_RADIUS, window: int = 128, overlap: int = 32,
                workers: int = 1) -> MapCorrection:
    """Correct every annotation line over the map and OR-merge accepted tiles."""
    opts = opts or LcaOptions()
    img = as_image(img)
    h, w = img.shape[:2]
    by_id = {}
    for idx, line in enumerate(lines):
        by_id[line.id or str(idx)] = line
    windows = tile_windows(lines, (h, w), window=window, overlap=overlap, buffer=poi_radius)
    jobs = []
    for win in windows:
        line = by_id[win.source_polyline_ids[0]]
        # windows holding only PoI margin carry no annotation to correct
        if annotation_in_window(line, win, annotation_radius):
            jobs.append((img, line, win, opts, annotation_radius, poi_radius))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_work, jobs))
    else:
        results = [_work(j) for j in jobs]

    merged = np.zeros((h, w), dtype=bool)
    reports = []
    for (tile_mask, rep) in results:
        rows, cols = rep.window.slices
        if rep.verdict == "accepted":
            merged[rows, cols] |= tile_mask
        reports.append(rep)
    if reports and all(r.verdict == "rejected_false" for r in reports):
        log.warning("all %d tiles were rejected as false annotations", len(reports))
    return MapCorrection(merged, reports)


@dataclass(frozen=True)
class PipelineConfig:
    """Run settings shared by the CLI subcommands (JSON config schema).

    Keys: ``annotation_radius``, ``poi_radius``, ``window``, ``overlap``,
    ``workers``, ``tol``, ``control_spacing`` and ``lca`` (an object with
    :class:`LcaOptions` fields).
    """
    annotation_radius: float = DEFAULT_ANNOTATION_RADIUS
    poi_radius: float = DEFAULT_POI_RADIUS
    window: int = 128
    overlap: int = 32
    workers: int = 1
    tol: float = 5.0
    control_spacing: float = 50.0
    lca: LcaOptions = field(default_factory=LcaOptions)

    def __post_init__(self):
        if self.annotation_radius < 0 or self.poi_radius < 0:
            raise ValueError("radii must be >= 0")
        if self.window <= 2 * self.overlap or self.overlap < 0:
            raise ValueError("window must exceed twice the overlap")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.tol <= 0 or self.control_spacing <= 0:
            raise ValueError("tol and control_spacing must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        lca = d.pop("lca", {}) or {}
        lca_known = set(LcaOptions.__dataclass_fields__)
        bad = sorted(set(lca) - lca_known)
        if bad:
            raise ValueError(f"unknown lca keys: {', '.join(bad)}")
        if "affine_step_sizes" in lca:
            lca["affine_step_sizes"] = tuple(lca["affine_step_sizes"])
        return cls(lca=LcaOptions(**lca), **d)

    def override(self, **kw) -> "PipelineConfig":
        """Copy with every non-``None`` keyword replaced (``lam`` goes to ``lca``)."""
        lam = kw.pop("lam", None)
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        if lam is not None:
            cfg = replace(cfg, lca=replace(cfg.lca, lam=lam))
        return cfg
