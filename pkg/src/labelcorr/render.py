"""Overlay rendering: masks and line graphs drawn on top of the map."""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .grid import as_image

GREEN = (0, 200, 0)
RED = (230, 0, 0)
BLUE = (0, 90, 255)


def render_overlay(img, mask=None, gt_mask=None, graphs=(), alpha: float = 1.0) -> np.ndarray:
    """8-bit RGB overlay of ``mask`` (and ``graphs``) on the map.

    With ``gt_mask``, true-positive pixels are green and false positives red;
    without it the whole mask is green. Graph edges are drawn in blue. With
    nothing to draw the map comes back unchanged (converted to RGB).
    """
    base = as_image(img)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    out = np.round(base * 255.0).astype(np.uint8)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if gt_mask is not None:
            gt_mask = np.asarray(gt_mask, dtype=bool)
            layers = ((mask & gt_mask, GREEN), (mask & ~gt_mask, RED))
        else:
            layers = ((mask, GREEN),)
        for sel, color in layers:
            blend = (1 - alpha) * out[sel] + alpha * np.array(color)
            out[sel] = np.round(blend).astype(np.uint8)
    if graphs:
        im = Image.fromarray(out, "RGB")
        draw = ImageDraw.Draw(im)
        for graph in graphs:
            for e in graph.edges:
                draw.line([(float(x), float(y)) for x, y in e.geometry.points], fill=BLUE, width=1)
        out = np.asarray(im).copy()
    return out
