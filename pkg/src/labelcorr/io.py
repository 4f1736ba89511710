"""File formats: 8-bit PNG rasters, GeoJSON line work, JSON documents."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .annot import Polyline, clean_points
from .vectorize import LineGraph, graph_from_polylines, graph_to_geojson

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class InputError(Exception):
    """Unreadable or malformed user input (maps to CLI exit code 2)."""


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: no such file")
    return p


def read_json(path) -> dict:
    p = _require(path)
    text = p.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")


# -- rasters -------------------------------------------------------------------

def _open_png(path) -> Image.Image:
    p = _require(path)
    with open(p, "rb") as fh:
        if fh.read(8) != PNG_MAGIC:
            raise InputError(f"{p}: not a PNG file")
    try:
        im = Image.open(p)
        im.load()
    except OSError as exc:
        raise InputError(f"{p}: unreadable PNG ({exc})") from None
    return im


def load_image(path) -> np.ndarray:
    """8-bit PNG as floats in [0, 1]: ``(H, W)`` for gray, ``(H, W, 3)`` for colour."""
    im = _open_png(path)
    if im.mode in ("1", "L", "LA", "I", "I;16"):
        arr = np.asarray(im.convert("L"), dtype=float)
    else:
        arr = np.asarray(im.convert("RGB"), dtype=float)
    return arr / 255.0


def load_mask(path) -> np.ndarray:
    return np.asarray(_open_png(path).convert("L")) >= 128


def save_mask(path, mask):
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), "L").save(path)


def save_image(path, img):
    arr = np.round(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr, "L" if arr.ndim == 2 else "RGB").save(path)


# -- vectors -------------------------------------------------------------------

def _apply_affine(pts: np.ndarray, affine) -> np.ndarray:
    a, b, c, d, e, f = (float(affine[k]) for k in "abcdef")
    return np.column_stack([a * pts[:, 0] + b * pts[:, 1] + c, d * pts[:, 0] + e * pts[:, 1] + f])


def polylines_from_geojson(doc: dict, affine=None, source: str = "<geojson>") -> list[Polyline]:
    """LineString / MultiLineString features as polylines in pixel space.

    ``affine`` (keys ``a``..``f``) maps world ``(x, y)`` to pixel
    ``(a x + b y + c, d x + e y + f)`` for data not already in pixel space.
    """
    if doc.get("type") != "FeatureCollection":
        raise InputError(f"{source}: expected a GeoJSON FeatureCollection")
    lines = []
    for k, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        fid = feat.get("id", props.get("id", k))
        if geom.get("type") == "LineString":
            parts = [geom.get("coordinates", [])]
        elif geom.get("type") == "MultiLineString":
            parts = geom.get("coordinates", [])
        else:
            raise InputError(f"{source}: feature {k} is not a LineString")
        for j, coords in enumerate(parts):
            pts = clean_points(np.asarray(coords, dtype=float)[:, :2] if len(coords) else [])
            if affine is not None and len(pts):
                pts = clean_points(_apply_affine(pts, affine))
            if len(pts) < 2:
                continue
            pid = str(fid) if len(parts) == 1 else f"{fid}.{j}"
            try:
                lines.append(Polyline(pts, id=pid, properties=dict(props)))
            except ValueError as exc:
                raise InputError(f"{source}: {exc}") from None
    return lines


def read_polylines(path, affine_path=None) -> list[Polyline]:
    affine = read_json(affine_path) if affine_path else None
    return polylines_from_geojson(read_json(path), affine, str(path))


def polylines_to_geojson(lines) -> dict:
    feats = []
    for line in lines:
        feats.append({
            "type": "Feature",
            "id": line.id,
            "geometry": {"type": "LineString",
                         "coordinates": [[float(x), float(y)] for x, y in line.points]},
            "properties": dict(line.properties),
        })
    return {"type": "FeatureCollection", "features": feats}


def read_graph(path) -> LineGraph:
    return graph_from_polylines(read_polylines(path))


def write_graph(path, graph: LineGraph):
    write_json(path, graph_to_geojson(graph))
