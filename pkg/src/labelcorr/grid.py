"""Raster containers and the Heaviside / region-mean primitives.

Images are float arrays in [0, 1] shaped ``(H, W)`` or ``(H, W, C)`` with
``C`` in {1, 3}. Level sets are finite float arrays ``(H, W)``; masks are
boolean arrays ``(H, W)``. Row index is y, column index is x.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

REC601 = np.array([0.299, 0.587, 0.114])


class RegionMeans(NamedTuple):
    c1: np.ndarray
    c2: np.ndarray
    degenerate: bool


def as_image(img) -> np.ndarray:
    """Validate an image and return it as float64 ``(H, W, C)``."""
    arr = np.asarray(img, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be (H, W), (H, W, 1) or (H, W, 3); got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image samples must lie in [0, 1]")
    return arr


def as_levelset(ls) -> np.ndarray:
    arr = np.asarray(ls, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"level set must be 2-D; got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("level set contains non-finite values")
    return arr


def sign_field(mask) -> np.ndarray:
    """+1 where ``mask`` is set, -1 elsewhere."""
    return np.where(np.asarray(mask, dtype=bool), 1.0, -1.0)


def heaviside(ls) -> np.ndarray:
    """Binary mask of a level set, with H(0) = 1."""
    return as_levelset(ls) >= 0.0


def to_intensity(img) -> np.ndarray:
    """Collapse an image to one channel (Rec.601 luminance for RGB)."""
    arr = as_image(img)
    if arr.shape[2] == 1:
        return arr[:, :, 0].copy()
    return np.clip(arr @ REC601, 0.0, 1.0)


def region_means(img, mask) -> RegionMeans:
    """Per-channel means inside (``c1``) and outside (``c2``) ``mask``.

    An empty region takes the global image mean and sets ``degenerate``.
    """
    arr = as_image(img)
    m = np.asarray(mask, dtype=bool)
    if m.shape != arr.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {arr.shape[:2]}")
    n_in = int(m.sum())
    n_out = m.size - n_in
    global_mean = arr.reshape(-1, arr.shape[2]).mean(axis=0)
    c1 = arr[m].mean(axis=0) if n_in else global_mean.copy()
    c2 = arr[~m].mean(axis=0) if n_out else global_mean.copy()
    return RegionMeans(c1, c2, n_in == 0 or n_out == 0)


def sq_residual(img, c) -> np.ndarray:
    """Squared color distance sum_ch (u_ch - c_ch)^2 per pixel."""
    arr = as_image(img)
    return np.sum((arr - np.asarray(c, dtype=float).reshape(1, 1, -1)) ** 2, axis=2)


def prepare_image(img, color_mode: str = "multichannel") -> np.ndarray:
    """Return the ``(H, W, C)`` array the segmentation energies run on."""
    if color_mode == "multichannel":
        return as_image(img)
    if color_mode == "luminance":
        return to_intensity(img)[:, :, None]
    raise ValueError(f"unknown color_mode {color_mode!r}")
