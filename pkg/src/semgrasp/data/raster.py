"""Polygon rasterization on the pixel-center grid."""
from __future__ import annotations

import numpy as np


def rasterize_mask(polygon, height: int, width: int) -> np.ndarray:
    """Even-odd fill of ``polygon`` into an ``(height, width)`` uint8 bitmap.

    Pixel (r, c) is set when its center (x=c, y=r) is inside.  Edges use the
    half-open rule so that abutting polygons never share a pixel.
    """
    mask = np.zeros((height, width), dtype=np.uint8)
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if len(poly) < 3:
        return mask
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    lo = max(0, int(np.ceil(y0.min())))
    hi = min(height - 1, int(np.floor(y0.max())))
    if hi < lo:
        return mask
    rows = np.arange(lo, hi + 1, dtype=float)[:, None]
    # edge crosses the horizontal line y when exactly one endpoint is above
    crosses = (y0 <= rows) != (y1 <= rows)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rows - y0) / (y1 - y0)
    xs = np.where(crosses, x0 + t * (x1 - x0), np.inf)
    xs.sort(axis=1)
    cols = np.arange(width, dtype=float)
    for k, row_xs in enumerate(xs):
        row_xs = row_xs[np.isfinite(row_xs)]
        if len(row_xs) < 2:
            continue
        # count crossings strictly right of each pixel center
        n_right = len(row_xs) - np.searchsorted(row_xs, cols, side="right")
        mask[lo + k] = (n_right % 2).astype(np.uint8)
    return mask


def point_in_polygon(polygon, x: float, y: float) -> bool:
    """Even-odd test with the same boundary convention as rasterize_mask."""
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if len(poly) < 3:
        return False
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    crosses = (y0 <= y) != (y1 <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
    return bool(np.count_nonzero(crosses & (xs > x)) % 2)
