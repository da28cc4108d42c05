"""Scan conversion in pixel coordinates.

Pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)``; a pixel is filled when its
centre ``(i+0.5, j+0.5)`` lies inside the shape (even-odd rule).
"""

from __future__ import annotations

import math

import numpy as np


def fill_polygon(bits: np.ndarray, poly) -> None:
    """Scanline fill of one polygon into ``bits[j, i]`` (in place)."""
    p = np.asarray(poly, dtype=float)
    h, w = bits.shape
    if len(p) < 3:
        return
    ys = p[:, 1]
    j0 = max(int(math.floor(ys.min() - 0.5)), 0)
    j1 = min(int(math.ceil(ys.max() - 0.5)), h - 1)
    xa, ya = p[:, 0], p[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    for j in range(j0, j1 + 1):
        yc = j + 0.5
        crosses = ((ya <= yc) & (yc < yb)) | ((yb <= yc) & (yc < ya))
        if not crosses.any():
            continue
        t = (yc - ya[crosses]) / (yb[crosses] - ya[crosses])
        xs = np.sort(xa[crosses] + t * (xb[crosses] - xa[crosses]))
        for k in range(0, len(xs) - 1, 2):
            # centres with xl <= i + 0.5 < xr
            i0 = max(int(math.ceil(xs[k] - 0.5)), 0)
            i1 = min(int(math.ceil(xs[k + 1] - 0.5)) - 1, w - 1)
            if i1 >= i0:
                bits[j, i0 : i1 + 1] = True


def raster_triangle(tri, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixels whose centres fall in a triangle, plus barycentric weights.

    Returns ``(jj, ii, bary)`` with ``bary`` shaped (k, 3). Degenerate
    triangles cover nothing.
    """
    t = np.asarray(tri, dtype=float)
    h, w = shape
    (x0, y0), (x1, y1), (x2, y2) = t[:, :2]
    det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    if abs(det) < 1e-12:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    i0 = max(int(math.floor(t[:, 0].min() - 0.5)), 0)
    i1 = min(int(math.ceil(t[:, 0].max() - 0.5)), w - 1)
    j0 = max(int(math.floor(t[:, 1].min() - 0.5)), 0)
    j1 = min(int(math.ceil(t[:, 1].max() - 0.5)), h - 1)
    if i1 < i0 or j1 < j0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    jj, ii = np.mgrid[j0 : j1 + 1, i0 : i1 + 1]
    px = ii + 0.5
    py = jj + 0.5
    l0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / det
    l1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / det
    l2 = 1.0 - l0 - l1
    eps = -1e-12
    inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
    bary = np.stack([l0[inside], l1[inside], l2[inside]], axis=1)
    return jj[inside], ii[inside], bary
