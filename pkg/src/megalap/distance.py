"""Exact Euclidean distance transform with nearest-feature indices.

Separable two-pass scheme: a vertical scan finds the nearest feature in each
column, then each row minimises (x - c)^2 + dv(c)^2 over columns.  Among
equidistant features the one with the smallest column, then smallest row,
is reported, so the index map is fully determined.
"""
from __future__ import annotations

import numpy as np


def edt(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance from every pixel to the nearest True pixel of ``features``.

    Returns ``(dist, nearest_row, nearest_col)``.  With no feature pixels the
    distance is ``inf`` and the indices are -1.
    """
    feat = np.asarray(features, dtype=bool)
    if feat.ndim != 2:
        raise ValueError(f"edt expects a 2-d mask, got shape {feat.shape}")
    h, w = feat.shape
    if not feat.any():
        return np.full((h, w), np.inf), np.full((h, w), -1), np.full((h, w), -1)

    rows = np.arange(h)[:, None]
    big = 4 * (h + w)
    up = np.where(feat, rows, -big)
    np.maximum.accumulate(up, axis=0, out=up)
    down = np.where(feat, rows, big + h)
    down = np.minimum.accumulate(down[::-1], axis=0)[::-1]
    take_up = (rows - up) <= (down - rows)
    near_row = np.where(take_up, up, down)
    dv = np.abs(near_row - rows).astype(np.float64)
    dv[:, ~feat.any(axis=0)] = np.inf

    cols = np.arange(w)
    dx2 = (cols[:, None] - cols[None, :]).astype(np.float64) ** 2
    dist2 = np.empty((h, w))
    out_row = np.empty((h, w), dtype=np.int64)
    out_col = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        cost = dx2 + dv[r][None, :] ** 2
        best = cost.argmin(axis=1)
        dist2[r] = cost[cols, best]
        out_col[r] = best
        out_row[r] = near_row[r, best]
    return np.sqrt(dist2), out_row, out_col


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background, plus the
    background pixels touching them."""
    m = np.asarray(mask, dtype=bool)
    pad = np.pad(m, 1, mode="edge")
    diff = np.zeros_like(m)
    for dr, dc in ((0, 1), (2, 1), (1, 0), (1, 2)):
        diff |= pad[dr : dr + m.shape[0], dc : dc + m.shape[1]] != m
    return diff


def distance_to_boundary(mask: np.ndarray) -> np.ndarray:
    return edt(boundary_pixels(mask))[0]
