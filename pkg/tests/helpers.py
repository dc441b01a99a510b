"""Disc geometry and top-decile statistics shared by several test modules."""
import numpy as np


def rim_distance(extents, center, radius, step=1):
    """Distance (in pixels of a grid subsampled by ``step``) from each pixel
    centre to the continuous circle of the given full-resolution geometry."""
    h, w = extents
    yy, xx = np.mgrid[0:h, 0:w] * float(step)
    r = np.hypot(yy - center[0], xx - center[1])
    return np.abs(r - radius) / step


def top_decile_fraction(values, distance, tol=3.0):
    """Share of the mass of the top-decile values lying within ``tol`` px."""
    v = np.asarray(values, dtype=np.float64).reshape(np.shape(distance))
    cut = np.quantile(v, 0.9)
    top = v >= cut
    mass = v[top].sum()
    if mass <= 0:
        return 0.0
    return float(v[top & (distance <= tol)].sum() / mass)


def top_decile_sum(values):
    v = np.asarray(values, dtype=np.float64).ravel()
    return float(v[v >= np.quantile(v, 0.9)].sum())
