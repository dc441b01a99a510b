"""Gaussian / Laplacian pyramids and the high-frequency edge maps fed to EGA.

Images here are plain float64 arrays shaped ``(1, H, W)`` (single channel) or
``(3, H, W)`` for RGB input.  Everything is a pure function.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import resize_matrix

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
KERNEL_RADIUS = 2
# Smallest extent the 5-tap filter can reflect about without wrapping twice.
MIN_BLUR_EXTENT = KERNEL_RADIUS + 1
LUMA = np.array([0.299, 0.587, 0.114])


class Derivation(str, enum.Enum):
    BASE_DOWNSAMPLE = "base"
    PER_LEVEL_LAPLACIAN = "per-level"


@dataclass(frozen=True)
class PyramidStack:
    gaussian_levels: list[np.ndarray]
    laplacian_levels: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.laplacian_levels)


@dataclass(frozen=True)
class HighFreqSet:
    levels: list[np.ndarray]
    derivation: Derivation


def _as_single(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] != 1:
        raise ValueError(f"expected a single-channel (1, H, W) image, got shape {img.shape}")
    return img


def gaussian_blur(img: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial blur with mirror (half-sample) borders."""
    img = _as_single(img)
    h, w = img.shape[-2:]
    if min(h, w) < MIN_BLUR_EXTENT:
        raise ValueError(
            f"image {h}x{w} smaller than the blur support; need extents >= {MIN_BLUR_EXTENT}"
        )
    r = KERNEL_RADIUS
    # weights sum to one, so summing offsets from the centre tap keeps
    # constant regions exactly constant
    padded = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="symmetric")
    tmp = img + sum(BINOMIAL_5[t] * (padded[:, t : t + h, :] - img) for t in range(5) if t != r)
    padded = np.pad(tmp, ((0, 0), (0, 0), (r, r)), mode="symmetric")
    return tmp + sum(BINOMIAL_5[t] * (padded[:, :, t : t + w] - tmp) for t in range(5) if t != r)


def downsample(img: np.ndarray) -> np.ndarray:
    """Keep even rows and columns: extents become ceil(n / 2)."""
    return np.ascontiguousarray(np.asarray(img)[..., ::2, ::2])


def upsample(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear 2x expansion anchored so source pixel i lands on 2i."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    th, tw = target
    if th < h or tw < w:
        raise ValueError(f"upsample target {target} is smaller than source {(h, w)}")
    if th > 2 * h or tw > 2 * w:
        raise ValueError(f"upsample target {target} exceeds 2x the source {(h, w)}")
    return _expand(_expand(img, th, -2), tw, -1)


def _expand(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Anchored 2x linear expansion along one axis.

    Midpoints are written as ``a + (b - a) / 2`` so equal neighbours are
    reproduced exactly, even for subnormal values.  Positions past the last
    source sample hold its value.
    """
    x = np.moveaxis(x, axis, -1)
    n_in = x.shape[-1]
    out = np.empty(x.shape[:-1] + (n_out,))
    out[..., 0::2] = x[..., : (n_out + 1) // 2]
    mids = x[..., :-1] + 0.5 * (x[..., 1:] - x[..., :-1])
    out[..., 1 : 2 * n_in - 2 : 2] = mids[..., : n_out // 2]
    if n_out == 2 * n_in:
        out[..., -1] = x[..., -1]
    return np.moveaxis(out, -1, axis)


def resize(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    return resize_matrix(h, target[0]) @ img @ resize_matrix(w, target[1]).T


def max_depth(h: int, w: int) -> int:
    """Deepest K whose blurred levels I_0..I_{K-1} all fit the blur support."""
    k, n = 0, min(h, w)
    while n >= MIN_BLUR_EXTENT:
        k += 1
        n = (n + 1) // 2
    return k


def build_pyramid(img: np.ndarray, levels: int) -> PyramidStack:
    img = _as_single(img)
    if levels < 1:
        raise ValueError(f"pyramid depth must be >= 1, got {levels}")
    h, w = img.shape[-2:]
    if levels > max_depth(h, w):
        raise ValueError(
            f"pyramid depth {levels} too deep for a {h}x{w} image (max {max_depth(h, w)})"
        )
    gauss = [img.copy()]
    for _ in range(levels):
        gauss.append(downsample(gaussian_blur(gauss[-1])))
    lap = [gauss[k] - upsample(gauss[k + 1], gauss[k].shape[-2:]) for k in range(levels)]
    return PyramidStack(gauss, lap)


def luminance(img_rgb: np.ndarray) -> np.ndarray:
    img_rgb = np.asarray(img_rgb, dtype=np.float64)
    if img_rgb.ndim != 3 or img_rgb.shape[0] not in (1, 3):
        raise ValueError(f"expected a (3, H, W) or (1, H, W) image, got shape {img_rgb.shape}")
    if img_rgb.shape[0] == 1:
        return img_rgb.copy()
    return np.tensordot(LUMA, img_rgb, axes=(0, 0))[None]


def normalize_edges(lap: np.ndarray) -> np.ndarray:
    """|L| stretched to [0, 1]; a flat response maps to zeros."""
    mag = np.abs(lap)
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 0:
        return np.zeros_like(mag)
    return (mag - lo) / (hi - lo)


def high_freq_base(img_rgb: np.ndarray, raw: bool = False) -> np.ndarray:
    lap1 = build_pyramid(luminance(img_rgb), 2).laplacian_levels[1]
    return lap1 if raw else normalize_edges(lap1)


def high_freq_set(
    img_rgb: np.ndarray,
    num_levels: int,
    derivation: Derivation | str = Derivation.BASE_DOWNSAMPLE,
    raw: bool = False,
    interpolate: bool = False,
) -> HighFreqSet:
    """Per-level edge maps; level i has the extents of ceil(H / 2^(i+1)).

    ``interpolate`` swaps the decimation chain for bilinear resizing of the
    base map (only meaningful for the base derivation).
    """
    derivation = Derivation(derivation)
    if num_levels < 1:
        raise ValueError(f"need at least one level, got {num_levels}")
    lum = luminance(img_rgb)
    h, w = lum.shape[-2:]
    extents = [(h, w)]
    for _ in range(num_levels):
        extents.append(((extents[-1][0] + 1) // 2, (extents[-1][1] + 1) // 2))
    extents = extents[1:]

    if derivation is Derivation.BASE_DOWNSAMPLE:
        if max_depth(h, w) < 2:
            raise ValueError(f"image {h}x{w} too small for the level-1 Laplacian")
        base = high_freq_base(lum, raw=raw)
        levels = [base]
        for ext in extents[1:]:
            levels.append(resize(base, ext) if interpolate else downsample(levels[-1]))
        return HighFreqSet(levels, derivation)

    if num_levels > max_depth(h, w):
        raise ValueError(
            f"{num_levels} per-level Laplacians need a deeper pyramid than a {h}x{w} image allows"
        )
    pyr = build_pyramid(lum, num_levels)
    levels = []
    for i, ext in enumerate(extents):
        lap = pyr.laplacian_levels[i]
        levels.append(resize(lap if raw else normalize_edges(lap), ext))
    return HighFreqSet(levels, derivation)
