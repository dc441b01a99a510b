"""Synthetic weak-boundary segmentation data, augmentation, dataset folders."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SynthConfig
from .distance import edt
from .imageio import read_image, read_mask, write_image, write_mask
from .pyramid import gaussian_blur, resize

SCALES = (0.75, 1.0, 1.25)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (1, H, W) binary
    id: str


def _smooth_noise(rng: np.random.Generator, h: int, w: int, passes: int = 3) -> np.ndarray:
    field = rng.standard_normal((1, h, w))
    for _ in range(passes):
        field = gaussian_blur(field)
    std = field.std()
    return field[0] / std if std > 0 else field[0]


def signed_distance(mask: np.ndarray) -> np.ndarray:
    """Positive inside, negative outside, zero on the pixel-edge midline."""
    m = np.asarray(mask, dtype=bool)
    inside = edt(~m)[0]
    outside = edt(m)[0]
    return np.where(m, inside - 0.5, -(outside - 0.5))


def _metaballs(rng, h: int, w: int, n: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    s = min(h, w)
    for _ in range(n):
        cy = rng.uniform(0.3, 0.7) * h
        cx = rng.uniform(0.3, 0.7) * w
        r = rng.uniform(0.12, 0.22) * s
        field += r * r / ((yy - cy) ** 2 + (xx - cx) ** 2 + 1e-9)
    return field >= 1.0


def render(
    mask: np.ndarray,
    softness: float,
    contrast: float,
    texture_amplitude: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Image whose foreground/background luminance differs by ``contrast``,
    blended across the mask edge by a sigmoid ramp of width ``softness``."""
    h, w = mask.shape
    lo = min(0.1, (1.0 - contrast) / 2)
    base = rng.uniform(lo, max(lo, 0.9 - contrast))
    tint = rng.uniform(-0.05, 0.05, size=3)
    tint -= tint.mean()
    noise_fg = _smooth_noise(rng, h, w)
    noise_bg = _smooth_noise(rng, h, w)
    if softness > 0:
        s = signed_distance(mask)
        t = 0.5 * (1.0 + np.tanh(s / (2.0 * softness)))
    else:
        t = mask.astype(np.float64)
    bg = base + texture_amplitude * noise_bg
    fg = base + contrast + texture_amplitude * noise_fg
    gray = (1.0 - t) * bg + t * fg
    return np.clip(gray[None] + tint[:, None, None], 0.0, 1.0)


def generate(cfg: SynthConfig) -> list[Sample]:
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.extents
    lo, hi = cfg.blob_count_range
    samples = []
    for k in range(cfg.count):
        mask = _metaballs(rng, h, w, int(rng.integers(lo, hi + 1)))
        image = render(mask, cfg.boundary_softness, cfg.contrast, cfg.texture_amplitude, rng)
        samples.append(Sample(image, mask.astype(np.float64)[None], f"synth_{k:04d}"))
    return samples


def disc_sample(extents=(64, 64), radius=None, center=None, softness=0.0, contrast=0.5,
                texture_amplitude=0.0, seed=0) -> Sample:
    """A single disc: the metaball of one ball."""
    h, w = extents
    radius = 0.25 * min(h, w) if radius is None else radius
    cy, cx = ((h - 1) / 2, (w - 1) / 2) if center is None else center
    yy, xx = np.mgrid[0:h, 0:w]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    rng = np.random.default_rng(seed)
    image = render(mask, softness, contrast, texture_amplitude, rng)
    return Sample(image, mask.astype(np.float64)[None], f"disc_{seed}")


# -- augmentation ------------------------------------------------------------


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def _fit(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Centre-crop or zero-pad the last two axes to (h, w)."""
    out = np.zeros(arr.shape[:-2] + (h, w))
    sh, sw = arr.shape[-2:]
    ch, cw = min(h, sh), min(w, sw)
    sy, sx = (sh - ch) // 2, (sw - cw) // 2
    dy, dx = (h - ch) // 2, (w - cw) // 2
    out[..., dy : dy + ch, dx : dx + cw] = arr[..., sy : sy + ch, sx : sx + cw]
    return out


def rescale(sample: Sample, scale: float) -> Sample:
    if scale == 1.0:
        return sample
    h, w = sample.image.shape[-2:]
    nh, nw = int(round(h * scale)), int(round(w * scale))
    image = np.clip(resize(sample.image, (nh, nw)), 0.0, 1.0)
    mask = sample.mask[:, _nearest_indices(h, nh)][:, :, _nearest_indices(w, nw)]
    return Sample(_fit(image, h, w), _fit(mask, h, w), sample.id)


def apply_augment(sample: Sample, hflip: bool, vflip: bool, quarter_turns: int, scale: float) -> Sample:
    img, mask = sample.image, sample.mask
    if hflip:
        img, mask = img[..., ::-1], mask[..., ::-1]
    if vflip:
        img, mask = img[..., ::-1, :], mask[..., ::-1, :]
    if quarter_turns % 4:
        img = np.rot90(img, quarter_turns, axes=(1, 2))
        mask = np.rot90(mask, quarter_turns, axes=(1, 2))
    out = Sample(np.ascontiguousarray(img), np.ascontiguousarray(mask), sample.id)
    return rescale(out, scale)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    turns = int(rng.integers(4))
    scale = SCALES[int(rng.integers(len(SCALES)))]
    return apply_augment(sample, hflip, vflip, turns, scale)


# -- dataset folders ---------------------------------------------------------


def save_dataset(samples: list[Sample], root: str | Path, val_fraction: float = 0.0) -> None:
    """Write ``images/<id>.png``, ``masks/<id>.png`` and ``manifest.json``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    n_val = int(round(len(samples) * val_fraction))
    split = {}
    for k, s in enumerate(samples):
        write_image(root / "images" / f"{s.id}.png", s.image)
        write_mask(root / "masks" / f"{s.id}.png", s.mask)
        split[s.id] = "val" if k >= len(samples) - n_val else "train"
    manifest = {
        "schema": "megalap.dataset/1",
        "ids": [s.id for s in samples],
        "split": split,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(root: str | Path, split: str | None = None) -> list[Sample]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    out = []
    for sid in manifest["ids"]:
        if split is not None and manifest["split"].get(sid) != split:
            continue
        out.append(
            Sample(read_image(root / "images" / f"{sid}.png"), read_mask(root / "masks" / f"{sid}.png"), sid)
        )
    return out
