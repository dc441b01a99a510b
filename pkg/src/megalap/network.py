"""MEGANet-style encoder/decoder with EGA at every decoder level but the deepest.

Level i features have extents H / 2^(i+1).  The deepest level predicts from
its encoder feature with a 1x1 head; every shallower level refines the
upsampled prediction from the level above through an EGA block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .config import NetworkConfig
from .ega import EgaInputs, EgaOutput, ega_forward, ega_param_count, init_ega_params
from .nn import ParamStore
from .pyramid import HighFreqSet, high_freq_set

# fixed input standardisation for [0, 1] images
INPUT_MEAN = 0.5
INPUT_STD = 0.25


@dataclass
class ForwardResult:
    logits: list[Var]
    masks: list[Var | None]
    ega_outputs: list[EgaOutput | None] = field(default_factory=list)
    prediction: Var | None = None


def init_params(cfg: NetworkConfig, seed: int = 0) -> ParamStore:
    store = ParamStore(seed)
    cin = 3
    for i, c in enumerate(cfg.channel_schedule):
        store.conv(f"enc{i}.conv1", c, cin, 3)
        store.conv(f"enc{i}.conv2", c, c, 3)
        cin = c
    for i in range(1, cfg.depth - 1):
        store.conv(f"reduce{i}", cfg.decoder_channels, cfg.channel_schedule[i], 3)
    for i in range(cfg.depth - 1):
        init_ega_params(store, f"ega{i}", cfg.ega_config(i))
    for i in range(cfg.depth - 1):
        store.conv(f"head{i}", 1, cfg.ega_channels(i), 1)
    store.conv(f"head{cfg.depth - 1}", 1, cfg.channel_schedule[-1], 1)
    return store


def param_count(cfg: NetworkConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    total, cin = 0, 3
    for c in cfg.channel_schedule:
        total += (cin * 9 + 1) * c + (c * 9 + 1) * c
        cin = c
    for i in range(1, cfg.depth - 1):
        total += (cfg.channel_schedule[i] * 9 + 1) * cfg.decoder_channels
    for i in range(cfg.depth - 1):
        total += ega_param_count(cfg.ega_config(i)) + cfg.ega_channels(i) + 1
    return total + cfg.channel_schedule[-1] + 1


def encode(img: Var, params: ParamStore, cfg: NetworkConfig) -> list[Var]:
    h, w = img.shape[-2:]
    if h % 2**cfg.depth or w % 2**cfg.depth:
        raise ValueError(f"input extents {h}x{w} not divisible by 2^{cfg.depth}")
    x, feats = (img - INPUT_MEAN) * (1.0 / INPUT_STD), []
    for i in range(cfg.depth):
        x = ad.relu(ad.conv2d(x, params[f"enc{i}.conv1.weight"], params[f"enc{i}.conv1.bias"]))
        x = ad.relu(ad.conv2d(x, params[f"enc{i}.conv2.weight"], params[f"enc{i}.conv2.bias"]))
        x = ad.max_pool2d(x, 2)
        feats.append(x)
    return feats


def reduce_channels(feat: Var, params: ParamStore, level: int) -> Var:
    return ad.conv2d(feat, params[f"reduce{level}.weight"], params[f"reduce{level}.bias"])


def _head(x: Var, params: ParamStore, level: int) -> Var:
    return ad.conv2d(x, params[f"head{level}.weight"], params[f"head{level}.bias"], padding=0)


def stack_high_freq(images: np.ndarray, cfg: NetworkConfig) -> list[np.ndarray]:
    """Per-level (B, 1, H_i, W_i) edge maps for a batch of RGB images."""
    sets = [
        high_freq_set(
            img,
            cfg.depth - 1,
            cfg.hf_derivation,
            raw=cfg.raw_laplacian,
            interpolate=cfg.hf_interpolate,
        )
        for img in images
    ]
    return [np.stack([s.levels[i] for s in sets]) for i in range(cfg.depth - 1)]


def forward(
    img,
    hf: list[np.ndarray] | HighFreqSet | None,
    params: ParamStore,
    cfg: NetworkConfig,
    keep: bool = False,
) -> ForwardResult:
    img = ad.as_var(img)
    if img.ndim == 3:
        img = ad.reshape(img, (1,) + img.shape)
    if hf is None:
        hf = stack_high_freq(img.value, cfg)
    elif isinstance(hf, HighFreqSet):
        hf = [lvl[None] for lvl in hf.levels]
    if len(hf) < cfg.depth - 1:
        raise ValueError(f"need {cfg.depth - 1} high-frequency levels, got {len(hf)}")

    feats = encode(img, params, cfg)
    d = cfg.depth
    logits: list[Var | None] = [None] * d
    masks: list[Var | None] = [None] * d
    outputs: list[EgaOutput | None] = [None] * d
    logits[d - 1] = _head(feats[d - 1], params, d - 1)
    for i in range(d - 2, -1, -1):
        pred_above = ad.sigmoid(ad.upsample_bilinear(logits[i + 1], 2))
        enc = feats[0] if i == 0 else reduce_channels(feats[i], params, i)
        out = ega_forward(
            EgaInputs(enc, pred_above, hf[i]), cfg.ega_config(i), params, f"ega{i}", keep=keep
        )
        if keep:
            out.intermediates["pred_above"] = pred_above
        outputs[i] = out
        masks[i] = out.mask
        logits[i] = _head(out.decoded, params, i)
    prediction = ad.sigmoid(ad.upsample_bilinear(logits[0], 2))
    return ForwardResult(logits, masks, outputs, prediction)
