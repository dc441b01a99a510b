"""Edge-Guided Attention block: fuse encoder features with reverse, boundary
and high-frequency attention, gate by a learned mask, recalibrate with CBAM."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .nn import ParamStore
from .pyramid import BINOMIAL_5, KERNEL_RADIUS, MIN_BLUR_EXTENT


@dataclass
class EgaConfig:
    use_reverse: bool = True
    use_boundary: bool = True
    use_hf: bool = True
    use_cbam: bool = True
    channels: int = 8
    cbam_reduction: int = 4
    spatial_kernel: int = 7
    signed_boundary: bool = False

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError(f"channels must be positive, got {self.channels}")
        if self.use_cbam:
            if self.cbam_reduction < 1 or self.channels % self.cbam_reduction:
                raise ValueError(
                    f"cbam_reduction {self.cbam_reduction} must divide channels {self.channels}"
                )
            if self.spatial_kernel % 2 == 0:
                raise ValueError(f"spatial_kernel must be odd, got {self.spatial_kernel}")

    @property
    def n_branches(self) -> int:
        return int(self.use_hf) + int(self.use_boundary) + int(self.use_reverse)

    def with_channels(self, channels: int) -> "EgaConfig":
        return EgaConfig(**{**self.__dict__, "channels": channels})


@dataclass
class EgaInputs:
    enc: Var
    pred_above: Var
    hf: np.ndarray


@dataclass
class EgaOutput:
    decoded: Var
    mask: Var
    intermediates: dict[str, Var] = field(default_factory=dict)


def init_ega_params(store: ParamStore, prefix: str, cfg: EgaConfig) -> None:
    n = cfg.channels
    store.conv(f"{prefix}.fuse", n, n * max(cfg.n_branches, 1), 3)
    store.conv(f"{prefix}.mask", 1, n, 3)
    if cfg.use_cbam:
        init_cbam_params(store, f"{prefix}.cbam", n, cfg.cbam_reduction, cfg.spatial_kernel)


def init_cbam_params(store: ParamStore, prefix: str, channels: int, reduction: int, kernel: int) -> None:
    hidden = channels // reduction
    store.conv(f"{prefix}.mlp1", hidden, channels, 1, bias=False)
    store.conv(f"{prefix}.mlp2", channels, hidden, 1, bias=False)
    store.conv(f"{prefix}.spatial", 1, 2, kernel, bias=False)


def ega_param_count(cfg: EgaConfig) -> int:
    n = cfg.channels
    total = (n * max(cfg.n_branches, 1) * 9 + 1) * n + (n * 9 + 1)
    if cfg.use_cbam:
        h = n // cfg.cbam_reduction
        total += 2 * n * h + 2 * cfg.spatial_kernel**2
    return total


def reverse_attention(pred: Var) -> Var:
    return 1.0 - pred


def _blur_matrix(n: int) -> np.ndarray:
    band = np.zeros((n, n + 2 * KERNEL_RADIUS))
    for r in range(n):
        band[r, r : r + 5] = BINOMIAL_5
    return band @ ad.pad_matrix(n, KERNEL_RADIUS, "reflect")


def _decimate_matrix(n: int) -> np.ndarray:
    m = np.zeros(((n + 1) // 2, n))
    m[np.arange(m.shape[0]), 2 * np.arange(m.shape[0])] = 1.0
    return m


def laplacian0(x: Var) -> Var:
    """Finest Laplacian-pyramid level x - u(d(g(x))) as one separable linear map."""
    h, w = x.shape[-2:]
    if min(h, w) < MIN_BLUR_EXTENT:
        raise ValueError(
            f"prediction {h}x{w} too small for the blur support (need >= {MIN_BLUR_EXTENT})"
        )

    def smooth(n):
        down = _decimate_matrix(n) @ _blur_matrix(n)
        return ad.anchored_upsample_matrix(down.shape[0], n, 2) @ down

    return x - ad.spatial_linear(x, smooth(h), smooth(w))


def boundary_attention(pred: Var, signed: bool = False) -> Var:
    lap = laplacian0(pred)
    return lap if signed else ad.absolute(lap)


def cbam(x: Var, params: ParamStore, prefix: str, spatial_kernel: int = 7) -> Var:
    def mlp(z):
        hidden = ad.relu(ad.conv2d(z, params[f"{prefix}.mlp1.weight"], padding=0))
        return ad.conv2d(hidden, params[f"{prefix}.mlp2.weight"], padding=0)

    channel_gate = ad.sigmoid(mlp(ad.global_avg_pool(x)) + mlp(ad.global_max_pool(x)))
    x = x * channel_gate
    pooled = ad.concat([ad.mean(x, axis=1, keepdims=True), ad.amax(x, axis=1, keepdims=True)], 1)
    spatial_gate = ad.sigmoid(
        ad.conv2d(pooled, params[f"{prefix}.spatial.weight"], padding=spatial_kernel // 2)
    )
    return x * spatial_gate


def ega_forward(
    inputs: EgaInputs, cfg: EgaConfig, params: ParamStore, prefix: str, keep: bool = False
) -> EgaOutput:
    enc, pred = inputs.enc, inputs.pred_above
    hf = np.asarray(inputs.hf, dtype=np.float64)
    if hf.ndim == 3:
        hf = hf[None]
    if enc.shape[1] != cfg.channels:
        raise ValueError(
            f"EGA {prefix}: encoder feature has {enc.shape[1]} channels, config expects {cfg.channels}"
        )
    if pred.shape[-2:] != enc.shape[-2:] or hf.shape[-2:] != enc.shape[-2:]:
        raise ValueError(
            f"EGA {prefix}: extents disagree: enc {enc.shape[-2:]}, "
            f"pred {pred.shape[-2:]}, hf {hf.shape[-2:]}"
        )

    extra: dict[str, Var] = {}
    branches = []
    if cfg.use_hf:
        branches.append(enc * ad.constant(hf))
    if cfg.use_boundary:
        fb = boundary_attention(pred, signed=cfg.signed_boundary)
        branches.append(enc * fb)
        extra["boundary"] = fb
    if cfg.use_reverse:
        fr = reverse_attention(pred)
        branches.append(enc * fr)
        extra["reverse"] = fr
    if not branches:
        branches = [enc]

    stacked = branches[0] if len(branches) == 1 else ad.concat(branches, axis=1)
    fused = ad.conv2d(
        stacked, params[f"{prefix}.fuse.weight"], params[f"{prefix}.fuse.bias"], pad_mode="reflect"
    )
    mask = ad.sigmoid(
        ad.conv2d(
            fused, params[f"{prefix}.mask.weight"], params[f"{prefix}.mask.bias"], pad_mode="reflect"
        )
    )
    attended = enc + fused * mask
    decoded = (
        cbam(attended, params, f"{prefix}.cbam", cfg.spatial_kernel) if cfg.use_cbam else attended
    )
    if keep:
        extra.update(combined=fused, attention=attended)
    return EgaOutput(decoded, mask, extra if keep else {})
