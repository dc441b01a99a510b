"""Central finite-difference checks for every differentiable operation.

Each check projects the op output onto a fixed random tensor to get a scalar,
backpropagates once, and compares every input element against
(f(x + h) - f(x - h)) / 2h.  Relative error is
|analytic - numeric| / max(|analytic|, |numeric|, floor), where the floor is
1e-6 of the largest gradient magnitude of that input (or 1e-10) so that
round-off on near-zero entries does not dominate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .config import NetworkConfig
from .ega import EgaConfig, EgaInputs, boundary_attention, cbam, ega_forward, init_cbam_params, init_ega_params
from .losses import bce_loss, dice_loss, downscale_gt, total_loss
from .network import forward, init_params, reduce_channels
from .nn import ParamStore

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _rel_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    floor = max(1e-6 * max(np.abs(numeric).max(), np.abs(analytic).max()), 1e-10)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_function(
    fn: Callable[..., Var],
    arrays: list[np.ndarray],
    rng: np.random.Generator,
    h: float = STEP,
    wrt: list[int] | None = None,
) -> float:
    """Max relative error of d(sum(fn(*arrays) * R))/d(arrays[k]) over ``wrt``."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    wrt = list(range(len(arrays))) if wrt is None else wrt
    leaves = [Var(a, requires_grad=k in wrt) for k, a in enumerate(arrays)]
    out = fn(*leaves)
    proj = rng.standard_normal(out.shape)
    ad.backward(ad.sum(out * proj))

    def scalar(vals):
        return float((fn(*[Var(v) for v in vals]).value * proj).sum())

    worst = 0.0
    for k in wrt:
        numeric = np.zeros_like(arrays[k])
        for idx in np.ndindex(arrays[k].shape):
            vals = list(arrays)
            plus = arrays[k].copy()
            plus[idx] += h
            minus = arrays[k].copy()
            minus[idx] -= h
            vals[k] = plus
            f_plus = scalar(vals)
            vals[k] = minus
            numeric[idx] = (f_plus - scalar(vals)) / (2 * h)
        analytic = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(numeric)
        worst = max(worst, float(_rel_errors(analytic, numeric).max()))
    return worst


def check_params(
    loss_fn: Callable[[ParamStore], Var],
    params: ParamStore,
    rng: np.random.Generator,
    n_samples: int | None = None,
    h: float = STEP,
) -> float:
    """Finite differences over (a random sample of) parameter entries."""
    params.zero_grad()
    ad.backward(loss_fn(params))
    entries = [(p.name, idx) for p in params for idx in np.ndindex(p.var.shape)]
    if n_samples is not None and n_samples < len(entries):
        pick = rng.choice(len(entries), size=n_samples, replace=False)
        entries = [entries[i] for i in sorted(pick)]
    grads = {p.name: (p.grad if p.grad is not None else np.zeros(p.var.shape)) for p in params}
    analytic, numeric = [], []
    for name, idx in entries:
        p = params.parameter(name)
        base = p.value.copy()
        vals = []
        for sign in (1.0, -1.0):
            bumped = base.copy()
            bumped[idx] += sign * h
            p.assign(bumped)
            vals.append(float(loss_fn(params).value))
        p.assign(base)
        numeric.append((vals[0] - vals[1]) / (2 * h))
        analytic.append(grads[name][idx])
    params.zero_grad()
    return float(_rel_errors(np.array(analytic), np.array(numeric)).max())


# -- registry ------------------------------------------------------------------

SHAPE = (2, 2, 4, 4)


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _op_cases(rng: np.random.Generator):
    x = lambda: rng.standard_normal(SHAPE)  # noqa: E731
    rows = rng.standard_normal((5, 4))
    cols = rng.standard_normal((3, 4))
    return {
        "add": (lambda a, b: a + b, [x(), rng.standard_normal((1, 2, 1, 1))]),
        "sub": (lambda a, b: a - b, [x(), rng.standard_normal((2, 1, 4, 4))]),
        "mul": (lambda a, b: a * b, [x(), rng.standard_normal((1, 2, 1, 1))]),
        "div": (lambda a, b: a / b, [x(), _positive(rng, SHAPE)]),
        "neg": (ad.neg, [x()]),
        "sigmoid": (ad.sigmoid, [x()]),
        "relu": (ad.relu, [x()]),
        "abs": (ad.absolute, [x()]),
        "softplus": (ad.softplus, [x()]),
        "sum": (lambda a: ad.sum(a, axis=(1, 3), keepdims=True), [x()]),
        "mean": (ad.mean, [x()]),
        "channel_max": (lambda a: ad.amax(a, axis=1, keepdims=True), [x()]),
        "global_avg_pool": (ad.global_avg_pool, [x()]),
        "global_max_pool": (ad.global_max_pool, [x()]),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [x(), rng.standard_normal((2, 3, 4, 4))]),
        "reshape": (lambda a: ad.reshape(a, (4, 16)), [x()]),
        "subsample": (ad.subsample, [x()]),
        "spatial_linear": (lambda a: ad.spatial_linear(a, rows, cols), [x()]),
        "pad_zero": (lambda a: ad.pad2d(a, 1, "zero"), [x()]),
        "pad_reflect": (lambda a: ad.pad2d(a, 2, "reflect"), [x()]),
        "upsample_bilinear": (lambda a: ad.upsample_bilinear(a, 2), [x()]),
        "resize_bilinear": (lambda a: ad.resize_bilinear(a, (3, 7)), [x()]),
        "conv2d": (
            lambda a, w, b: ad.conv2d(a, w, b),
            [x(), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
        ),
        "conv2d_stride2_reflect": (
            lambda a, w, b: ad.conv2d(a, w, b, stride=2, pad_mode="reflect"),
            [x(), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
        ),
        "conv2d_valid": (
            lambda a, w: ad.conv2d(a, w, padding=0),
            [x(), rng.standard_normal((1, 2, 3, 3))],
        ),
        "max_pool2d": (lambda a: ad.max_pool2d(a, 2), [x()]),
        "bce_with_logits": (
            lambda a: ad.binary_cross_entropy_with_logits(a, rng_mask),
            [x()],
        ),
        "boundary_attention": (lambda a: boundary_attention(ad.sigmoid(a)), [rng.standard_normal((2, 1, 4, 4))]),
        "bce_loss": (lambda a: bce_loss(a, rng_mask), [x()]),
        "dice_loss": (lambda a: dice_loss(a, rng_mask), [x()]),
    }


rng_mask = (np.arange(32).reshape(2, 1, 4, 4) % 3 == 0).astype(np.float64).repeat(2, axis=1)


def check_ops(seeds=range(5)) -> list[CheckResult]:
    results: dict[str, CheckResult] = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name, (fn, arrays) in _op_cases(rng).items():
            t = time.perf_counter()
            err = check_function(fn, arrays, rng)
            prev = results.get(name)
            spent = time.perf_counter() - t + (prev.seconds if prev else 0.0)
            results[name] = CheckResult(name, max(err, prev.max_rel_error if prev else 0.0), spent)
    return list(results.values())


def check_cbam(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    store = ParamStore(seed)
    init_cbam_params(store, "cbam", 4, 2, 3)
    x = rng.standard_normal((1, 4, 6, 6))
    t = time.perf_counter()
    err = check_function(lambda a: cbam(a, store, "cbam", 3), [x], rng)
    err = max(err, check_params(lambda p: ad.sum(cbam(Var(x), p, "cbam", 3) * Var(x)), store, rng))
    return CheckResult("cbam", err, time.perf_counter() - t)


def check_ega(seed: int = 0) -> CheckResult:
    """Input and parameter gradients of one EGA block on a 1x4x8x8 instance."""
    rng = np.random.default_rng(seed)
    cfg = EgaConfig(channels=4, cbam_reduction=2, spatial_kernel=3)
    store = ParamStore(seed)
    init_ega_params(store, "ega", cfg)
    enc = rng.standard_normal((1, 4, 8, 8))
    logit = rng.standard_normal((1, 1, 8, 8))
    hf = rng.uniform(0, 1, size=(1, 8, 8))
    proj = rng.standard_normal((1, 4, 8, 8))

    def block(e, z, params=store):
        return ega_forward(EgaInputs(e, ad.sigmoid(z), hf), cfg, params, "ega").decoded

    t = time.perf_counter()
    err = check_function(block, [enc, logit], rng)
    err = max(
        err,
        check_params(lambda p: ad.sum(block(Var(enc), Var(logit), p) * Var(proj)), store, rng),
    )
    return CheckResult("ega_block", err, time.perf_counter() - t)


def check_network(seed: int = 0, n_samples: int = 20) -> CheckResult:
    """End-to-end loss gradient on a 2-level net, one 32x32 sample."""
    rng = np.random.default_rng(seed)
    cfg = NetworkConfig(depth=2, stem_channels=4, input_extents=(32, 32),
                        ega=EgaConfig(channels=4, cbam_reduction=2, spatial_kernel=3))
    params = init_params(cfg, seed)
    img = rng.uniform(0, 1, size=(1, 3, 32, 32))
    yy, xx = np.mgrid[0:32, 0:32]
    mask = (((yy - 15.5) ** 2 + (xx - 15.5) ** 2) < 81).astype(np.float64)[None, None]
    gts = downscale_gt(mask, cfg.depth)

    def loss(p):
        return total_loss(forward(img, None, p, cfg).logits, gts)

    t = time.perf_counter()
    err = check_params(loss, params, rng, n_samples=n_samples)
    return CheckResult("network_2level", err, time.perf_counter() - t)


def check_reduce(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    store = ParamStore(seed)
    store.conv("reduce1", 3, 5, 3)
    x = rng.standard_normal((1, 5, 6, 6))
    proj = rng.standard_normal((1, 3, 6, 6))
    t = time.perf_counter()
    err = check_function(lambda a: reduce_channels(a, store, 1), [x], rng)
    err = max(err, check_params(lambda p: ad.sum(reduce_channels(Var(x), p, 1) * Var(proj)), store, rng))
    return CheckResult("reduce_channels", err, time.perf_counter() - t)


def run_all(scope: str = "all") -> list[CheckResult]:
    results = []
    if scope in ("ops", "all"):
        results += check_ops()
    if scope in ("ega", "all"):
        results += [check_cbam(), check_ega()]
    if scope in ("network", "all"):
        results += [check_reduce(), check_network()]
    return results
