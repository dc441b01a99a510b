"""Training loop: poly learning-rate schedule, momentum SGD, deep supervision."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .config import NetworkConfig, RunConfig, TrainConfig, config_from_dict, config_to_dict
from .data import Sample, augment
from .losses import downscale_gt, total_loss
from .metrics import MetricsReport
from .network import forward, init_params, stack_high_freq
from .nn import ParamStore, sgd_step

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """init_lr * (1 - epoch / n_epoch) ** power, evaluated per epoch."""
    if not 0 <= epoch <= cfg.n_epoch:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.n_epoch}]")
    return cfg.init_lr * (1.0 - epoch / cfg.n_epoch) ** cfg.power


@dataclass
class RunRecord:
    epochs: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    final_metrics: dict | None = None

    def to_json(self) -> dict:
        return {"schema": "megalap.run/1", **asdict(self)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _first_non_finite(named) -> str | None:
    for name, arr in named:
        if arr is not None and not np.all(np.isfinite(arr)):
            return name
    return None


def train_step(batch: list[Sample], params: ParamStore, cfg: RunConfig, lr: float) -> float:
    net = cfg.network
    images = np.stack([s.image for s in batch])
    masks = np.stack([s.mask for s in batch])
    result = forward(images, stack_high_freq(images, net), params, net)
    loss = total_loss(result.logits, downscale_gt(masks, net.depth))
    bad = _first_non_finite(
        [(f"logits[{i}]", v.value) for i, v in enumerate(result.logits)] + [("loss", loss.value)]
    )
    if bad:
        raise TrainingDiverged(f"non-finite values first seen in {bad}")
    ad.backward(loss)
    bad = _first_non_finite((f"grad[{p.name}]", p.grad) for p in params)
    if bad:
        raise TrainingDiverged(f"non-finite values first seen in {bad}")
    sgd_step(params, lr, cfg.train.momentum, cfg.train.weight_decay)
    return float(loss.value)


def predict(params: ParamStore, net: NetworkConfig, image: np.ndarray, keep: bool = False):
    """Full-resolution foreground probability for one (3, H, W) image."""
    images = image[None]
    result = forward(images, stack_high_freq(images, net), params, net, keep=keep)
    return result.prediction.value[0, 0], result


def evaluate_samples(params: ParamStore, net: NetworkConfig, samples: list[Sample]) -> MetricsReport:
    pairs = [(predict(params, net, s.image)[0], s.mask[0]) for s in samples]
    return MetricsReport.from_pairs(pairs, [s.id for s in samples])


def train(
    samples: list[Sample],
    cfg: RunConfig,
    val_samples: list[Sample] | None = None,
    out_dir: str | Path | None = None,
    max_steps: int | None = None,
) -> tuple[ParamStore, RunRecord, list[float]]:
    """Seeded training run.  Returns parameters, the run record and the
    per-epoch wall times (kept apart so the record is reproducible)."""
    tc = cfg.train
    params = init_params(cfg.network, seed=tc.seed)
    rng = np.random.default_rng(tc.seed)
    record = RunRecord()
    wall = []
    step = 0
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(tc.n_epoch):
        if max_steps is not None and step >= max_steps:
            break
        start = time.perf_counter()
        lr = lr_at(epoch, tc)
        order = rng.permutation(len(samples))
        losses = []
        for b0 in range(0, len(order), tc.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            batch = [samples[k] for k in order[b0 : b0 + tc.batch_size]]
            if tc.augment:
                batch = [augment(s, rng) for s in batch]
            losses.append(train_step(batch, params, cfg, lr))
            record.step_losses.append(losses[-1])
            step += 1
        record.epochs.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr, "steps": step})
        wall.append(time.perf_counter() - start)
        log.info("epoch %d lr %.3g loss %.4f", epoch, lr, record.epochs[-1]["loss"])
        if out and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            save_checkpoint(out / f"epoch{epoch + 1:04d}.ckpt", params, cfg)

    eval_set = val_samples if val_samples else samples
    record.final_metrics = evaluate_samples(params, cfg.network, eval_set).to_json()
    if out:
        save_checkpoint(out / "final.ckpt", params, cfg)
        (out / "run_record.json").write_text(record.dumps() + "\n")
        (out / "timing.json").write_text(json.dumps({"epoch_wall_s": wall}, indent=2) + "\n")
    return params, record, wall


def save_checkpoint(path: str | Path, params: ParamStore, cfg: RunConfig) -> None:
    checkpoint.save(path, params.state(), {"config": config_to_dict(cfg)})


def load_checkpoint(path: str | Path) -> tuple[ParamStore, RunConfig]:
    tensors, meta = checkpoint.load(path)
    cfg = config_from_dict(meta["config"])
    params = init_params(cfg.network)
    params.load_state(tensors)
    return params, cfg
