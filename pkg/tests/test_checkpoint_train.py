import json

import mpmath
import numpy as np
import pytest

from megalap import checkpoint
from megalap.checkpoint import CheckpointError
from megalap.config import NetworkConfig, RunConfig, SynthConfig, TrainConfig, paper_preset
from megalap.data import generate
from megalap.network import init_params
from megalap.train import (
    TrainingDiverged,
    load_checkpoint,
    lr_at,
    predict,
    save_checkpoint,
    train,
    train_step,
)


def tiny_config(seed=3, **train_kw):
    kw = dict(n_epoch=2, batch_size=2, seed=seed)
    kw.update(train_kw)
    return RunConfig(
        NetworkConfig(depth=3, stem_channels=4, input_extents=(32, 32)),
        TrainConfig(**kw),
        SynthConfig(count=4, extents=(32, 32), seed=seed),
    )


# -- checkpoint container -----------------------------------------------------


def test_container_round_trip():
    tensors = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(2.5), "b.c": -np.ones((1, 1, 2, 2))}
    back, meta = checkpoint.loads(checkpoint.dumps(tensors, {"k": [1, 2]}))
    assert meta == {"k": [1, 2]}
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].shape == tensors[name].shape
        assert back[name].tobytes() == tensors[name].tobytes()


def test_container_header_layout():
    data = checkpoint.dumps({"w": np.zeros(1)}, {})
    assert data[:8] == b"MGLPCKPT" and data[8] == 1


def test_bad_magic_and_version():
    data = checkpoint.dumps({"w": np.zeros(2)})
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.loads(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.loads(data[:8] + b"\x02" + data[9:])


def test_every_truncation_is_reported():
    data = checkpoint.dumps({"w": np.ones((2, 2)), "bias": np.zeros(3)}, {"note": "x"})
    for cut in range(len(data)):
        with pytest.raises(CheckpointError):
            checkpoint.loads(data[:cut])
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.loads(data + b"\x00")


def test_checkpoint_reload_gives_identical_logits(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg.network, seed=9)
    save_checkpoint(tmp_path / "m.ckpt", params, cfg)
    loaded, cfg2 = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg
    image = generate(cfg.data)[0].image
    a = predict(params, cfg.network, image)[1]
    b = predict(loaded, cfg2.network, image)[1]
    assert all(x.value.tobytes() == y.value.tobytes() for x, y in zip(a.logits, b.logits))


# -- schedule -----------------------------------------------------------------


def test_schedule_endpoints():
    tc = paper_preset().train
    assert lr_at(0, tc) == 1e-3
    assert lr_at(tc.n_epoch, tc) == 0.0
    with pytest.raises(ValueError, match="outside"):
        lr_at(tc.n_epoch + 1, tc)
    with pytest.raises(ValueError, match="outside"):
        lr_at(-1, tc)


def test_schedule_matches_high_precision_oracle():
    tc = paper_preset().train
    mpmath.mp.dps = 50
    for epoch in range(tc.n_epoch + 1):
        exact = mpmath.mpf("1e-3") * (1 - mpmath.mpf(epoch) / tc.n_epoch) ** mpmath.mpf("0.9")
        assert abs(lr_at(epoch, tc) - float(exact)) <= 1e-15 * 1e-3


def test_schedule_strictly_decreasing():
    for tc in (paper_preset().train, TrainConfig(n_epoch=7, power=1.0)):
        lrs = [lr_at(e, tc) for e in range(tc.n_epoch + 1)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_config_rejects_bad_power():
    with pytest.raises(ValueError, match="power"):
        TrainConfig(power=0.0)


# -- training loop ------------------------------------------------------------


def test_training_writes_artifacts(tmp_path):
    cfg = tiny_config(checkpoint_every=1)
    samples = generate(cfg.data)
    params, record, wall = train(samples, cfg, out_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["epoch0001.ckpt", "epoch0002.ckpt", "final.ckpt", "run_record.json", "timing.json"]
    doc = json.loads((tmp_path / "run_record.json").read_text())
    assert doc["schema"] == "megalap.run/1"
    assert len(doc["step_losses"]) == 4 and [e["steps"] for e in doc["epochs"]] == [2, 4]
    assert doc["epochs"][0]["lr"] == cfg.train.init_lr
    assert set(doc["final_metrics"]["dataset_mean"]) >= {"mdice", "mae"}
    assert len(wall) == 2


def test_identical_seeds_give_identical_runs(tmp_path):
    cfg = tiny_config(augment=True)
    samples = generate(cfg.data)
    for name in ("a", "b"):
        train(samples, cfg, out_dir=tmp_path / name)
    for artifact in ("final.ckpt", "run_record.json"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()
    train(samples, tiny_config(seed=4, augment=True), out_dir=tmp_path / "c")
    assert (tmp_path / "c" / "final.ckpt").read_bytes() != (tmp_path / "a" / "final.ckpt").read_bytes()


def test_max_steps_and_validation_split():
    cfg = tiny_config(n_epoch=5)
    samples = generate(cfg.data)
    _, record, _ = train(samples[:3], cfg, val_samples=samples[3:], max_steps=3)
    assert len(record.step_losses) == 3
    assert [row["id"] for row in record.final_metrics["per_image"]] == [samples[3].id]


def test_divergence_names_the_tensor():
    cfg = tiny_config()
    params = init_params(cfg.network)
    p = params.parameter("head0.weight")
    p.assign(np.full(p.value.shape, np.inf))
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged, match=r"logits\[0\]"):
        train_step(generate(cfg.data)[:2], params, cfg, lr=0.1)


def test_single_step_reduces_loss_on_one_batch():
    cfg = tiny_config()
    batch = generate(cfg.data)[:2]
    params = init_params(cfg.network, seed=1)
    first = train_step(batch, params, cfg, lr=0.05)
    for _ in range(5):
        last = train_step(batch, params, cfg, lr=0.05)
    assert last < first
