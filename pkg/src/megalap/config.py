"""Run configuration: network, EGA, training and synthetic-data settings.

Config files are INI (``configparser``) with sections ``[network]``,
``[ega]``, ``[train]`` and ``[data]``; keys are the dataclass field names.
Lists are comma separated, booleans use the usual INI spellings.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .ega import EgaConfig
from .pyramid import Derivation


@dataclass
class NetworkConfig:
    depth: int = 5
    stem_channels: int = 8
    channel_schedule: list[int] | None = None
    decoder_channels: int | None = None
    input_extents: tuple[int, int] = (64, 64)
    ega: EgaConfig = field(default_factory=EgaConfig)
    hf_derivation: Derivation = Derivation.BASE_DOWNSAMPLE
    hf_interpolate: bool = False
    raw_laplacian: bool = False

    def __post_init__(self):
        self.hf_derivation = Derivation(self.hf_derivation)
        self.input_extents = tuple(self.input_extents)
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.channel_schedule is None:
            self.channel_schedule = [self.stem_channels * 2**i for i in range(self.depth)]
        self.channel_schedule = list(self.channel_schedule)
        if len(self.channel_schedule) != self.depth:
            raise ValueError(
                f"channel_schedule has {len(self.channel_schedule)} entries for depth {self.depth}"
            )
        if self.decoder_channels is None:
            self.decoder_channels = self.channel_schedule[0]
        for i in range(self.depth - 1):
            self.ega_config(i)
        h, w = self.input_extents
        if h % 2**self.depth or w % 2**self.depth:
            raise ValueError(f"input extents {h}x{w} not divisible by 2^{self.depth}")

    def ega_config(self, i: int) -> EgaConfig:
        return self.ega.with_channels(self.ega_channels(i))

    def level_extents(self, i: int) -> tuple[int, int]:
        h, w = self.input_extents
        return h >> (i + 1), w >> (i + 1)

    def ega_channels(self, i: int) -> int:
        # level 0 consumes the raw first encoder feature
        return self.channel_schedule[0] if i == 0 else self.decoder_channels


@dataclass
class TrainConfig:
    init_lr: float = 1e-3
    power: float = 0.9
    n_epoch: int = 200
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 16
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.init_lr <= 0 or self.n_epoch <= 0 or self.batch_size <= 0:
            raise ValueError("init_lr, n_epoch and batch_size must be positive")
        if not 0 < self.power <= 1:
            raise ValueError(f"power must lie in (0, 1], got {self.power}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be non-negative")


@dataclass
class SynthConfig:
    count: int = 8
    extents: tuple[int, int] = (64, 64)
    blob_count_range: tuple[int, int] = (1, 3)
    boundary_softness: float = 1.0
    contrast: float = 0.35
    texture_amplitude: float = 0.08
    seed: int = 0

    def __post_init__(self):
        self.extents = tuple(self.extents)
        self.blob_count_range = tuple(self.blob_count_range)
        if self.boundary_softness < 0:
            raise ValueError("boundary_softness must be >= 0")
        lo, hi = self.blob_count_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad blob_count_range {self.blob_count_range}")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SynthConfig = field(default_factory=SynthConfig)


def paper_preset() -> RunConfig:
    """Training recipe as published: 352x352, batch 16, 200 epochs."""
    return RunConfig(
        NetworkConfig(input_extents=(352, 352)),
        TrainConfig(),
        SynthConfig(count=1450, extents=(352, 352)),
    )


def desk_preset() -> RunConfig:
    return RunConfig(
        NetworkConfig(),
        TrainConfig(n_epoch=40, batch_size=4),
        SynthConfig(count=64),
    )


def overfit_preset() -> RunConfig:
    """Eight fixed samples memorised in at most 500 updates."""
    return RunConfig(
        NetworkConfig(),
        TrainConfig(init_lr=0.01, n_epoch=250, batch_size=4, seed=7, augment=False),
        SynthConfig(count=8, seed=7),
    )


PRESETS = {"paper": paper_preset, "desk": desk_preset, "overfit": overfit_preset}


def _parse(raw: str, typ):
    text = raw.strip()
    if typ is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in (list, tuple):
        return [int(v) for v in text.split(",") if v.strip()]
    return typ(text)


_TYPES = {
    "network": {
        "depth": int,
        "stem_channels": int,
        "channel_schedule": list,
        "decoder_channels": int,
        "input_extents": tuple,
        "hf_derivation": Derivation,
        "hf_interpolate": bool,
        "raw_laplacian": bool,
    },
    "ega": {
        "use_reverse": bool,
        "use_boundary": bool,
        "use_hf": bool,
        "use_cbam": bool,
        "cbam_reduction": int,
        "spatial_kernel": int,
        "signed_boundary": bool,
    },
    "train": {
        "init_lr": float,
        "power": float,
        "n_epoch": int,
        "momentum": float,
        "weight_decay": float,
        "batch_size": int,
        "seed": int,
        "augment": bool,
        "checkpoint_every": int,
    },
    "data": {
        "count": int,
        "extents": tuple,
        "blob_count_range": tuple,
        "boundary_softness": float,
        "contrast": float,
        "texture_amplitude": float,
        "seed": int,
    },
}


def _coerce(section: str, key: str, raw: str):
    types = _TYPES[section]
    if key not in types:
        raise KeyError(f"unknown key {key!r} in [{section}]")
    return _parse(raw, types[key])


def apply_overrides(cfg: RunConfig, overrides: dict[str, dict[str, object]]) -> RunConfig:
    """New RunConfig with per-section key overrides applied."""
    net = dataclasses.asdict(cfg.network)
    ega = {**net.pop("ega"), **overrides.get("ega", {})}
    net_over = overrides.get("network", {})
    # derived widths follow a changed depth / stem unless given explicitly
    if {"depth", "stem_channels"} & set(net_over):
        net["channel_schedule"] = None
        net["decoder_channels"] = None
    net.update(net_over)
    train = {**dataclasses.asdict(cfg.train), **overrides.get("train", {})}
    data = {**dataclasses.asdict(cfg.data), **overrides.get("data", {})}
    return RunConfig(
        NetworkConfig(**net, ega=EgaConfig(**ega)), TrainConfig(**train), SynthConfig(**data)
    )


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    overrides: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _TYPES:
            raise KeyError(f"unknown config section [{section}]")
        overrides[section] = {k: _coerce(section, k, v) for k, v in parser[section].items()}
    return apply_overrides(base or desk_preset(), overrides)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    net = dataclasses.asdict(cfg.network)
    ega = net.pop("ega")
    ega.pop("channels")

    def fmt(v):
        if isinstance(v, (list, tuple)):
            return ", ".join(str(x) for x in v)
        if isinstance(v, Derivation):
            return v.value
        return str(v)

    parser["network"] = {k: fmt(v) for k, v in net.items() if v is not None}
    parser["ega"] = {k: fmt(v) for k, v in ega.items()}
    parser["train"] = {k: fmt(v) for k, v in dataclasses.asdict(cfg.train).items()}
    parser["data"] = {k: fmt(v) for k, v in dataclasses.asdict(cfg.data).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["network"]["hf_derivation"] = cfg.network.hf_derivation.value
    return d


def config_from_dict(d: dict) -> RunConfig:
    net = dict(d["network"])
    ega = EgaConfig(**net.pop("ega"))
    return RunConfig(
        NetworkConfig(**net, ega=ega),
        TrainConfig(**d["train"]),
        SynthConfig(**d["data"]),
    )
