"""Component ablation grid (EGA branches, CBAM) and the f^l derivation toggle."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass

from .config import RunConfig, apply_overrides, config_to_dict
from .data import Sample
from .pyramid import Derivation
from .train import TrainingDiverged, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    label: str
    use_reverse: bool = True
    use_boundary: bool = True
    use_hf: bool = True
    use_cbam: bool = True
    derivation: Derivation = Derivation.BASE_DOWNSAMPLE

    def apply(self, cfg: RunConfig) -> RunConfig:
        ega = {f: getattr(self, f) for f in ("use_reverse", "use_boundary", "use_hf", "use_cbam")}
        return apply_overrides(cfg, {"ega": ega, "network": {"hf_derivation": self.derivation}})


COMPONENT_GRID = (
    Variant("#1", False, False, False, False),
    Variant("#2", use_reverse=False),
    Variant("#3", use_boundary=False),
    Variant("#4", use_hf=False),
    Variant("#5", use_cbam=False),
    Variant("#6"),
)

DERIVATION_GRID = (
    Variant("base", derivation=Derivation.BASE_DOWNSAMPLE),
    Variant("per-level", derivation=Derivation.PER_LEVEL_LAPLACIAN),
)

GRIDS = {"components": COMPONENT_GRID, "derivation": DERIVATION_GRID}


@dataclass
class AblationRow:
    label: str
    flags: dict
    status: str
    final_loss: float | None
    metrics: dict | None
    detail: str = ""


def run_variant(variant: Variant, cfg: RunConfig, samples: list[Sample],
                val: list[Sample] | None, max_steps: int | None) -> AblationRow:
    vcfg = variant.apply(cfg)
    flags = {k: v for k, v in dataclasses.asdict(variant).items() if k != "label"}
    flags["derivation"] = variant.derivation.value
    try:
        _, record, _ = train(samples, vcfg, val_samples=val, max_steps=max_steps)
    except TrainingDiverged as exc:
        return AblationRow(variant.label, flags, "diverged", None, None, str(exc))
    loss = record.step_losses[-1] if record.step_losses else None
    finite = loss is not None and math.isfinite(loss)
    return AblationRow(
        variant.label, flags, "ok" if finite else "diverged", loss, record.final_metrics["dataset_mean"]
    )


def run_ablation(cfg: RunConfig, samples: list[Sample], val: list[Sample] | None = None,
                 grids=("components", "derivation"), max_steps: int | None = None) -> dict[str, list[AblationRow]]:
    """Train every variant of the selected grids from the same seed.

    Identical effective configurations (the full model appears in both grids)
    are trained once and the row reused; training is deterministic, so this
    changes nothing but runtime.
    """
    cache: dict[str, AblationRow] = {}
    out: dict[str, list[AblationRow]] = {}
    for grid in grids:
        rows = []
        for variant in GRIDS[grid]:
            key = json.dumps(config_to_dict(variant.apply(cfg)), sort_keys=True)
            if key not in cache:
                log.info("ablation %s %s", grid, variant.label)
                cache[key] = run_variant(variant, cfg, samples, val, max_steps)
            rows.append(dataclasses.replace(cache[key], label=variant.label))
        out[grid] = rows
    return out


def report_json(results: dict[str, list[AblationRow]]) -> dict:
    return {
        "schema": "megalap.ablation/1",
        "grids": {g: [dataclasses.asdict(r) for r in rows] for g, rows in results.items()},
    }


def _mark(flag: bool) -> str:
    return "x" if flag else "-"


def table(grid: str, rows: list[AblationRow]) -> str:
    if grid == "components":
        head = f"{'Exp.':<6}{'f^r':>5}{'f^b':>5}{'f^l':>5}{'CBAM':>6}"
        lead = lambda r: (  # noqa: E731
            f"{r.label:<6}{_mark(r.flags['use_reverse']):>5}{_mark(r.flags['use_boundary']):>5}"
            f"{_mark(r.flags['use_hf']):>5}{_mark(r.flags['use_cbam']):>6}"
        )
    else:
        head = f"{'f^l':<27}"
        lead = lambda r: f"{r.label:<27}"  # noqa: E731
    head += f"{'mDice':>9}{'mIoU':>9}{'loss':>10}  status"
    lines = [head]
    for r in rows:
        if r.metrics:
            nums = f"{100 * r.metrics['mdice']:>9.1f}{100 * r.metrics['miou']:>9.1f}{r.final_loss:>10.4f}"
        else:
            nums = f"{'nan':>9}{'nan':>9}{'nan':>10}"
        lines.append(lead(r) + nums + f"  {r.status}")
    return "\n".join(lines)
