"""``megalap`` command line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import ablation
from .checkpoint import CheckpointError
from .config import _TYPES, PRESETS, _parse, apply_overrides, load_config
from .data import generate, load_dataset, save_dataset
from .gradcheck import TOLERANCE, run_all
from .imageio import ImageFormatError, read_image, read_mask, read_raw, to_uint8, write_heatmap, write_mask, write_raw
from .metrics import MetricsReport
from .network import param_count
from .pyramid import Derivation, build_pyramid, high_freq_set, luminance, resize
from .train import TrainingDiverged, load_checkpoint, predict, train

log = logging.getLogger("megalap")

# flag names that would collide across sections
_FLAG_NAMES = {("data", "seed"): "--data-seed"}


def _flag(section: str, key: str) -> str:
    return _FLAG_NAMES.get((section, key), "--" + key.replace("_", "-"))


def _add_config_flags(parser: argparse.ArgumentParser, sections, skip=()) -> None:
    group = parser.add_argument_group("configuration (override preset and --config)")
    group.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    group.add_argument("--config", type=Path, help="INI file with [network] [ega] [train] [data]")
    for section in sections:
        for key, typ in _TYPES[section].items():
            if (section, key) in skip:
                continue
            dest = f"cfg__{section}__{key}"
            if typ is bool:
                group.add_argument(_flag(section, key), dest=dest, action=argparse.BooleanOptionalAction)
            elif typ is Derivation:
                group.add_argument(_flag(section, key), dest=dest, choices=[d.value for d in Derivation])
            elif typ in (list, tuple):
                group.add_argument(_flag(section, key), dest=dest, metavar="N,N", type=str)
            else:
                group.add_argument(_flag(section, key), dest=dest, type=typ, metavar=key.upper())


def _resolve_config(args):
    cfg = PRESETS[args.preset]()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides: dict[str, dict] = {}
    for name, value in vars(args).items():
        if not name.startswith("cfg__") or value is None:
            continue
        _, section, key = name.split("__")
        if _TYPES[section][key] in (list, tuple):
            value = _parse(value, list)
        overrides.setdefault(section, {})[key] = value
    return apply_overrides(cfg, overrides) if overrides else cfg


def _samples(args, cfg):
    if args.data:
        train_set = load_dataset(args.data, "train")
        val_set = load_dataset(args.data, "val") or None
        return train_set, val_set
    return generate(cfg.data), None


def _write_json(path: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    samples, val = _samples(args, cfg)
    _, record, wall = train(samples, cfg, val_samples=val, out_dir=args.out_dir, max_steps=args.max_steps)
    _write_json(None, {
        "schema": "megalap.train-summary/1",
        "param_count": param_count(cfg.network),
        "steps": len(record.step_losses),
        "final_loss": record.step_losses[-1] if record.step_losses else None,
        "final_metrics": record.final_metrics["dataset_mean"],
        "wall_s": float(sum(wall)),
        "checkpoint": str(args.out_dir / "final.ckpt"),
    })
    return 0


def _read_prediction(path: Path) -> np.ndarray:
    raw = read_raw(path)
    return raw[..., 0].astype(np.float64) / 255.0


def cmd_eval(args) -> int:
    gts = {p.stem: p for p in sorted(args.gt_dir.iterdir()) if p.is_file()}
    pairs, ids = [], []
    for pred_path in sorted(args.pred_dir.iterdir()):
        if not pred_path.is_file() or pred_path.stem not in gts:
            continue
        pairs.append((_read_prediction(pred_path), read_mask(gts[pred_path.stem])[0]))
        ids.append(pred_path.stem)
    if not pairs:
        raise ValueError(f"no prediction in {args.pred_dir} has a same-named mask in {args.gt_dir}")
    report = MetricsReport.from_pairs(pairs, ids)
    _write_json(args.report, report.to_json())
    print(report.table(args.title))
    return 0


def _dump_attention(result, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    ranges = {}
    for i, out in enumerate(result.ega_outputs):
        if out is None:
            continue
        maps = {"attention": out.mask}
        for key in ("reverse", "boundary"):
            if key in out.intermediates:
                maps[key] = out.intermediates[key]
        for key, var in maps.items():
            name = f"level{i}_{key}.png"
            ranges[name] = write_heatmap(out_dir / name, var.value[0, 0])
    manifest = {"schema": "megalap.attention/1", "ranges": {k: list(v) for k, v in ranges.items()}}
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _predict_any_size(params, net, image):
    h, w = image.shape[-2:]
    if (h, w) == tuple(net.input_extents):
        return predict(params, net, image, keep=True)
    prob, result = predict(params, net, np.clip(resize(image, net.input_extents), 0, 1), keep=True)
    return np.clip(resize(prob[None], (h, w))[0], 0, 1), result


def cmd_infer(args) -> int:
    params, cfg = load_checkpoint(args.ckpt)
    if args.gt and len(args.gt) != len(args.input):
        raise ValueError(f"{len(args.input)} inputs but {len(args.gt)} masks")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    pairs = []
    for k, path in enumerate(args.input):
        prob, result = _predict_any_size(params, cfg.network, read_image(path))
        write_mask(args.out_dir / f"{path.stem}_mask.png", prob >= 0.5)
        write_raw(args.out_dir / f"{path.stem}_prob.png", to_uint8(prob))
        if args.dump_attention:
            _dump_attention(result, args.out_dir / f"{path.stem}_attention")
        if args.gt:
            pairs.append((prob, read_mask(args.gt[k])[0]))
    if pairs:
        report = MetricsReport.from_pairs(pairs, [p.stem for p in args.input])
        _write_json(args.report, report.to_json())
    return 0


def cmd_dump_attention(args) -> int:
    params, cfg = load_checkpoint(args.ckpt)
    _, result = _predict_any_size(params, cfg.network, read_image(args.input))
    _dump_attention(result, args.out_dir)
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    samples, val = _samples(args, cfg)
    grids = ("components", "derivation") if args.grid == "all" else (args.grid,)
    results = ablation.run_ablation(cfg, samples, val, grids=grids, max_steps=args.max_steps)
    _write_json(args.report, ablation.report_json(results))
    for grid, rows in results.items():
        print(f"[{grid}]")
        print(ablation.table(grid, rows))
    return 0 if all(r.status == "ok" for rows in results.values() for r in rows) else 3


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    results = run_all(args.scope)
    total = time.perf_counter() - start
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:<26} max rel err {r.max_rel_error:.2e}")
    print(f"{sum(r.passed for r in results)}/{len(results)} passed in {total:.1f}s")
    if args.report:
        _write_json(args.report, {
            "schema": "megalap.gradcheck/1",
            "tolerance": TOLERANCE,
            "seconds": total,
            "checks": [{"name": r.name, "max_rel_error": r.max_rel_error, "passed": r.passed} for r in results],
        })
    return 0 if all(r.passed for r in results) else 1


def cmd_pyramid(args) -> int:
    lum = luminance(read_image(args.input))
    stack = build_pyramid(lum, args.levels)
    hf = high_freq_set(lum, args.levels, args.derivation, raw=args.raw_laplacian)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ranges = {}
    for k, g in enumerate(stack.gaussian_levels):
        ranges[f"gaussian_{k}.png"] = write_heatmap(args.out_dir / f"gaussian_{k}.png", g)
    for k, lap in enumerate(stack.laplacian_levels):
        ranges[f"laplacian_{k}.png"] = write_heatmap(args.out_dir / f"laplacian_{k}.png", lap)
    for i, f in enumerate(hf.levels):
        ranges[f"hf_{i}.png"] = write_heatmap(args.out_dir / f"hf_{i}.png", f)
    _write_json(args.out_dir / "manifest.json", {
        "schema": "megalap.pyramid/1",
        "levels": args.levels,
        "derivation": Derivation(args.derivation).value,
        "ranges": {k: list(v) for k, v in ranges.items()},
    })
    return 0


def cmd_generate_data(args) -> int:
    cfg = _resolve_config(args)
    samples = generate(cfg.data)
    save_dataset(samples, args.out_dir, args.val_fraction)
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="megalap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + run record")
    p.add_argument("--seed", dest="cfg__train__seed", type=int, required=True, metavar="SEED")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset folder; synthesised from [data] when omitted")
    p.add_argument("--max-steps", type=int)
    _add_config_flags(p, ("network", "ega", "train", "data"), skip={("train", "seed")})
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score prediction maps against masks")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--title", default="dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict masks with a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--input", type=Path, nargs="+", required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--gt", type=Path, nargs="+", help="masks aligned with --input; enables a metrics report")
    p.add_argument("--report", type=Path, help="metrics JSON path (stdout when omitted)")
    p.add_argument("--dump-attention", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train the component and derivation ablation grids")
    p.add_argument("--grid", choices=("components", "derivation", "all"), default="all")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--data", type=Path)
    p.add_argument("--max-steps", type=int)
    _add_config_flags(p, ("network", "ega", "train", "data"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--scope", choices=("ops", "ega", "network", "all"), default="all")
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pyramid", help="dump Gaussian/Laplacian levels and edge maps")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--derivation", choices=[d.value for d in Derivation], default=Derivation.BASE_DOWNSAMPLE.value)
    p.add_argument("--raw-laplacian", action="store_true")
    p.set_defaults(func=cmd_pyramid)

    p = sub.add_parser("dump-attention", help="write per-level attention heatmaps")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("generate-data", help="write a synthetic dataset folder")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--val-fraction", type=float, default=0.0)
    _add_config_flags(p, ("data",))
    p.set_defaults(func=cmd_generate_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"megalap: training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError, ImageFormatError, CheckpointError) as exc:
        print(f"megalap: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
