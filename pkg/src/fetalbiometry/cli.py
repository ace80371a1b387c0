"""Command-line entry points.

Subcommands: train, eval, infer, measure, ablate, synth. Exit codes:
0 success, 2 bad configuration or arguments, 3 data problems, 4 checkpoint
problems. Report-producing commands write CSV/JSON plus rendered PNG
figures into their output directory.
"""

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import AblationFlags, TrainConfig, load_config
from .data import load_dataset, load_manifest, resize_sample
from .errors import CheckpointError, ConfigError, ContractError, DataError
from .geometry import BinaryMask, measure_with_fit, postprocess
from .labels import ClassLabel, parse_label
from .phantom import DEFAULT_CLASS_MIX, generate_suite
from .report import render_overlay, save_ablation_table, save_history, save_metric_report
from .train import evaluate_model, predict_sample, train_model

ABLATION_VARIANTS = [
    ("base", AblationFlags(classification_branch=False, attention_gates=False,
                           stacked_module=False)),
    ("+cls", AblationFlags(classification_branch=True, attention_gates=False,
                           stacked_module=False)),
    ("+cls+AG", AblationFlags(classification_branch=True, attention_gates=True,
                              stacked_module=False)),
    ("+cls+SM", AblationFlags(classification_branch=True, attention_gates=False,
                              stacked_module=True)),
    ("+cls+AG+SM", AblationFlags(classification_branch=True, attention_gates=True,
                                 stacked_module=True)),
]


def _load_train_data(cfg: TrainConfig):
    if not cfg.manifest:
        raise ConfigError("config must set 'manifest' to a dataset manifest path")
    train_man = load_manifest(cfg.manifest)
    train_samples = load_dataset(train_man, cfg.net.input_size)
    val_samples = None
    if cfg.val_manifest:
        val_samples = load_dataset(load_manifest(cfg.val_manifest), cfg.net.input_size)
    return train_samples, val_samples


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_samples, val_samples = _load_train_data(cfg)
    print(f"training on {len(train_samples)} clips "
          f"(val: {len(val_samples) if val_samples else 'train set'})")
    model, history = train_model(cfg, train_samples, val_samples, log=print)
    out = Path(cfg.out_dir)
    ckpt = save_checkpoint(out / "checkpoint.ckpt", model, cfg)
    paths = save_history(history, out)
    print(f"checkpoint: {ckpt}")
    print(f"history: {paths['json']}, {paths['csv']}, {paths['figure']}")
    if history:
        last = history[-1]
        acc = f"{last['val_accuracy']:.3f}" if not math.isnan(last["val_accuracy"]) else "n/a"
        print(f"final: dice {last['val_dice']:.3f}  iou {last['val_iou']:.3f}  acc {acc}")
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    samples = load_dataset(manifest, cfg.net.input_size)
    report = evaluate_model(model, samples, with_adf=True)
    out = Path(args.out)
    paths = save_metric_report(report, out)
    print(report.to_csv().strip())
    for name, stats in sorted(report.adf_mm.items()):
        print(f"adf {name}: {stats['mean']:.2f} +/- {stats['std']:.2f} mm "
              f"(n={stats['count']})")
    print(f"report: {paths['json']}, {paths['csv']}")
    return 0


def _read_clip_dir(clip_dir: Path):
    if not clip_dir.is_dir():
        raise DataError(f"clip directory not found: {clip_dir}")
    meta_path = clip_dir / "meta.json"
    if not meta_path.exists():
        raise DataError(f"missing {meta_path}; it must define pixel_spacing_mm")
    try:
        meta = json.loads(meta_path.read_text())
        spacing = float(meta["pixel_spacing_mm"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad metadata in {meta_path}: {exc}") from None
    if spacing <= 0:
        raise DataError(f"pixel_spacing_mm must be > 0, got {spacing}")
    frame_paths = sorted(p for p in clip_dir.iterdir()
                         if p.suffix.lower() in (".png", ".bmp", ".tif", ".tiff"))
    if not frame_paths:
        raise DataError(f"no frame images in {clip_dir}")
    from .data import _read_gray

    frames = np.stack([_read_gray(p) for p in frame_paths])
    return frames, frame_paths, spacing


def cmd_infer(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    frames, frame_paths, spacing = _read_clip_dir(Path(args.clip_dir))
    size = cfg.net.input_size
    sample = resize_sample(frames, np.zeros_like(frames, dtype=np.uint8),
                           (ClassLabel.BACKGROUND,) * len(frames), spacing,
                           size, letterbox=True)
    probs, pred_masks, pred_labels = predict_sample(model, sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for t, path in enumerate(frame_paths):
        label = pred_labels[t] if pred_labels is not None else None
        fit = None
        if label is not None and label != ClassLabel.BACKGROUND:
            bm = postprocess(probs[t].astype(np.float64), size,
                             pixel_spacing=sample.pixel_spacing_mm)
            result, fit = measure_with_fit(label, bm)
            pred_for_overlay = bm.data
        else:
            result = None
            pred_for_overlay = pred_masks[t]
        record = {"frame_id": t, "file": path.name}
        if result is not None:
            record.update(result.to_json_dict())
        else:
            record["label"] = label.name.lower() if label is not None else None
        records.append(record)
        render_overlay(sample.frames[t, 0], pred_for_overlay, None,
                       out / f"overlay_f{t:03d}.png", fit_shape=fit)
    (out / "predictions.json").write_text(json.dumps({"frames": records}, indent=2) + "\n")
    n_fg = sum(1 for r in records if r.get("label") not in (None, "background"))
    print(f"{len(records)} frames ({n_fg} foreground); wrote {out / 'predictions.json'}")
    return 0


def cmd_measure(args) -> int:
    if args.spacing <= 0:
        raise ConfigError(f"--spacing must be > 0, got {args.spacing}")
    try:
        label = parse_label(args.label)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    from .data import _read_gray

    img = _read_gray(Path(args.mask)).astype(np.float64)
    if args.raw:
        bm = BinaryMask(data=(img > 0.5).astype(np.uint8), pixel_spacing=args.spacing)
    else:
        bm = postprocess(img, img.shape, pixel_spacing=args.spacing)
    result, _ = measure_with_fit(label, bm)
    doc = result.to_json_dict()
    text = json.dumps(doc, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    train_samples, val_samples = _load_train_data(cfg)
    rows = []
    for name, flags in ABLATION_VARIANTS:
        variant_cfg = dataclasses.replace(cfg, flags=flags)
        model, _ = train_model(variant_cfg, train_samples, val_samples)
        report = evaluate_model(model, val_samples if val_samples else train_samples)
        rows.append((name, report))
        acc = f"{report.accuracy:.3f}" if not math.isnan(report.accuracy) else "  n/a"
        print(f"{name:12s} iou {report.iou:.3f}  dice {report.dice:.3f}  acc {acc}")
    paths = save_ablation_table(rows, Path(cfg.out_dir))
    print(f"table: {paths['csv']}  figure: {paths['figure']}")
    return 0


def _parse_mix(text: str):
    try:
        mix = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"--mix must be 4 comma-separated numbers, got {text!r}") from None
    if len(mix) != 4:
        raise ConfigError(f"--mix must have 4 entries (head,abdomen,femur,background), got {len(mix)}")
    return mix


def cmd_synth(args) -> int:
    mix = _parse_mix(args.mix) if args.mix else DEFAULT_CLASS_MIX
    manifest, truths = generate_suite(
        args.out, n_clips=args.clips, seed=args.seed, size=args.size,
        clip_len=args.clip_len, pixel_spacing_mm=args.spacing,
        noise_sigma=args.sigma, class_mix=mix, max_drift=args.max_drift,
    )
    print(f"{len(manifest.entries)} clips -> {Path(args.out) / 'manifest.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fetalbiometry",
        description="Ultrasound video segmentation, classification and biometry.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="TOML or JSON training config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="eval_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a clip directory through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip-dir", required=True,
                   help="directory of ordered frame images plus meta.json")
    p.add_argument("--out", default="infer_out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("measure", help="measure a single mask image")
    p.add_argument("--mask", required=True, help="mask or probability image")
    p.add_argument("--label", required=True, help="head, abdomen or femur")
    p.add_argument("--spacing", type=float, required=True, help="mm per pixel")
    p.add_argument("--raw", action="store_true",
                   help="skip cleanup; threshold the image at 0.5 directly")
    p.add_argument("--out", help="also write the JSON result here")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("ablate", help="train and compare component variants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--clip-len", type=int, default=5)
    p.add_argument("--spacing", type=float, default=0.2)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--mix", help="head,abdomen,femur,background weights")
    p.add_argument("--max-drift", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
