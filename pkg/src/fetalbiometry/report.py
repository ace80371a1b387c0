"""Report files: metric tables, training curves, and overlay images.

Every report path emits machine-readable CSV/JSON next to rendered PNG
figures. Overlays follow the convention of ground truth in red and
prediction in green, painted on the grayscale frame; files are lossless.
"""

import csv
import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np
from PIL import Image

from .geometry import EllipseFit, RotatedRect
from .imageops import binary_erode, cross_element
from .metrics import MetricReport

GT_COLOR = (255, 64, 64)
PRED_COLOR = (64, 255, 64)


def _clean_float(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def save_history(history: List[dict], out_dir) -> Dict[str, Path]:
    """Per-epoch log as JSON + CSV plus a loss/metric curve figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "history.json",
        "csv": out / "history.csv",
        "figure": out / "curves.png",
    }
    paths["json"].write_text(json.dumps(history, indent=2) + "\n")
    fields = ["epoch", "train_loss", "val_iou", "val_dice", "val_accuracy"]
    with paths["csv"].open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: ("" if _clean_float(row.get(k)) is None and k != "epoch"
                                 else row.get(k)) for k in fields})

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [r["epoch"] for r in history]
    ax1.plot(epochs, [r["train_loss"] for r in history], color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax2.plot(epochs, [r["val_dice"] for r in history], label="dice", color="tab:green")
    accs = [_clean_float(r.get("val_accuracy")) for r in history]
    if any(a is not None for a in accs):
        ax2.plot(epochs, [a if a is not None else float("nan") for a in accs],
                 label="accuracy", color="tab:orange")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(-0.02, 1.02)
    ax2.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(paths["figure"], dpi=110)
    plt.close(fig)
    return paths


def save_metric_report(report: MetricReport, out_dir, stem: str = "metrics") -> Dict[str, Path]:
    """MetricReport as JSON + CSV; ADF bar figure when measurements exist."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / f"{stem}.json", "csv": out / f"{stem}.csv"}
    paths["json"].write_text(report.to_json() + "\n")
    paths["csv"].write_text(report.to_csv())
    if report.adf_mm:
        names = sorted(report.adf_mm)
        means = [report.adf_mm[n]["mean"] for n in names]
        stds = [report.adf_mm[n]["std"] for n in names]
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.bar(names, means, yerr=stds, capsize=4, color="tab:blue")
        ax.set_ylabel("measurement error (mm)")
        fig.tight_layout()
        paths["figure"] = out / f"{stem}_adf.png"
        fig.savefig(paths["figure"], dpi=110)
        plt.close(fig)
    return paths


def save_ablation_table(rows: Sequence[Tuple[str, MetricReport]], out_dir) -> Dict[str, Path]:
    """Variant-by-metric CSV plus a grouped bar figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "ablation.csv", "figure": out / "ablation.png"}
    with paths["csv"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "iou", "dice", "accuracy"])
        for name, rep in rows:
            writer.writerow([
                name,
                f"{rep.iou:.6f}" if not math.isnan(rep.iou) else "",
                f"{rep.dice:.6f}" if not math.isnan(rep.dice) else "",
                f"{rep.accuracy:.6f}" if not math.isnan(rep.accuracy) else "",
            ])
    names = [name for name, _ in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(1.4 + 1.3 * len(names), 3.4))
    for off, (metric, color) in enumerate([("iou", "tab:blue"), ("dice", "tab:green"),
                                           ("accuracy", "tab:orange")]):
        vals = [getattr(rep, metric) for _, rep in rows]
        ax.bar(x + (off - 1) * 0.26, vals, width=0.24, label=metric, color=color)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["figure"], dpi=110)
    plt.close(fig)
    return paths


# ----------------------------------------------------------------- overlays


def _mask_boundary(mask: np.ndarray) -> np.ndarray:
    m = mask.astype(bool)
    if not m.any():
        return m
    return m & ~binary_erode(m, cross_element(3)).astype(bool)


def _shape_outline(shape, size: int) -> np.ndarray:
    """Rasterize an EllipseFit or RotatedRect outline as a boolean image."""
    out = np.zeros((size, size), dtype=bool)
    if isinstance(shape, EllipseFit):
        t = np.linspace(0.0, 2.0 * math.pi, max(64, int(8 * shape.a)), endpoint=False)
        ct, st = math.cos(shape.theta), math.sin(shape.theta)
        xs = shape.cx + shape.a * np.cos(t) * ct - shape.b * np.sin(t) * st
        ys = shape.cy + shape.a * np.cos(t) * st + shape.b * np.sin(t) * ct
    elif isinstance(shape, RotatedRect):
        ct, st = math.cos(shape.angle), math.sin(shape.angle)
        hx, hy = shape.long / 2.0, shape.short / 2.0
        corners = np.array([(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy), (-hx, -hy)])
        pieces = []
        for p0, p1 in zip(corners[:-1], corners[1:]):
            steps = max(2, int(np.hypot(*(p1 - p0)) * 4))
            frac = np.linspace(0.0, 1.0, steps)[:, None]
            pieces.append(p0 + frac * (p1 - p0))
        local = np.concatenate(pieces)
        xs = shape.cx + local[:, 0] * ct - local[:, 1] * st
        ys = shape.cy + local[:, 0] * st + local[:, 1] * ct
    else:
        return out
    xi = np.rint(xs).astype(int)
    yi = np.rint(ys).astype(int)
    keep = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
    out[yi[keep], xi[keep]] = True
    return out


def render_overlay(frame: np.ndarray, pred_mask: Optional[np.ndarray],
                   gt_mask: Optional[np.ndarray], path,
                   fit_shape=None) -> Path:
    """Paint prediction (green) and ground truth (red) outlines on a frame.

    ``fit_shape`` optionally draws the fitted ellipse/rectangle on top of
    the predicted mask boundary. Saved as lossless PNG.
    """
    frame = np.asarray(frame, dtype=np.float64)
    base = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    rgb = np.stack([base] * 3, axis=-1)
    if gt_mask is not None:
        rgb[_mask_boundary(np.asarray(gt_mask))] = GT_COLOR
    if pred_mask is not None:
        rgb[_mask_boundary(np.asarray(pred_mask))] = PRED_COLOR
    if fit_shape is not None:
        rgb[_shape_outline(fit_shape, frame.shape[0])] = PRED_COLOR
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(p)
    return p
