"""Dataset ingestion, geometric normalization, and clip-level augmentation.

Datasets are frame directories described by a JSON manifest; every clip
carries ordered frame paths, per-frame labels, optional per-frame mask
paths, and an isotropic pixel spacing. Splits are made at patient
granularity so no patient leaks across train/val/test.
"""

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DataError
from .imageops import bilinear_resize, letterbox_square, nearest_resize
from .labels import ClassLabel, parse_label


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: str
    clip_id: str
    frames: Tuple[str, ...]
    labels: Tuple[ClassLabel, ...]
    masks: Tuple[Optional[str], ...]
    pixel_spacing_mm: float


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...]
    root: Path = field(default_factory=Path)

    def patients(self) -> Tuple[str, ...]:
        seen = dict.fromkeys(e.patient_id for e in self.entries)
        return tuple(seen)


@dataclass
class Sample:
    """One network-ready clip: aligned frames/masks plus resized spacing."""

    frames: np.ndarray  # (T, 1, S, S) float32 in [0, 1]
    masks: np.ndarray  # (T, S, S) uint8 in {0, 1}
    labels: Tuple[ClassLabel, ...]
    pixel_spacing_mm: float


_TRAILING_INT = re.compile(r"(\d+)(?=\.[A-Za-z0-9]+$)")


def _frame_sort_key(path: str) -> Optional[int]:
    m = _TRAILING_INT.search(Path(path).name)
    return int(m.group(1)) if m else None


def _validate_entry(idx: int, e: ManifestEntry):
    where = f"entry {idx} (clip {e.clip_id!r})"
    if not e.patient_id:
        raise DataError(f"{where}: patient_id is empty")
    if not e.frames:
        raise DataError(f"{where}: no frames")
    if len(e.labels) != len(e.frames):
        raise DataError(f"{where}: {len(e.labels)} labels for {len(e.frames)} frames")
    if len(e.masks) != len(e.frames):
        raise DataError(f"{where}: {len(e.masks)} mask slots for {len(e.frames)} frames")
    if not (isinstance(e.pixel_spacing_mm, (int, float)) and e.pixel_spacing_mm > 0):
        raise DataError(f"{where}: pixel_spacing_mm must be > 0, got {e.pixel_spacing_mm!r}")
    if len(set(e.frames)) != len(e.frames):
        raise DataError(f"{where}: duplicate frame paths")
    keys = [_frame_sort_key(f) for f in e.frames]
    if all(k is not None for k in keys) and any(a >= b for a, b in zip(keys, keys[1:])):
        raise DataError(f"{where}: frame indices are not strictly increasing: {keys}")
    for t, (label, mask) in enumerate(zip(e.labels, e.masks)):
        if label != ClassLabel.BACKGROUND and not mask:
            raise DataError(f"{where}: frame {t} has label {label.name} but no mask path")


def _entry_from_raw(idx: int, raw: dict) -> ManifestEntry:
    if not isinstance(raw, dict):
        raise DataError(f"entry {idx}: expected an object, got {type(raw).__name__}")
    required = {"patient_id", "clip_id", "frames", "labels", "pixel_spacing_mm"}
    missing = required - raw.keys()
    if missing:
        raise DataError(f"entry {idx}: missing fields {sorted(missing)}")
    spacing = raw["pixel_spacing_mm"]
    if isinstance(spacing, (list, tuple)):
        vals = [float(v) for v in spacing]
        if len(vals) != 1 and len(set(vals)) != 1:
            raise DataError(f"entry {idx}: anisotropic pixel spacing {vals} is not supported")
        spacing = vals[0]
    try:
        labels = tuple(parse_label(l) for l in raw["labels"])
    except ValueError as exc:
        raise DataError(f"entry {idx}: {exc}") from None
    masks = raw.get("masks")
    if masks is None:
        masks = [None] * len(raw["frames"])
    entry = ManifestEntry(
        patient_id=str(raw["patient_id"]),
        clip_id=str(raw["clip_id"]),
        frames=tuple(str(f) for f in raw["frames"]),
        labels=labels,
        masks=tuple((str(m) if m else None) for m in masks),
        pixel_spacing_mm=float(spacing),
    )
    _validate_entry(idx, entry)
    return entry


def load_manifest(path) -> DatasetManifest:
    """Read and validate a JSON dataset manifest."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {p} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or "entries" not in raw:
        raise DataError(f"manifest {p} must be an object with an 'entries' list")
    entries = tuple(_entry_from_raw(i, e) for i, e in enumerate(raw["entries"]))
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate clip_id values in manifest")
    return DatasetManifest(entries=entries, root=p.parent)


def save_manifest(manifest: DatasetManifest, path) -> Path:
    p = Path(path)
    doc = {
        "entries": [
            {
                "patient_id": e.patient_id,
                "clip_id": e.clip_id,
                "pixel_spacing_mm": e.pixel_spacing_mm,
                "frames": list(e.frames),
                "labels": [l.name.lower() for l in e.labels],
                "masks": list(e.masks),
            }
            for e in manifest.entries
        ]
    }
    p.write_text(json.dumps(doc, indent=2) + "\n")
    return p


def make_splits(manifest: DatasetManifest, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Patient-level train/val/test split, deterministic under the seed."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DataError(f"ratios must be 3 nonnegative values summing to 1, got {ratios}")
    patients = list(manifest.patients())
    n_active = sum(1 for r in ratios if r > 0)
    if len(patients) < n_active:
        raise DataError(f"{len(patients)} patients cannot fill {n_active} splits")
    rng = np.random.default_rng(seed)
    rng.shuffle(patients)
    n = len(patients)
    counts = [int(math.floor(r * n)) for r in ratios]
    # hand out the rounding remainder by largest fractional part, ties to
    # earlier splits, so counts always sum to n
    rema = sorted(range(3), key=lambda i: (-(ratios[i] * n - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[rema[i % 3]] += 1
    buckets, start = [], 0
    for c in counts:
        buckets.append(set(patients[start : start + c]))
        start += c
    out = []
    for bucket in buckets:
        out.append(
            DatasetManifest(
                entries=tuple(e for e in manifest.entries if e.patient_id in bucket),
                root=manifest.root,
            )
        )
    return tuple(out)


def _read_gray(path: Path) -> np.ndarray:
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float32) / 65535.0
    return np.clip(arr.astype(np.float32), 0.0, 1.0)


def load_clip(entry: ManifestEntry, root) -> Tuple[np.ndarray, np.ndarray, Tuple[ClassLabel, ...]]:
    """Read one clip's frames and masks from disk (native resolution)."""
    root = Path(root)
    frames = np.stack([_read_gray(root / f) for f in entry.frames])
    masks = []
    for m, label in zip(entry.masks, entry.labels):
        if m is None:
            masks.append(np.zeros(frames.shape[1:], dtype=np.uint8))
        else:
            masks.append((_read_gray(root / m) > 0.5).astype(np.uint8))
    return frames, np.stack(masks), entry.labels


def resize_sample(frames, masks, labels, pixel_spacing_mm: float, target: int, letterbox: bool = False) -> Sample:
    """Normalize a clip to target x target; bilinear frames, nearest masks.

    The spacing is multiplied by original_size/target. Non-square inputs are
    zero-letterboxed to a square first when ``letterbox`` is set, otherwise
    rejected (anisotropic rescaling would corrupt measurements).
    """
    frames = np.asarray(frames, dtype=np.float32)
    masks = np.asarray(masks)
    if frames.ndim != 3 or masks.shape != frames.shape:
        raise DataError(f"expected aligned (T, H, W) frames/masks, got {frames.shape} vs {masks.shape}")
    T, h, w = frames.shape
    if h != w:
        if not letterbox:
            raise DataError(f"non-square {h}x{w} input requires letterboxing")
        frames = np.stack([letterbox_square(f) for f in frames])
        masks = np.stack([letterbox_square(m) for m in masks])
        h = w = max(h, w)
    out_frames = np.stack([bilinear_resize(f, target, target) for f in frames]).astype(np.float32)
    out_masks = np.stack([nearest_resize(m, target, target) for m in masks])
    out_masks = (out_masks > 0).astype(np.uint8)
    return Sample(
        frames=np.clip(out_frames, 0.0, 1.0)[:, None],
        masks=out_masks,
        labels=tuple(ClassLabel(l) for l in labels),
        pixel_spacing_mm=float(pixel_spacing_mm) * (h / target),
    )


def load_sample(entry: ManifestEntry, root, target: int, letterbox: bool = True) -> Sample:
    frames, masks, labels = load_clip(entry, root)
    return resize_sample(frames, masks, labels, entry.pixel_spacing_mm, target, letterbox=letterbox)


def load_dataset(manifest: DatasetManifest, target: int, letterbox: bool = True) -> List[Sample]:
    return [load_sample(e, manifest.root, target, letterbox=letterbox) for e in manifest.entries]


# ----------------------------------------------------------------- augmentation

def _rotate_image(img: np.ndarray, angle_deg: float, order: int) -> np.ndarray:
    """Rotate about the image center (half-pixel convention), constant 0 fill.

    order 1 = bilinear (frames), order 0 = nearest (masks).
    """
    h, w = img.shape
    theta = math.radians(angle_deg)
    ct, st = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source location
    xs = (xx - cx) * ct + (yy - cy) * st + cx
    ys = -(xx - cx) * st + (yy - cy) * ct + cy
    if order == 0:
        xi = np.rint(xs).astype(np.int64)
        yi = np.rint(ys).astype(np.int64)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out = np.zeros_like(img)
        out[valid] = img[yi[valid], xi[valid]]
        return out
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(img.shape, dtype=np.float64)
    src = img.astype(np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            contrib = np.zeros(img.shape, dtype=np.float64)
            contrib[valid] = src[yi[valid], xi[valid]]
            out += weight * np.where(valid, contrib, 0.0)
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


@dataclass(frozen=True)
class AugmentDraw:
    """One clip's transform parameters; identical for every frame."""

    angle_deg: float
    brightness: float
    contrast: float
    hflip: bool
    vflip: bool


def draw_augmentation(seed: int, max_angle: float = 15.0, brightness: float = 0.2,
                      contrast: Tuple[float, float] = (0.8, 1.2)) -> AugmentDraw:
    rng = np.random.default_rng(seed)
    return AugmentDraw(
        angle_deg=float(rng.uniform(-max_angle, max_angle)),
        brightness=float(rng.uniform(-brightness, brightness)),
        contrast=float(rng.uniform(*contrast)),
        hflip=bool(rng.random() < 0.5),
        vflip=bool(rng.random() < 0.5),
    )


def apply_augmentation(sample: Sample, draw: AugmentDraw) -> Sample:
    frames = sample.frames[:, 0].astype(np.float32)
    masks = sample.masks
    if draw.hflip:
        frames = frames[:, :, ::-1]
        masks = masks[:, :, ::-1]
    if draw.vflip:
        frames = frames[:, ::-1, :]
        masks = masks[:, ::-1, :]
    out_frames, out_masks = [], []
    for t in range(frames.shape[0]):
        f = _rotate_image(np.ascontiguousarray(frames[t]), draw.angle_deg, order=1)
        m = _rotate_image(np.ascontiguousarray(masks[t]), draw.angle_deg, order=0)
        f = np.clip(f * draw.contrast + draw.brightness, 0.0, 1.0)
        out_frames.append(f.astype(np.float32))
        out_masks.append((m > 0).astype(np.uint8))
    return replace(
        sample,
        frames=np.stack(out_frames)[:, None],
        masks=np.stack(out_masks),
    )


def augment_clip(sample: Sample, seed: int) -> Sample:
    """Clip-coherent random augmentation: one draw applied to all frames."""
    return apply_augmentation(sample, draw_augmentation(seed))
