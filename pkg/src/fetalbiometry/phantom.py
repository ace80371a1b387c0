"""Synthetic ultrasound phantoms with exact analytic ground truth.

Each clip renders one bright structure (ellipse for head/abdomen planes,
capsule for femur) drifting over a dark background, with optional
multiplicative speckle. Masks are the clean pre-noise rasterizations and
the true measurements follow from the generating parameters, so the whole
segmentation-to-biometry path can be checked end to end without any
annotated data.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import data as datamod
from .errors import ContractError
from .geometry import BiometryResult, ellipse_perimeter
from .labels import ClassLabel

FOREGROUND_LEVEL = 0.85
BACKGROUND_LEVEL = 0.15


@dataclass(frozen=True)
class PhantomSpec:
    """Generating parameters for one clip.

    Ellipse classes use semi-axes (a >= b, pixels); the femur capsule uses
    full length/width (pixels, length measured tip to tip). ``drift`` is the
    per-frame center displacement in pixels; the structure must stay at
    least one pixel inside the frame for every frame of the clip.
    """

    label: ClassLabel
    size: int = 224
    pixel_spacing_mm: float = 0.2
    clip_len: int = 5
    semi_major: float = 0.0
    semi_minor: float = 0.0
    length: float = 0.0
    width: float = 0.0
    center: Optional[Tuple[float, float]] = None
    theta: float = 0.0
    drift: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.size < 16:
            raise ContractError(f"frame size must be >= 16, got {self.size}")
        if self.clip_len < 1:
            raise ContractError(f"clip_len must be >= 1, got {self.clip_len}")
        if self.pixel_spacing_mm <= 0:
            raise ContractError(f"pixel_spacing_mm must be > 0, got {self.pixel_spacing_mm}")
        if self.noise_sigma < 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.label in (ClassLabel.HEAD, ClassLabel.ABDOMEN):
            if not (self.semi_major >= self.semi_minor > 0):
                raise ContractError(
                    f"{self.label.name}: need semi_major >= semi_minor > 0, "
                    f"got {self.semi_major}, {self.semi_minor}"
                )
        elif self.label == ClassLabel.FEMUR:
            if not (self.length >= self.width > 0):
                raise ContractError(
                    f"FEMUR: need length >= width > 0, got {self.length}, {self.width}"
                )
        else:
            if any((self.semi_major, self.semi_minor, self.length, self.width)):
                raise ContractError("BACKGROUND clips carry no geometry")
        if self.label != ClassLabel.BACKGROUND:
            r = self._bounding_radius()
            for t in range(self.clip_len):
                cx, cy = self.center_at(t)
                lo, hi = r + 1.0, self.size - 2.0 - r
                if not (lo <= cx <= hi and lo <= cy <= hi):
                    raise ContractError(
                        f"structure leaves the {self.size}px frame at t={t}: "
                        f"center ({cx:.1f}, {cy:.1f}), bounding radius {r:.1f}"
                    )

    def _bounding_radius(self) -> float:
        if self.label == ClassLabel.FEMUR:
            return self.length / 2.0
        return self.semi_major

    def center_at(self, t: int) -> Tuple[float, float]:
        cx, cy = self.center if self.center is not None else ((self.size - 1) / 2.0,) * 2
        return cx + t * self.drift[0], cy + t * self.drift[1]

    def analytic_truth(self) -> BiometryResult:
        s = self.pixel_spacing_mm
        if self.label == ClassLabel.HEAD:
            return BiometryResult(
                label=self.label,
                hc_mm=ellipse_perimeter(self.semi_major, self.semi_minor) * s,
                bpd_mm=2.0 * self.semi_minor * s,
            )
        if self.label == ClassLabel.ABDOMEN:
            return BiometryResult(
                label=self.label,
                ac_mm=ellipse_perimeter(self.semi_major, self.semi_minor) * s,
            )
        if self.label == ClassLabel.FEMUR:
            return BiometryResult(label=self.label, fl_mm=self.length * s)
        return BiometryResult(label=self.label)


def _pixel_grid(size: int):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return xx, yy


def rasterize(spec: PhantomSpec, t: int) -> np.ndarray:
    """Binary mask of the structure at frame t (pixel-center coverage)."""
    mask = np.zeros((spec.size, spec.size), dtype=np.uint8)
    if spec.label == ClassLabel.BACKGROUND:
        return mask
    cx, cy = spec.center_at(t)
    xx, yy = _pixel_grid(spec.size)
    ct, st = math.cos(spec.theta), math.sin(spec.theta)
    xr = (xx - cx) * ct + (yy - cy) * st
    yr = -(xx - cx) * st + (yy - cy) * ct
    if spec.label == ClassLabel.FEMUR:
        half = spec.length / 2.0 - spec.width / 2.0
        d = np.hypot(np.maximum(np.abs(xr) - half, 0.0), yr)
        inside = d <= spec.width / 2.0
    else:
        inside = (xr / spec.semi_major) ** 2 + (yr / spec.semi_minor) ** 2 <= 1.0
    mask[inside] = 1
    return mask


@dataclass
class PhantomClip:
    spec: PhantomSpec
    frames: np.ndarray  # (T, S, S) float32 in [0, 1]
    masks: np.ndarray  # (T, S, S) uint8 in {0, 1}
    truth: List[BiometryResult] = field(default_factory=list)

    def to_sample(self) -> datamod.Sample:
        return datamod.Sample(
            frames=self.frames[:, None].astype(np.float32),
            masks=self.masks,
            labels=(self.spec.label,) * self.spec.clip_len,
            pixel_spacing_mm=self.spec.pixel_spacing_mm,
        )


def generate(spec: PhantomSpec) -> PhantomClip:
    """Render a clip; bit-identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    frames, masks = [], []
    truth = spec.analytic_truth()
    for t in range(spec.clip_len):
        mask = rasterize(spec, t)
        img = np.where(mask > 0, FOREGROUND_LEVEL, BACKGROUND_LEVEL)
        if spec.noise_sigma > 0:
            img = img * (1.0 + spec.noise_sigma * rng.standard_normal(img.shape))
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        masks.append(mask)
    return PhantomClip(
        spec=spec,
        frames=np.stack(frames),
        masks=np.stack(masks),
        truth=[truth] * spec.clip_len,
    )


# ------------------------------------------------------------------- suites

DEFAULT_CLASS_MIX = (0.25, 0.25, 0.25, 0.25)


def _class_counts(n_clips: int, mix: Sequence[float]) -> List[int]:
    if len(mix) != 4 or any(m < 0 for m in mix) or sum(mix) <= 0:
        raise ContractError(f"class mix must be 4 nonnegative weights, got {mix}")
    total = float(sum(mix))
    exact = [m / total * n_clips for m in mix]
    counts = [int(math.floor(e)) for e in exact]
    order = sorted(range(4), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(n_clips - sum(counts)):
        counts[order[i % 4]] += 1
    return counts


def random_spec(rng: np.random.Generator, label: ClassLabel, size: int = 224,
                clip_len: int = 5, pixel_spacing_mm: float = 0.2,
                noise_sigma: float = 0.1, max_drift: float = 1.0,
                seed: Optional[int] = None) -> PhantomSpec:
    """Draw one clip's generating parameters from training-friendly ranges."""
    seed = int(rng.integers(0, 2**31 - 1)) if seed is None else seed
    if label == ClassLabel.BACKGROUND:
        return PhantomSpec(
            label=label, size=size, clip_len=clip_len,
            pixel_spacing_mm=pixel_spacing_mm, noise_sigma=noise_sigma, seed=seed,
        )
    kwargs = {}
    if label == ClassLabel.FEMUR:
        length = rng.uniform(0.35, 0.6) * size
        width = length / rng.uniform(4.0, 7.0)
        kwargs = {"length": length, "width": max(width, 3.0)}
        r = length / 2.0
    else:
        b = rng.uniform(0.10, 0.20) * size
        a = b * rng.uniform(1.0, 1.8)
        kwargs = {"semi_major": a, "semi_minor": b}
        r = a
    drift = tuple(rng.uniform(-max_drift, max_drift, size=2))
    # keep the whole drift path inside the frame with a pixel to spare
    reach = r + max_drift * (clip_len - 1) + 2.0
    lo, hi = reach, size - 1.0 - reach
    if lo >= hi:
        raise ContractError(f"size {size} too small for radius {r:.1f} plus drift")
    center = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
    return PhantomSpec(
        label=label, size=size, clip_len=clip_len,
        pixel_spacing_mm=pixel_spacing_mm,
        center=center, theta=float(rng.uniform(0.0, math.pi)),
        drift=drift, noise_sigma=noise_sigma, seed=seed, **kwargs,
    )


def generate_suite(out_dir, n_clips: int, seed: int = 0, size: int = 224,
                   clip_len: int = 5, pixel_spacing_mm: float = 0.2,
                   noise_sigma: float = 0.1, class_mix: Sequence[float] = DEFAULT_CLASS_MIX,
                   max_drift: float = 1.0):
    """Write a phantom dataset to disk: frames, masks, manifest, truths.

    ``class_mix`` weights follow label order (head, abdomen, femur,
    background). Returns (manifest, truths) where truths maps clip_id to
    the per-frame ground-truth dicts also written to ground_truth.json.
    """
    if n_clips < 1:
        raise ContractError(f"n_clips must be >= 1, got {n_clips}")
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    counts = _class_counts(n_clips, class_mix)
    labels = [l for l, c in zip(ClassLabel, counts) for _ in range(c)]
    labels = [labels[i] for i in rng.permutation(n_clips)]
    entries, truths = [], {}
    for idx, label in enumerate(labels):
        spec = random_spec(rng, label, size=size, clip_len=clip_len,
                           pixel_spacing_mm=pixel_spacing_mm,
                           noise_sigma=noise_sigma, max_drift=max_drift)
        clip = generate(spec)
        clip_id = f"clip{idx:03d}"
        frame_paths, mask_paths = [], []
        for t in range(clip_len):
            fp = f"frames/{clip_id}_f{t:02d}.png"
            img = np.round(clip.frames[t] * 255.0).astype(np.uint8)
            Image.fromarray(img, mode="L").save(out / fp)
            frame_paths.append(fp)
            if label == ClassLabel.BACKGROUND:
                mask_paths.append(None)
            else:
                mp = f"masks/{clip_id}_f{t:02d}.png"
                Image.fromarray(clip.masks[t] * 255, mode="L").save(out / mp)
                mask_paths.append(mp)
        entries.append(datamod.ManifestEntry(
            patient_id=f"ph{idx:03d}",
            clip_id=clip_id,
            frames=tuple(frame_paths),
            labels=(label,) * clip_len,
            masks=tuple(mask_paths),
            pixel_spacing_mm=pixel_spacing_mm,
        ))
        truths[clip_id] = [r.to_json_dict(frame_id=t) for t, r in enumerate(clip.truth)]
    manifest = datamod.DatasetManifest(entries=tuple(entries), root=out)
    datamod.save_manifest(manifest, out / "manifest.json")
    (out / "ground_truth.json").write_text(json.dumps(truths, indent=2, sort_keys=True) + "\n")
    return manifest, truths
