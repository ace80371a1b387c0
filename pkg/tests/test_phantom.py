import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from fetalbiometry.data import load_manifest, load_sample
from fetalbiometry.errors import ContractError
from fetalbiometry.geometry import ellipse_perimeter, measure, postprocess
from fetalbiometry.labels import ClassLabel
from fetalbiometry.phantom import (
    BACKGROUND_LEVEL,
    FOREGROUND_LEVEL,
    PhantomSpec,
    generate,
    generate_suite,
    random_spec,
    rasterize,
)


def head_spec(**over):
    kw = dict(label=ClassLabel.HEAD, size=128, semi_major=40, semi_minor=28,
              pixel_spacing_mm=0.2, clip_len=3, seed=0)
    kw.update(over)
    return PhantomSpec(**kw)


# -------------------------------------------------------------- validation


@pytest.mark.parametrize(
    "kw, match",
    [
        (dict(label=ClassLabel.HEAD, semi_major=0, semi_minor=0), "semi_major"),
        (dict(label=ClassLabel.HEAD, semi_major=10, semi_minor=20), "semi_major"),
        (dict(label=ClassLabel.FEMUR, length=10, width=20), "length"),
        (dict(label=ClassLabel.FEMUR, length=0, width=0), "length"),
        (dict(label=ClassLabel.BACKGROUND, semi_major=5, semi_minor=3), "no geometry"),
        (dict(label=ClassLabel.HEAD, semi_major=70, semi_minor=50), "leaves"),
        (dict(label=ClassLabel.HEAD, semi_major=30, semi_minor=20,
              center=(20.0, 64.0)), "leaves"),
        (dict(label=ClassLabel.HEAD, semi_major=40, semi_minor=28,
              drift=(12.0, 0.0)), "leaves"),
        (dict(label=ClassLabel.HEAD, semi_major=40, semi_minor=28,
              noise_sigma=-0.1), "noise_sigma"),
        (dict(label=ClassLabel.HEAD, semi_major=40, semi_minor=28, clip_len=0), "clip_len"),
        (dict(label=ClassLabel.HEAD, semi_major=40, semi_minor=28,
              pixel_spacing_mm=0.0), "pixel_spacing"),
        (dict(label=ClassLabel.HEAD, semi_major=4, semi_minor=3, size=8), "size"),
    ],
)
def test_spec_rejects(kw, match):
    kw.setdefault("size", 128)
    kw.setdefault("clip_len", 3)
    with pytest.raises(ContractError, match=match):
        PhantomSpec(**kw)


def test_drift_within_frame_accepted():
    spec = head_spec(drift=(2.0, -1.0))
    assert spec.center_at(2) == (63.5 + 4.0, 63.5 - 2.0)


# ----------------------------------------------------------- rasterization


def test_ellipse_mask_area():
    spec = head_spec()
    mask = rasterize(spec, 0)
    expected = math.pi * 40 * 28
    assert mask.sum() == pytest.approx(expected, rel=0.02)


def test_capsule_mask_area():
    spec = PhantomSpec(label=ClassLabel.FEMUR, size=128, length=70, width=12,
                       theta=0.3, clip_len=1)
    mask = rasterize(spec, 0)
    # rectangle plus two half-disk caps that join into one full disk
    expected = (70 - 12) * 12 + math.pi * 6.0**2
    assert mask.sum() == pytest.approx(expected, rel=0.03)


def test_background_mask_empty():
    spec = PhantomSpec(label=ClassLabel.BACKGROUND, size=64, clip_len=2)
    assert rasterize(spec, 0).sum() == 0


def test_drift_moves_centroid():
    spec = head_spec(drift=(1.5, -0.5))
    for t in (0, 1, 2):
        m = rasterize(spec, t)
        ys, xs = np.nonzero(m)
        cx, cy = spec.center_at(t)
        assert xs.mean() == pytest.approx(cx, abs=0.15)
        assert ys.mean() == pytest.approx(cy, abs=0.15)


def test_rotation_preserves_area():
    base = head_spec(theta=0.0)
    rot = head_spec(theta=1.1)
    assert rasterize(rot, 0).sum() == pytest.approx(rasterize(base, 0).sum(), rel=0.01)


# ---------------------------------------------------------------- renders


def test_clean_render_is_two_valued():
    clip = generate(head_spec(noise_sigma=0.0))
    assert set(np.unique(clip.frames)) == {np.float32(BACKGROUND_LEVEL),
                                           np.float32(FOREGROUND_LEVEL)}


def test_background_clip_is_uniform_when_clean():
    spec = PhantomSpec(label=ClassLabel.BACKGROUND, size=64, clip_len=2)
    clip = generate(spec)
    assert np.all(clip.frames == np.float32(BACKGROUND_LEVEL))
    assert clip.masks.sum() == 0


def test_noise_multiplicative_and_clamped():
    clip = generate(head_spec(noise_sigma=0.5, seed=3))
    assert float(clip.frames.min()) >= 0.0
    assert float(clip.frames.max()) <= 1.0
    assert len(np.unique(clip.frames)) > 2


def test_masks_are_pre_noise():
    clean = generate(head_spec(noise_sigma=0.0))
    noisy = generate(head_spec(noise_sigma=0.4))
    assert np.array_equal(clean.masks, noisy.masks)


def test_generate_bit_deterministic():
    a = generate(head_spec(noise_sigma=0.2, seed=11))
    b = generate(head_spec(noise_sigma=0.2, seed=11))
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.masks, b.masks)


def test_generate_seed_changes_noise():
    a = generate(head_spec(noise_sigma=0.2, seed=0))
    b = generate(head_spec(noise_sigma=0.2, seed=1))
    assert not np.array_equal(a.frames, b.frames)


def test_noise_magnitude_monotone_in_sigma():
    # mean absolute deviation from the clean render must grow with sigma,
    # averaged over 20 seeds
    clean = generate(head_spec(noise_sigma=0.0)).frames
    devs = []
    for sigma in (0.05, 0.15, 0.3):
        d = []
        for seed in range(20):
            noisy = generate(head_spec(noise_sigma=sigma, seed=seed)).frames
            d.append(float(np.abs(noisy - clean).mean()))
        devs.append(np.mean(d))
    assert devs[0] < devs[1] < devs[2]


def test_to_sample_layout():
    clip = generate(head_spec())
    s = clip.to_sample()
    assert s.frames.shape == (3, 1, 128, 128)
    assert s.frames.dtype == np.float32
    assert s.masks.shape == (3, 128, 128)
    assert s.labels == (ClassLabel.HEAD,) * 3
    assert s.pixel_spacing_mm == 0.2


# ----------------------------------------------------------- ground truth


def test_head_truth_values():
    spec = head_spec()
    t = spec.analytic_truth()
    assert t.hc_mm == pytest.approx(ellipse_perimeter(40, 28) * 0.2)
    assert t.bpd_mm == pytest.approx(2 * 28 * 0.2)
    assert t.ac_mm is None and t.fl_mm is None


def test_circular_head_truth_closed_form():
    spec = PhantomSpec(label=ClassLabel.HEAD, size=160, semi_major=50,
                       semi_minor=50, pixel_spacing_mm=0.1, clip_len=1)
    t = spec.analytic_truth()
    assert t.hc_mm == pytest.approx(2 * math.pi * 50 * 0.1, rel=1e-12)
    assert t.bpd_mm == pytest.approx(10.0)


def test_abdomen_truth_values():
    spec = PhantomSpec(label=ClassLabel.ABDOMEN, size=128, semi_major=45,
                       semi_minor=30, pixel_spacing_mm=0.25, clip_len=1)
    t = spec.analytic_truth()
    assert t.ac_mm == pytest.approx(ellipse_perimeter(45, 30) * 0.25)
    assert t.hc_mm is None and t.bpd_mm is None and t.fl_mm is None


def test_femur_truth_values():
    spec = PhantomSpec(label=ClassLabel.FEMUR, size=128, length=80, width=10,
                       pixel_spacing_mm=0.3, clip_len=1)
    t = spec.analytic_truth()
    assert t.fl_mm == pytest.approx(24.0)
    assert t.hc_mm is None


def test_truth_constant_under_drift():
    clip = generate(head_spec(drift=(1.0, 1.0)))
    assert len(clip.truth) == 3
    assert all(r == clip.truth[0] for r in clip.truth)


def test_clean_phantom_measurement_closure():
    # sigma=0 mask through postprocess + measure recovers analytic truth
    cases = [
        head_spec(size=200, semi_major=62, semi_minor=41, theta=0.7, clip_len=1),
        PhantomSpec(label=ClassLabel.ABDOMEN, size=220, semi_major=75,
                    semi_minor=60, theta=2.1, pixel_spacing_mm=0.3, clip_len=1),
        PhantomSpec(label=ClassLabel.FEMUR, size=180, length=90, width=14,
                    theta=0.9, pixel_spacing_mm=0.25, clip_len=1),
    ]
    for spec in cases:
        clip = generate(spec)
        truth = clip.truth[0]
        bm = postprocess(clip.masks[0].astype(np.float64), spec.size,
                         pixel_spacing=spec.pixel_spacing_mm)
        r = measure(spec.label, bm)
        if truth.hc_mm is not None:
            assert r.hc_mm == pytest.approx(truth.hc_mm, rel=0.01)
            assert r.bpd_mm == pytest.approx(truth.bpd_mm, rel=0.02)
        if truth.ac_mm is not None:
            assert r.ac_mm == pytest.approx(truth.ac_mm, rel=0.01)
        if truth.fl_mm is not None:
            tol = max(0.02 * truth.fl_mm, spec.pixel_spacing_mm)
            assert abs(r.fl_mm - truth.fl_mm) <= tol


# ----------------------------------------------------------------- suites


def test_random_spec_ranges():
    rng = np.random.default_rng(0)
    for label in ClassLabel:
        for _ in range(5):
            spec = random_spec(rng, label, size=96, clip_len=2)
            clip = generate(spec)
            assert clip.frames.shape == (2, 96, 96)
            if label == ClassLabel.BACKGROUND:
                assert clip.masks.sum() == 0
            else:
                assert clip.masks[0].sum() > 0


def test_suite_layout_and_loading(tmp_path):
    man, truths = generate_suite(tmp_path, n_clips=8, seed=3, size=64,
                                 clip_len=2, class_mix=(2, 2, 2, 2))
    assert len(man.entries) == 8
    labels = sorted(e.labels[0] for e in man.entries)
    assert labels.count(ClassLabel.HEAD) == 2
    assert labels.count(ClassLabel.ABDOMEN) == 2
    assert labels.count(ClassLabel.FEMUR) == 2
    assert labels.count(ClassLabel.BACKGROUND) == 2
    assert set(truths) == {e.clip_id for e in man.entries}
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.entries == man.entries
    gt = json.loads((tmp_path / "ground_truth.json").read_text())
    assert set(gt) == set(truths)
    for e in man.entries:
        s = load_sample(e, man.root, target=64)
        assert s.frames.shape == (2, 1, 64, 64)
        if e.labels[0] == ClassLabel.BACKGROUND:
            assert all(m is None for m in e.masks)
            assert s.masks.sum() == 0
        else:
            assert all(m is not None for m in e.masks)
            assert s.masks.sum() > 0


def test_suite_clip_per_patient(tmp_path):
    man, _ = generate_suite(tmp_path, n_clips=5, seed=0, size=48, clip_len=1)
    assert len(set(e.patient_id for e in man.entries)) == 5


def test_suite_byte_deterministic(tmp_path):
    def digest(d):
        files = sorted(Path(d).rglob("*"), key=lambda p: str(p.relative_to(d)))
        h = hashlib.sha256()
        for p in files:
            if p.is_file():
                h.update(str(p.relative_to(d)).encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    a, b = tmp_path / "a", tmp_path / "b"
    generate_suite(a, n_clips=6, seed=7, size=48, clip_len=2, noise_sigma=0.15)
    generate_suite(b, n_clips=6, seed=7, size=48, clip_len=2, noise_sigma=0.15)
    assert digest(a) == digest(b)


def test_suite_seed_changes_content(tmp_path):
    man_a, _ = generate_suite(tmp_path / "a", n_clips=4, seed=0, size=48, clip_len=1)
    man_b, _ = generate_suite(tmp_path / "b", n_clips=4, seed=1, size=48, clip_len=1)
    img_a = (tmp_path / "a" / man_a.entries[0].frames[0]).read_bytes()
    img_b = (tmp_path / "b" / man_b.entries[0].frames[0]).read_bytes()
    assert img_a != img_b


def test_suite_disk_round_trip_measurement(tmp_path):
    # clean suite written as 8-bit files still measures within tolerance
    man, truths = generate_suite(tmp_path, n_clips=4, seed=5, size=128,
                                 clip_len=1, noise_sigma=0.0,
                                 class_mix=(1, 1, 1, 1), max_drift=0.0)
    for e in man.entries:
        label = e.labels[0]
        if label == ClassLabel.BACKGROUND:
            continue
        s = load_sample(e, man.root, target=128)
        bm = postprocess(s.masks[0].astype(np.float64), 128,
                         pixel_spacing=s.pixel_spacing_mm)
        r = measure(label, bm)
        truth = truths[e.clip_id][0]
        if truth["hc_mm"] is not None:
            assert r.hc_mm == pytest.approx(truth["hc_mm"], rel=0.01)
        if truth["ac_mm"] is not None:
            assert r.ac_mm == pytest.approx(truth["ac_mm"], rel=0.01)
        if truth["fl_mm"] is not None:
            tol = max(0.02 * truth["fl_mm"], s.pixel_spacing_mm)
            assert abs(r.fl_mm - truth["fl_mm"]) <= tol


def test_suite_rejects_bad_args(tmp_path):
    with pytest.raises(ContractError, match="n_clips"):
        generate_suite(tmp_path, n_clips=0)
    with pytest.raises(ContractError, match="class mix"):
        generate_suite(tmp_path, n_clips=4, class_mix=(1, 1, 1))
    with pytest.raises(ContractError, match="class mix"):
        generate_suite(tmp_path, n_clips=4, class_mix=(0, 0, 0, 0))
