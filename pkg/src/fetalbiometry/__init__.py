"""Spatio-temporal ultrasound video segmentation, frame classification and
automated biometric measurement, with a synthetic phantom test bench."""

from .config import AblationFlags, NetConfig, TrainConfig, config_from_dict, load_config
from .data import (
    DatasetManifest,
    ManifestEntry,
    Sample,
    augment_clip,
    load_dataset,
    load_manifest,
    make_splits,
    resize_sample,
    save_manifest,
)
from .errors import CheckpointError, ConfigError, ContractError, DataError, FitError
from .geometry import (
    BinaryMask,
    BiometryResult,
    EllipseFit,
    RotatedRect,
    ellipse_perimeter,
    find_contours,
    fit_ellipse,
    measure,
    measure_with_fit,
    min_area_rect,
    postprocess,
    rdp,
)
from .labels import CLASS_NAMES, DEFAULT_CLASS_WEIGHTS, FOREGROUND_CLASSES, ClassLabel, parse_label
from .losses import dice_loss, total_loss, weighted_ce
from .metrics import MetricReport, adf, adf_stats, classification_metrics, iou_dice, segmentation_metrics
from .model import FramePrediction, MultiTaskVideoNet
from .phantom import PhantomClip, PhantomSpec, generate, generate_suite, random_spec
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .train import evaluate_model, predict_sample, train_model

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "NetConfig", "TrainConfig", "config_from_dict", "load_config",
    "DatasetManifest", "ManifestEntry", "Sample", "augment_clip", "load_dataset",
    "load_manifest", "make_splits", "resize_sample", "save_manifest",
    "CheckpointError", "ConfigError", "ContractError", "DataError", "FitError",
    "BinaryMask", "BiometryResult", "EllipseFit", "RotatedRect", "ellipse_perimeter",
    "find_contours", "fit_ellipse", "measure", "measure_with_fit", "min_area_rect",
    "postprocess", "rdp",
    "CLASS_NAMES", "DEFAULT_CLASS_WEIGHTS", "FOREGROUND_CLASSES", "ClassLabel", "parse_label",
    "dice_loss", "total_loss", "weighted_ce",
    "MetricReport", "adf", "adf_stats", "classification_metrics", "iou_dice", "segmentation_metrics",
    "FramePrediction", "MultiTaskVideoNet",
    "PhantomClip", "PhantomSpec", "generate", "generate_suite", "random_spec",
    "load_checkpoint", "read_checkpoint", "save_checkpoint",
    "evaluate_model", "predict_sample", "train_model",
    "__version__",
]
