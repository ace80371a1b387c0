"""Network and training configuration, loadable from flat TOML or JSON files."""

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from .errors import ConfigError
from .labels import DEFAULT_CLASS_WEIGHTS

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    The width schedule along the graph is n, 2n, 4n, 8n, 16n, 8n, 4n, 2n, n;
    four 2x poolings require input_size divisible by 16. The bottleneck grid
    is (input_size/16)^2.
    """

    base_width: int = 64
    input_size: int = 224
    clip_len: int = 5
    num_classes: int = 4
    dropout_block: float = 0.2
    dropout_cls: float = 0.4
    convlstm_kernel: int = 3

    def __post_init__(self):
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")
        if self.input_size < 16 or self.input_size % 16 != 0:
            raise ConfigError(f"input_size must be divisible by 16, got {self.input_size}")
        if self.clip_len < 1:
            raise ConfigError(f"clip_len must be >= 1, got {self.clip_len}")
        if self.num_classes != 4:
            raise ConfigError(f"num_classes is fixed at 4, got {self.num_classes}")
        for name in ("dropout_block", "dropout_cls"):
            p = getattr(self, name)
            if not (0.0 <= p < 1.0):
                raise ConfigError(f"{name} must be in [0, 1), got {p}")
        if self.convlstm_kernel < 1 or self.convlstm_kernel % 2 == 0:
            raise ConfigError(f"convlstm_kernel must be odd and positive, got {self.convlstm_kernel}")

    @property
    def grid_size(self) -> int:
        return self.input_size // 16


@dataclass(frozen=True)
class AblationFlags:
    """Component switches mirroring the model-variant study.

    classification_branch: frame-label head and its loss term
    attention_gates: gated skips (off: plain concatenation)
    stacked_module: multi-scale side-output aggregation (off: single head
    on the last decoder)
    """

    classification_branch: bool = True
    attention_gates: bool = True
    stacked_module: bool = True


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 16
    epochs: int = 80
    class_weights: Tuple[float, float, float, float] = DEFAULT_CLASS_WEIGHTS
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    augment: bool = False
    # data wiring; optional so library users can pass datasets directly
    manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    out_dir: str = "runs"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        w = tuple(float(x) for x in self.class_weights)
        if len(w) != 4 or any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ConfigError(f"class_weights must be 4 nonnegative values, at least one positive: {w}")
        object.__setattr__(self, "class_weights", w)


_NET_KEYS = {f.name for f in dataclasses.fields(NetConfig)}
_FLAG_KEYS = {f.name for f in dataclasses.fields(AblationFlags)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"net", "flags"}


def config_from_dict(raw: dict) -> TrainConfig:
    """Build a TrainConfig from a flat mapping (nested 'net'/'flags' tables
    are also accepted). Unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table/object, got {type(raw).__name__}")
    raw = dict(raw)
    net_kwargs = dict(raw.pop("net", {}))
    flag_kwargs = dict(raw.pop("flags", {}))
    train_kwargs = {}
    for key, value in raw.items():
        if key in _NET_KEYS:
            net_kwargs[key] = value
        elif key in _FLAG_KEYS:
            flag_kwargs[key] = value
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    for key in net_kwargs:
        if key not in _NET_KEYS:
            raise ConfigError(f"unknown net config key: {key!r}")
    for key in flag_kwargs:
        if key not in _FLAG_KEYS:
            raise ConfigError(f"unknown ablation flag: {key!r}")
    try:
        net = NetConfig(**net_kwargs)
        flags = AblationFlags(**{k: bool(v) for k, v in flag_kwargs.items()})
        return TrainConfig(net=net, flags=flags, **train_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    """Read a TOML (.toml) or JSON (.json) training config file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_bytes()
    if p.suffix.lower() == ".toml":
        try:
            raw = tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {p}: {exc}") from None
    elif p.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {p}: {exc}") from None
    else:
        raise ConfigError(f"config must be a .toml or .json file, got {p.suffix!r}")
    return config_from_dict(raw)


def config_to_dict(cfg: TrainConfig) -> dict:
    """Flat JSON-friendly dict that round-trips through config_from_dict."""
    d = {k: getattr(cfg, k) for k in sorted(_TRAIN_KEYS)}
    d["class_weights"] = list(cfg.class_weights)
    d["net"] = dataclasses.asdict(cfg.net)
    d["flags"] = dataclasses.asdict(cfg.flags)
    return d
