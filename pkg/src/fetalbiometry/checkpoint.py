"""Model checkpoints as flat named-array zip archives.

Layout: ``meta.json`` (format version + full training config) plus one
``arrays/<param>.npy`` member per state-dict entry. Members are stored
uncompressed with a fixed timestamp so identical states produce identical
bytes, and the archive stays readable by ``numpy.load``.
"""

import io
import json
import zipfile
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import torch

from .config import TrainConfig, config_from_dict, config_to_dict
from .errors import CheckpointError, ConfigError
from .model import MultiTaskVideoNet

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)  # zip's earliest representable time


def save_checkpoint(path, model: MultiTaskVideoNet, config: TrainConfig) -> Path:
    """Write model weights plus the config that built them."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(config),
        "arrays": {k: list(v.shape) for k, v in sorted(state.items())},
    }
    with zipfile.ZipFile(p, "w", compression=zipfile.ZIP_STORED) as zf:
        def member(name: str, payload: bytes):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)

        member("meta.json", json.dumps(meta, sort_keys=True, indent=2).encode())
        for name in sorted(state):
            buf = io.BytesIO()
            # asarray keeps 0-d entries 0-d (ascontiguousarray would not)
            np.lib.format.write_array(buf, np.asarray(state[name], order="C"),
                                      allow_pickle=False)
            member(f"arrays/{name}.npy", buf.getvalue())
    return p


def read_checkpoint(path) -> Tuple[TrainConfig, Dict[str, np.ndarray]]:
    """Load the embedded config and raw arrays without touching a model."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    if not zipfile.is_zipfile(p):
        raise CheckpointError(f"{p} is not a checkpoint archive")
    with zipfile.ZipFile(p) as zf:
        names = set(zf.namelist())
        if "meta.json" not in names:
            raise CheckpointError(f"{p}: missing meta.json")
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{p}: format version {meta.get('format_version')!r}, expected {FORMAT_VERSION}"
            )
        try:
            config = config_from_dict(meta["config"])
        except (KeyError, ConfigError) as exc:
            raise CheckpointError(f"{p}: bad embedded config: {exc}") from None
        arrays = {}
        for name in meta.get("arrays", {}):
            member = f"arrays/{name}.npy"
            if member not in names:
                raise CheckpointError(f"{p}: missing array {name!r}")
            arrays[name] = np.lib.format.read_array(
                io.BytesIO(zf.read(member)), allow_pickle=False
            )
        extra = {n for n in names if n.startswith("arrays/")} - {
            f"arrays/{n}.npy" for n in arrays
        }
        if extra:
            raise CheckpointError(f"{p}: unindexed arrays {sorted(extra)}")
    return config, arrays


def load_checkpoint(path) -> Tuple[MultiTaskVideoNet, TrainConfig]:
    """Rebuild the model from its embedded config and restore the weights.

    Every array shape is checked against the freshly built model; any
    disagreement is reported as a full diff before anything is loaded.
    """
    config, arrays = read_checkpoint(path)
    model = MultiTaskVideoNet(config.net, config.flags)
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    found = {k: tuple(v.shape) for k, v in arrays.items()}
    problems = []
    for name in sorted(expected.keys() - found.keys()):
        problems.append(f"missing {name} {expected[name]}")
    for name in sorted(found.keys() - expected.keys()):
        problems.append(f"unexpected {name} {found[name]}")
    for name in sorted(expected.keys() & found.keys()):
        if expected[name] != found[name]:
            problems.append(f"{name}: checkpoint {found[name]} vs model {expected[name]}")
    if problems:
        raise CheckpointError(
            f"{path}: state does not match the embedded config:\n  " + "\n  ".join(problems)
        )
    reference = model.state_dict()
    state = {k: torch.from_numpy(v.copy()).to(reference[k].dtype) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, config
