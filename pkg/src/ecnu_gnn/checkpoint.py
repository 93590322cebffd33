"""Self-contained checkpoint files.

A checkpoint is a zip archive with fixed member timestamps (so equal content
gives equal bytes) holding ``meta.json`` and one ``.npy`` member per tensor.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import CheckpointError
from .model import ECNUGNN, ModelConfig
from .score import RobustStats

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    model: ECNUGNN
    seed: int
    sensor_names: list[str]
    norm_stats: NormStats | None = None
    robust_stats: RobustStats | None = None
    preprocess: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _write_member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    state = ckpt.model.state_dict()
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.model.config.to_dict(),
        "n_nodes": ckpt.model.n_nodes,
        "seed": int(ckpt.seed),
        "sensor_names": list(ckpt.sensor_names),
        "norm_stats": None if ckpt.norm_stats is None else ckpt.norm_stats.to_dict(),
        "robust_stats": None if ckpt.robust_stats is None else ckpt.robust_stats.to_dict(),
        "preprocess": ckpt.preprocess,
        "train": ckpt.train,
        "tensors": {name: list(arr.shape) for name, arr in state.items()},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_member(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for name in sorted(state):
            _write_member(zf, f"tensors/{name}.npy", _npy_bytes(state[name]))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint, failing loudly on any structural inconsistency."""
    try:
        raw = Path(path).read_bytes()
        with zipfile.ZipFile(io.BytesIO(raw)) as zf:
            meta = json.loads(zf.read("meta.json"))
            version = meta.get("format_version")
            if version != FORMAT_VERSION:
                raise CheckpointError(f"format_version: expected {FORMAT_VERSION}, got {version!r}")
            config = ModelConfig(**meta["model_config"])
            model = ECNUGNN(config, meta["n_nodes"], seed=0)
            expected = {k: tuple(p.shape) for k, p in model.parameters().items()}
            declared = {k: tuple(v) for k, v in meta["tensors"].items()}
            if set(declared) != set(expected):
                raise CheckpointError(
                    f"tensors: expected {sorted(expected)}, got {sorted(declared)}"
                )
            state = {}
            for name, shape in expected.items():
                if declared[name] != shape:
                    raise CheckpointError(f"{name}: expected shape {shape}, got {declared[name]}")
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
                if arr.shape != shape:
                    raise CheckpointError(f"{name}: stored array has shape {arr.shape}, expected {shape}")
                state[name] = arr
    except CheckpointError:
        raise
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, TypeError, EOFError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    model.load_state_dict(state)
    names = meta["sensor_names"]
    if len(names) != model.n_nodes:
        raise CheckpointError(f"sensor_names: expected {model.n_nodes} names, got {len(names)}")
    return Checkpoint(
        model=model,
        seed=meta["seed"],
        sensor_names=names,
        norm_stats=None if meta["norm_stats"] is None else NormStats.from_dict(meta["norm_stats"]),
        robust_stats=None if meta["robust_stats"] is None else RobustStats.from_dict(meta["robust_stats"]),
        preprocess=meta.get("preprocess", {}),
        train=meta.get("train", {}),
    )
