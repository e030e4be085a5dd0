"""Checkpoint files: config header plus named float32 arrays."""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from .network import ModelConfig, SeqModel

_PSM_MAGIC = b"PSM1"
_MODES = {"token": 0, "regression": 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}
_CONFIG_FIELDS = (
    "n_blocks",
    "channels",
    "heads",
    "mlp_expansion",
    "out_mlp_expansion",
    "in_mlp_expansion",
    "n_bands",
    "n_classes",
    "feat_dim",
)


def save_model(path, model: SeqModel) -> None:
    cfg = model.config
    with open(path, "wb") as f:
        f.write(_PSM_MAGIC)
        f.write(struct.pack("<9I", *(getattr(cfg, name) for name in _CONFIG_FIELDS)))
        f.write(struct.pack("<BI", _MODES[cfg.mode], len(model.params)))
        for name in sorted(model.params):
            arr = model.params[name]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def load_model(path) -> SeqModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _PSM_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_PSM_MAGIC!r}")
        values = struct.unpack("<9I", f.read(36))
        mode_id, n_arrays = struct.unpack("<BI", f.read(5))
        if mode_id not in _MODE_NAMES:
            raise FormatError(f"{path}: unknown mode id {mode_id}")
        config = ModelConfig(
            **dict(zip(_CONFIG_FIELDS, values)), mode=_MODE_NAMES[mode_id]
        )
        model = SeqModel(config)
        loaded = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4")
            if data.size != count:
                raise FormatError(f"{path}: truncated array {name!r}")
            loaded[name] = data.astype(np.float64).reshape(shape)
    if set(loaded) != set(model.params):
        missing = set(model.params) ^ set(loaded)
        raise FormatError(f"{path}: parameter set mismatch ({sorted(missing)[:3]}...)")
    model.params = loaded
    return model
