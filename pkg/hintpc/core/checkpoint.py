"""Parameter checkpoint file.

Layout (all integers little-endian)::

    magic     4s   b"HNTC"
    version   u16
    config    u64  config hash
    step      u64  optimizer step counter
    cfg_len   u32  length of the UTF-8 JSON config that follows
    cfg_json  bytes
    count     u32  number of tensors
    count x:  u16 name_len, name, u8 ndim, ndim x u32 dims, float32 data
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .config import CodecConfig
from .errors import CheckpointError, HintError, ShapeError
from .model import HintModel
from .nn import ParamStore

log = logging.getLogger(__name__)

MAGIC = b"HNTC"
VERSION = 1

_HEAD = struct.Struct("<4sHQQI")


@dataclass
class Checkpoint:
    config: dict
    config_hash: int
    step: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def dumps_checkpoint(store: ParamStore, config: dict, config_hash: int) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray(_HEAD.pack(MAGIC, VERSION, config_hash, store.step, len(cfg)))
    out += cfg
    out += struct.pack("<I", len(store))
    for name in sorted(store):
        a = np.ascontiguousarray(store[name].data, dtype="<f4")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    return bytes(out)


def loads_checkpoint(data: bytes) -> Checkpoint:
    try:
        magic, version, config_hash, step, cfg_len = _HEAD.unpack_from(data, 0)
    except struct.error as e:
        raise CheckpointError(f"checkpoint header truncated: {e}") from e
    if magic != MAGIC:
        raise CheckpointError(f"not a hintpc checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = _HEAD.size
    try:
        config = json.loads(data[pos : pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(data):
                raise CheckpointError(f"tensor {name!r} truncated")
            arrays[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += nbytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after checkpoint tensors")
    return Checkpoint(config=config, config_hash=config_hash, step=step, arrays=arrays)


def save_checkpoint(path: str | Path, store: ParamStore, config: dict, config_hash: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_checkpoint(store, config, config_hash))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise HintError(f"checkpoint not found: {path}")
    return loads_checkpoint(path.read_bytes())


def save_model(path: str | Path, model: HintModel) -> Path:
    return save_checkpoint(path, model.store, model.config.model_dump(), model.config.config_hash())


def load_model(path: str | Path) -> HintModel:
    """Rebuild a model from a checkpoint; the stored config decides the architecture."""
    ckpt = load_checkpoint(path)
    try:
        config = CodecConfig.model_validate(ckpt.config)
    except ValidationError as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}") from e
    if config.config_hash() != ckpt.config_hash:
        raise CheckpointError("checkpoint config hash does not match its config")
    model = HintModel(config)
    try:
        model.store.load_state_dict(ckpt.arrays)
    except ShapeError as e:
        raise CheckpointError(f"checkpoint tensors do not fit the model: {e}") from e
    model.store.step = ckpt.step
    log.info("loaded %s (%d parameters, step %d)", path, model.num_parameters, ckpt.step)
    return model
