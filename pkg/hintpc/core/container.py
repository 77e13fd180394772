"""Per-frame bitstream container (see docs/FORMAT.md)."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, CorruptStreamError, HintError, UnsupportedVersionError
from .pyramid import SparseLevel

MAGIC = b"HINT"
VERSION = 1

# magic, version, config hash, params fingerprint, vd, vfine, flags, channels, depth, frame index
_HEADER = struct.Struct("<4sBQQBBBHBI")
_U32 = struct.Struct("<I")

ROOT_LEVEL = 0


@dataclass(frozen=True)
class StreamHeader:
    config_hash: int
    params_fingerprint: int
    vd: int
    vfine: int
    flags: int
    channels: int
    depth: int
    frame_index: int
    version: int = VERSION

    @property
    def coarse(self) -> bool:
        return bool(self.flags & 1)

    @property
    def fine(self) -> bool:
        return bool(self.flags & 2)

    @property
    def sibling(self) -> bool:
        return bool(self.flags & 4)

    @property
    def share_embedding(self) -> bool:
        return bool(self.flags & 8)


@dataclass(frozen=True, eq=False)
class Container:
    header: StreamHeader
    root: SparseLevel
    counts: tuple[int, ...]
    payload: bytes

    @property
    def header_bytes(self) -> int:
        return _HEADER.size + 4 + len(self.root) * (_key_width(ROOT_LEVEL) + 1) + 4 * (len(self.counts) + 1)


def _key_width(level: int) -> int:
    return (3 * level + 7) // 8


def write_container(header: StreamHeader, root: SparseLevel, counts: list[int] | tuple[int, ...], payload: bytes) -> bytes:
    if len(counts) != header.depth + 1:
        raise CorruptStreamError(f"expected {header.depth + 1} level counts, got {len(counts)}")
    if root.level != ROOT_LEVEL:
        raise CorruptStreamError(f"root block must hold level {ROOT_LEVEL}, got level {root.level}")
    out = bytearray(
        _HEADER.pack(
            MAGIC,
            header.version,
            header.config_hash,
            header.params_fingerprint,
            header.vd,
            header.vfine,
            header.flags,
            header.channels,
            header.depth,
            header.frame_index,
        )
    )
    width = _key_width(ROOT_LEVEL)
    out += _U32.pack(len(root))
    for key in root.keys.tolist():
        out += int(key).to_bytes(width, "little")
    out += root.codes.tobytes()
    out += struct.pack(f"<{len(counts)}I", *counts)
    out += _U32.pack(len(payload))
    out += payload
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptStreamError(f"stream truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct, what: str) -> tuple:
        return st.unpack(self.take(st.size, what))


def read_container(data: bytes) -> Container:
    r = _Reader(bytes(data))
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagicError(f"not a hintpc frame (magic {bytes(data[:4])!r})")
    magic, version, config_hash, fingerprint, vd, vfine, flags, channels, depth, frame_index = r.unpack(_HEADER, "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported bitstream version {version}")
    header = StreamHeader(config_hash, fingerprint, vd, vfine, flags, channels, depth, frame_index, version)

    (n_root,) = r.unpack(_U32, "root count")
    if n_root > 1 << (3 * ROOT_LEVEL):
        raise CorruptStreamError(f"root block claims {n_root} voxels at level {ROOT_LEVEL}")
    width = _key_width(ROOT_LEVEL)
    raw_keys = r.take(n_root * width, "root coordinates")
    keys = [int.from_bytes(raw_keys[i * width : (i + 1) * width], "little") for i in range(n_root)]
    codes = np.frombuffer(r.take(n_root, "root codes"), dtype=np.uint8)
    try:
        root = SparseLevel.from_arrays(ROOT_LEVEL, np.array(keys, dtype=np.uint64), codes)
    except CorruptStreamError:
        raise
    except HintError as e:
        raise CorruptStreamError(f"invalid root block: {e}") from e

    counts = struct.unpack(f"<{depth + 1}I", r.take(4 * (depth + 1), "level counts"))
    if counts[0] != n_root:
        raise CorruptStreamError(f"level 0 count {counts[0]} != root block size {n_root}")
    (payload_len,) = r.unpack(_U32, "payload length")
    payload = r.take(payload_len, "payload")
    if r.pos != len(r.data):
        raise CorruptStreamError(f"{len(r.data) - r.pos} trailing bytes after payload")
    return Container(header, root, tuple(counts), payload)
