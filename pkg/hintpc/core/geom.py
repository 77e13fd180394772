"""Integer voxel geometry: Morton keys, sorted voxel sets, neighborhood lookups.

Morton layout: x occupies bit 0 of every interleaved triplet, y bit 1, z bit 2.
With this layout the child index inside a parent, ``b_x + 2*b_y + 4*b_z``, is the
low three bits of the child's key and the parent key is ``key >> 3``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import InconsistentPayloadError, OutOfRangeError, ShapeError

# 64-bit keys hold 21 bits per axis.
MAX_DEPTH = 21

Voxel = tuple[int, int, int]

_SPREAD = (
    (32, 0x001F00000000FFFF),
    (16, 0x001F0000FF0000FF),
    (8, 0x100F00F00F00F00F),
    (4, 0x10C30C30C30C30C3),
    (2, 0x1249249249249249),
)
_COMPACT = (
    (2, 0x10C30C30C30C30C3),
    (4, 0x100F00F00F00F00F),
    (8, 0x001F0000FF0000FF),
    (16, 0x001F00000000FFFF),
    (32, 0x00000000001FFFFF),
)


def _check_depth(depth: int) -> None:
    if not 0 <= int(depth) <= MAX_DEPTH:
        raise OutOfRangeError(f"depth {depth} outside 0..{MAX_DEPTH}")


def _spread(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    for shift, mask in _SPREAD:
        v = (v | (v << np.uint64(shift))) & np.uint64(mask)
    return v


def _compact(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0x1249249249249249)
    for shift, mask in _COMPACT:
        v = (v ^ (v >> np.uint64(shift))) & np.uint64(mask)
    return v


def morton_encode(xyz: ArrayLike, depth: int):
    """Interleave integer coordinates of shape (..., 3) into uint64 keys.

    A single voxel returns a Python int; batches return a uint64 array.
    """
    _check_depth(depth)
    arr = np.asarray(xyz, dtype=np.int64)
    if arr.shape[-1:] != (3,):
        raise ShapeError(f"expected (..., 3) coordinates, got shape {arr.shape}")
    limit = 1 << depth
    if arr.size and (int(arr.min()) < 0 or int(arr.max()) >= limit):
        raise OutOfRangeError(f"coordinate outside [0, {limit}) at depth {depth}")
    keys = _spread(arr[..., 0]) | (_spread(arr[..., 1]) << np.uint64(1)) | (_spread(arr[..., 2]) << np.uint64(2))
    if np.ndim(keys) == 0:
        return int(keys)
    return keys


def morton_decode(keys: ArrayLike, depth: int):
    """Inverse of :func:`morton_encode`; a scalar key returns a Voxel tuple."""
    _check_depth(depth)
    try:
        k = np.asarray(keys, dtype=np.uint64)
    except OverflowError as e:
        raise OutOfRangeError(f"key does not fit 64 bits: {keys!r}") from e
    if k.size and int(k.max()) >= 1 << (3 * depth):
        raise OutOfRangeError(f"key exceeds {3 * depth} bits at depth {depth}")
    xyz = np.stack(
        [_compact(k), _compact(k >> np.uint64(1)), _compact(k >> np.uint64(2))],
        axis=-1,
    ).astype(np.int64)
    if k.ndim == 0:
        return (int(xyz[0]), int(xyz[1]), int(xyz[2]))
    return xyz


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SortedVoxelSet:
    """Voxels at one level as strictly increasing Morton keys, plus optional 8-bit codes."""

    keys: np.ndarray
    depth: int
    codes: np.ndarray | None = None

    def __post_init__(self) -> None:
        _check_depth(self.depth)
        keys = np.array(self.keys, dtype=np.uint64).reshape(-1)
        if keys.size > 1 and not bool(np.all(keys[1:] > keys[:-1])):
            raise ShapeError("keys must be strictly increasing")
        object.__setattr__(self, "keys", _freeze(keys))
        if self.codes is not None:
            codes = np.array(self.codes, dtype=np.uint8).reshape(-1)
            if codes.shape != keys.shape:
                raise ShapeError(f"payload length {codes.size} != key count {keys.size}")
            object.__setattr__(self, "codes", _freeze(codes))

    @classmethod
    def empty(cls, depth: int, *, with_codes: bool = False) -> "SortedVoxelSet":
        codes = np.zeros(0, dtype=np.uint8) if with_codes else None
        return cls(np.zeros(0, dtype=np.uint64), depth, codes)

    def __len__(self) -> int:
        return int(self.keys.size)

    @cached_property
    def coords(self) -> np.ndarray:
        if not len(self):
            return np.zeros((0, 3), dtype=np.int64)
        return _freeze(morton_decode(self.keys, self.depth))

    def same_voxels(self, other: "SortedVoxelSet") -> bool:
        return self.depth == other.depth and np.array_equal(self.keys, other.keys)


def build_sorted_set(
    voxels: ArrayLike,
    depth: int,
    codes: ArrayLike | None = None,
) -> SortedVoxelSet:
    """Sort and deduplicate voxels; duplicate voxels must agree on their payload."""
    coords = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    keys = np.asarray(morton_encode(coords, depth), dtype=np.uint64).reshape(-1)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    keep = np.ones(keys.size, dtype=bool)
    keep[1:] = keys[1:] != keys[:-1]

    payload = None
    if codes is not None:
        raw = np.asarray(codes, dtype=np.int64).reshape(-1)
        if raw.size != coords.shape[0]:
            raise ShapeError(f"payload length {raw.size} != voxel count {coords.shape[0]}")
        if raw.size and (int(raw.min()) < 0 or int(raw.max()) > 255):
            raise OutOfRangeError("payload codes must be 8-bit")
        raw = raw[order]
        dup = np.flatnonzero(~keep)
        if dup.size and bool(np.any(raw[dup] != raw[dup - 1])):
            first = int(dup[np.argmax(raw[dup] != raw[dup - 1])])
            raise InconsistentPayloadError(
                f"voxel {morton_decode(int(keys[first]), depth)} given codes "
                f"{int(raw[first - 1])} and {int(raw[first])}"
            )
        payload = raw[keep].astype(np.uint8)

    return SortedVoxelSet(keys[keep], depth, payload)


@dataclass(frozen=True, eq=False)
class NeighborhoodSpec:
    """Ordered offset window; the order fixes model input channel order."""

    size: int
    offsets: np.ndarray


@lru_cache(maxsize=None)
def neighborhood(size: int) -> NeighborhoodSpec:
    """Offsets ordered lexicographically over (dz, dy, dx) ascending."""
    if size not in (7, 27, 125):
        raise ShapeError(f"neighborhood size must be 7, 27 or 125, got {size}")
    r = 2 if size == 125 else 1
    offsets = [
        (dx, dy, dz)
        for dz in range(-r, r + 1)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if size != 7 or abs(dx) + abs(dy) + abs(dz) <= 1
    ]
    return NeighborhoodSpec(size, _freeze(np.array(offsets, dtype=np.int64)))


def expand_neighborhood(center: ArrayLike, spec: NeighborhoodSpec) -> np.ndarray:
    """Return ``center + delta`` for every offset; shape (..., V, 3). Out-of-range results are kept."""
    c = np.asarray(center, dtype=np.int64)
    if c.shape[-1:] != (3,):
        raise ShapeError(f"expected (..., 3) centers, got shape {c.shape}")
    return c[..., None, :] + spec.offsets


def locate_batch(vset: SortedVoxelSet, queries: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """Return (found, row index or -1) for queries of shape (..., 3)."""
    q = np.asarray(queries, dtype=np.int64)
    if q.shape[-1:] != (3,):
        raise ShapeError(f"expected (..., 3) queries, got shape {q.shape}")
    shape = q.shape[:-1]
    flat = q.reshape(-1, 3)
    found = np.zeros(flat.shape[0], dtype=bool)
    index = np.full(flat.shape[0], -1, dtype=np.int64)
    if len(vset) and flat.shape[0]:
        inside = np.all((flat >= 0) & (flat < (1 << vset.depth)), axis=1)
        if inside.any():
            keys = morton_encode(flat[inside], vset.depth)
            pos = np.minimum(np.searchsorted(vset.keys, keys), len(vset) - 1)
            hit = vset.keys[pos] == keys
            found[inside] = hit
            index[inside] = np.where(hit, pos, -1)
    return found.reshape(shape), index.reshape(shape)


class Lookup(NamedTuple):
    found: np.ndarray
    codes: np.ndarray


def lookup_batch(vset: SortedVoxelSet, queries: ArrayLike) -> Lookup:
    """Existence flag and stored code (0 when absent or without payload) per query."""
    found, index = locate_batch(vset, queries)
    codes = np.zeros(found.shape, dtype=np.uint8)
    if vset.codes is not None and found.any():
        codes[found] = vset.codes[index[found]]
    return Lookup(found, codes)
