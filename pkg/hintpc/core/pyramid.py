"""Multiscale sparse occupancy pyramid.

Level ``d`` holds the voxels of the frame at resolution ``2**d`` per axis together
with their 8-bit child occupancy codes. ``downscale``/``upscale`` are the fixed
bit-level transforms between a level and the one below it.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .errors import CorruptLevelError, CorruptPyramidError, DepthMismatchError, EmptyLevelError
from .geom import SortedVoxelSet

log = logging.getLogger(__name__)

POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)
_CHILD_BITS = (np.uint8(1) << np.arange(8, dtype=np.uint8)).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SparseLevel:
    """Voxels of level ``level`` with their occupancy codes (always 1..255)."""

    level: int
    voxels: SortedVoxelSet

    def __post_init__(self) -> None:
        codes = self.voxels.codes
        if codes is None:
            raise CorruptLevelError(f"level {self.level} has no occupancy codes")
        if self.voxels.depth != self.level:
            raise DepthMismatchError(f"level {self.level} built from a depth-{self.voxels.depth} set")
        if codes.size and int(codes.min()) == 0:
            raise CorruptLevelError(f"level {self.level} contains occupancy code 0")

    @classmethod
    def from_arrays(cls, level: int, keys: np.ndarray, codes: np.ndarray) -> "SparseLevel":
        return cls(level, SortedVoxelSet(keys, level, codes))

    def __len__(self) -> int:
        return len(self.voxels)

    @property
    def keys(self) -> np.ndarray:
        return self.voxels.keys

    @property
    def codes(self) -> np.ndarray:
        assert self.voxels.codes is not None
        return self.voxels.codes

    @property
    def coords(self) -> np.ndarray:
        return self.voxels.coords

    def child_count(self) -> int:
        return int(POPCOUNT[self.codes].sum())


@dataclass(frozen=True, eq=False)
class FramePyramid:
    levels: tuple[SparseLevel, ...]
    depth: int
    leaves: SortedVoxelSet

    def level(self, d: int) -> SparseLevel:
        return self.levels[d]

    @property
    def num_coded(self) -> int:
        """Number of occupancy codes coded by the entropy model (levels 1..D-1)."""
        return sum(len(lv) for lv in self.levels[1:])


def downscale(children: SortedVoxelSet) -> SparseLevel:
    """Parent voxels and their occupancy codes from the child voxels one level down."""
    if not len(children):
        raise EmptyLevelError(f"cannot downscale an empty depth-{children.depth} set")
    if children.depth < 1:
        raise DepthMismatchError("level 0 has no parent level")
    parent_keys = children.keys >> np.uint64(3)
    child_bits = _CHILD_BITS[(children.keys & np.uint64(7)).astype(np.int64)]
    starts = np.flatnonzero(np.r_[True, parent_keys[1:] != parent_keys[:-1]])
    codes = np.bitwise_or.reduceat(child_bits, starts)
    return SparseLevel.from_arrays(children.depth - 1, parent_keys[starts], codes)


def child_layout(parent: SparseLevel) -> tuple[np.ndarray, np.ndarray]:
    """For each child in upscale order: (row of its parent, child index 0..7)."""
    bits = (parent.codes[:, None] >> np.arange(8, dtype=np.uint8)) & 1
    rows, index = np.nonzero(bits)
    return rows.astype(np.int64), index.astype(np.int64)


def upscale(parent: SparseLevel) -> SortedVoxelSet:
    """Child voxels implied by parent voxels and their occupancy codes, sorted."""
    if len(parent) and int(parent.codes.min()) == 0:
        raise CorruptLevelError(f"level {parent.level} contains occupancy code 0")
    rows, index = child_layout(parent)
    keys = (parent.keys[rows] << np.uint64(3)) | index.astype(np.uint64)
    return SortedVoxelSet(keys, parent.level + 1)


def build_pyramid(leaves: SortedVoxelSet, depth: int) -> FramePyramid:
    """Downscale ``leaves`` until level 0; levels[d] holds (C_d, O_d) for d = 0..depth-1."""
    if depth < 1:
        raise DepthMismatchError(f"pyramid depth must be >= 1, got {depth}")
    if not len(leaves):
        raise EmptyLevelError("frame has no voxels")
    if leaves.depth != depth and int(leaves.keys[-1]) >= 1 << (3 * depth):
        raise DepthMismatchError(f"voxels do not fit a depth-{depth} grid")
    current = leaves if leaves.depth == depth else SortedVoxelSet(leaves.keys, depth)
    levels: list[SparseLevel] = []
    for _ in range(depth):
        lv = downscale(current)
        levels.append(lv)
        current = SortedVoxelSet(lv.keys, lv.level)
    levels.reverse()
    log.debug("pyramid depth=%d sizes=%s", depth, [len(lv) for lv in levels])
    return FramePyramid(tuple(levels), depth, SortedVoxelSet(leaves.keys, depth))


def reconstruct_pyramid(levels: list[SparseLevel] | tuple[SparseLevel, ...]) -> SortedVoxelSet:
    """Chain of upscales from level 0; every intermediate level must agree with the next."""
    if not levels:
        raise CorruptPyramidError("pyramid has no levels")
    current = upscale(levels[0])
    for lv in levels[1:]:
        if lv.level != current.depth or not np.array_equal(lv.keys, current.keys):
            raise CorruptPyramidError(f"level {lv.level} voxels disagree with the codes of level {lv.level - 1}")
        current = upscale(lv)
    return current


@dataclass(frozen=True, eq=False)
class FrameState:
    """Reconstructed pyramid of the previous frame; empty for the first frame."""

    pyramid: FramePyramid | None = None

    @classmethod
    def empty(cls) -> "FrameState":
        return cls(None)

    @property
    def is_empty(self) -> bool:
        return self.pyramid is None

    def check_depth(self, depth: int) -> None:
        if self.pyramid is not None and self.pyramid.depth != depth:
            raise DepthMismatchError(f"previous frame has depth {self.pyramid.depth}, current frame {depth}")

    def voxels(self, d: int) -> SortedVoxelSet:
        """Occupied voxels of the previous frame at level ``d`` (codes not attached)."""
        if self.pyramid is None:
            return SortedVoxelSet.empty(d)
        if d == self.pyramid.depth:
            return self.pyramid.leaves
        return SortedVoxelSet(self.pyramid.levels[d].keys, d)

    def level(self, d: int) -> SortedVoxelSet:
        """Voxels of level ``d`` with their occupancy codes attached."""
        if self.pyramid is None or d >= self.pyramid.depth:
            return SortedVoxelSet.empty(d, with_codes=True)
        return self.pyramid.levels[d].voxels

    def digest(self) -> str:
        """Hash of every level's voxels and codes plus the leaves."""
        h = hashlib.blake2b(digest_size=16)
        if self.pyramid is not None:
            h.update(self.pyramid.depth.to_bytes(1, "little"))
            for lv in self.pyramid.levels:
                h.update(len(lv).to_bytes(8, "little"))
                h.update(np.ascontiguousarray(lv.keys, dtype="<u8").tobytes())
                h.update(np.ascontiguousarray(lv.codes, dtype=np.uint8).tobytes())
            h.update(np.ascontiguousarray(self.pyramid.leaves.keys, dtype="<u8").tobytes())
        return h.hexdigest()
