"""Synthetic voxelized sequences for desk-scale training and benchmarks.

Every sequence starts from a sphere shell sampled with ``density`` points per
unit of surface area, centered in a ``2**depth`` grid:

* ``static``    every frame is the same shell
* ``translate`` frame t is frame t-1 shifted by ``shift``; voxels leaving the grid are dropped
* ``jitter``    the same surface samples with fresh sub-voxel noise per frame
* ``morph``     the shell breathes and stretches along z over the sequence
* ``random``    an unrelated shell (center, radius, samples) per frame
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .geom import MAX_DEPTH, SortedVoxelSet, build_sorted_set

SYNTHETIC_KINDS = ("static", "translate", "jitter", "morph", "random")
PREFIX = "synthetic:"


def is_synthetic(source: str) -> bool:
    return str(source).startswith(PREFIX)


def parse_synthetic(source: str) -> str:
    kind = str(source)[len(PREFIX) :] if is_synthetic(source) else str(source)
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r} (expected one of {', '.join(SYNTHETIC_KINDS)})")
    return kind


def _directions(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.maximum(norm, 1e-12)


def _voxelize(points: np.ndarray, depth: int) -> SortedVoxelSet:
    limit = 1 << depth
    v = np.floor(points).astype(np.int64)
    inside = np.all((v >= 0) & (v < limit), axis=1)
    return build_sorted_set(v[inside], depth)


def make_synthetic_sequence(
    kind: str,
    n_frames: int,
    density: float = 1.0,
    seed: int = 0,
    depth: int = 7,
    *,
    shift: tuple[int, int, int] = (1, 0, 0),
) -> list[SortedVoxelSet]:
    kind = parse_synthetic(kind)
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")
    if not density > 0:
        raise ConfigError(f"density must be positive, got {density}")
    if not 2 <= depth <= MAX_DEPTH:
        raise ConfigError(f"synthetic depth must lie in 2..{MAX_DEPTH}, got {depth}")

    rng = np.random.default_rng(seed)
    size = float(1 << depth)
    center = np.full(3, size / 2.0)
    radius = 0.3 * size
    n_points = max(1, math.ceil(density * 4.0 * math.pi * radius * radius))
    dirs = _directions(rng, n_points)

    frames: list[SortedVoxelSet] = []
    if kind == "translate":
        step = np.asarray(shift, dtype=np.int64)
        current = _voxelize(center + radius * dirs, depth)
        for _ in range(n_frames):
            frames.append(current)
            moved = current.coords + step
            inside = np.all((moved >= 0) & (moved < (1 << depth)), axis=1)
            current = build_sorted_set(moved[inside], depth)
        return frames

    for t in range(n_frames):
        if kind == "static":
            pts = center + radius * dirs
        elif kind == "jitter":
            pts = center + radius * dirs + rng.normal(scale=0.5, size=dirs.shape)
        elif kind == "morph":
            phase = 2.0 * math.pi * t / max(n_frames, 2)
            r = radius * (1.0 + 0.08 * math.sin(phase))
            stretch = np.array([1.0, 1.0, 1.0 + 0.15 * math.sin(phase)])
            pts = center + r * dirs * stretch
        else:
            c = center + rng.uniform(-0.1, 0.1, size=3) * size
            r = radius * rng.uniform(0.6, 1.0)
            pts = c + r * _directions(rng, n_points)
        frames.append(_voxelize(pts, depth))
    return frames
