"""PLY point clouds, voxelization and frame discovery."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement
from plyfile import PlyParseError as _PlyfileParseError

from .errors import EmptyLevelError, HintError, OutOfRangeError, PlyParseError
from .geom import MAX_DEPTH, SortedVoxelSet, build_sorted_set

log = logging.getLogger(__name__)

_XYZ = ("x", "y", "z")


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    source: str | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise PlyParseError(f"{self.source or 'point cloud'}: non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def read_ply(path: str | Path) -> PointCloud:
    """x/y/z of the vertex element (ascii or binary); other properties are ignored."""
    path = Path(path)
    if not path.is_file():
        raise HintError(f"input not found: {path}")
    try:
        ply = PlyData.read(str(path))
    except _PlyfileParseError as e:
        raise PlyParseError(f"{path}: {e}") from e
    except (ValueError, EOFError, UnicodeDecodeError) as e:
        raise PlyParseError(f"{path}: malformed PLY ({e})") from e
    if "vertex" not in ply:
        raise PlyParseError(f"{path}: no vertex element")
    vertex = ply["vertex"]
    names = {p.name for p in vertex.properties}
    missing = [a for a in _XYZ if a not in names]
    if missing:
        raise PlyParseError(f"{path}: vertex element lacks {', '.join(missing)}")
    pts = np.stack([np.asarray(vertex[a], dtype=np.float64) for a in _XYZ], axis=1)
    log.debug("read %s: %d points (%s)", path, pts.shape[0], "ascii" if ply.text else ply.byte_order)
    return PointCloud(pts, source=str(path))


def write_ply(path: str | Path, cloud: PointCloud | np.ndarray) -> Path:
    """Binary little-endian PLY with double x/y/z."""
    path = Path(path)
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    vertex = np.empty(pts.shape[0], dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
    vertex["x"], vertex["y"], vertex["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    path.parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(vertex, "vertex")], text=False, byte_order="<").write(str(path))
    return path


@dataclass(frozen=True)
class Dequantizer:
    """Maps voxel coordinates back to source units: ``offset + (v + shift) / scale``."""

    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    shift: float = 0.0

    def apply(self, coords: np.ndarray) -> np.ndarray:
        v = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
        return np.asarray(self.offset, dtype=np.float64) + (v + self.shift) / self.scale

    @property
    def identity(self) -> bool:
        return self.offset == (0.0, 0.0, 0.0) and self.scale == 1.0 and self.shift == 0.0


@dataclass(frozen=True, eq=False)
class Quantized:
    voxels: SortedVoxelSet
    transform: Dequantizer = field(default_factory=Dequantizer)
    points: int = 0


def quantize(cloud: PointCloud, bits: int) -> Quantized:
    """Voxelize to a ``2**bits`` grid; integer clouds that already fit pass through unchanged."""
    if not 0 <= bits <= MAX_DEPTH:
        raise OutOfRangeError(f"bits must lie in 0..{MAX_DEPTH}, got {bits}")
    pts = cloud.points
    if not len(cloud):
        raise EmptyLevelError(f"{cloud.source or 'point cloud'} has no points")
    limit = 1 << bits

    if np.all(pts == np.floor(pts)) and float(pts.min()) >= 0 and float(pts.max()) < limit:
        return Quantized(build_sorted_set(pts.astype(np.int64), bits), Dequantizer(), len(cloud))

    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    if extent == 0.0:
        coords = np.zeros((1, 3), dtype=np.int64)
        transform = Dequantizer(tuple(float(x) for x in lo), 1.0, 0.0)
    else:
        s = (limit - 1) / extent if limit > 1 else 1.0 / extent
        coords = np.clip(np.floor((pts - lo) * s), 0, limit - 1).astype(np.int64)
        transform = Dequantizer(tuple(float(x) for x in lo), s, 0.5)
    return Quantized(build_sorted_set(coords, bits), transform, len(cloud))


def list_frames(directory: str | Path, order_file: str | Path | None = None) -> list[Path]:
    """PLY frames of one sequence: lexicographic filename order, or the order listed in ``order_file``."""
    directory = Path(directory)
    if directory.is_file():
        return [directory]
    if order_file is not None:
        names = [ln.strip() for ln in Path(order_file).read_text(encoding="utf-8").splitlines()]
        frames = [directory / n for n in names if n and not n.startswith("#")]
        missing = [str(p) for p in frames if not p.is_file()]
        if missing:
            raise HintError(f"order file lists missing frames: {', '.join(missing[:3])}")
        return frames
    return sorted(directory.glob("*.ply"), key=lambda p: p.name)


def discover_sequences(root: str | Path, order_file: str | Path | None = None) -> list[list[Path]]:
    """A directory of frames is one sequence; a directory of frame directories is several."""
    root = Path(root)
    if not root.exists():
        raise HintError(f"input not found: {root}")
    frames = list_frames(root, order_file)
    if frames:
        return [frames]
    sequences = [list_frames(d) for d in sorted(p for p in root.iterdir() if p.is_dir())]
    sequences = [s for s in sequences if s]
    if not sequences:
        raise HintError(f"no .ply frames under {root}")
    return sequences
