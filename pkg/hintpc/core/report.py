"""Benchmark report models and the per-frame CSV."""

from __future__ import annotations

import csv
from pathlib import Path

from pydantic import BaseModel, Field

from .codec import FrameStats

# Stable across versions; tests pin this header.
CSV_COLUMNS = (
    "sequence",
    "frame",
    "points",
    "voxels",
    "payload_bits",
    "header_bits",
    "bpp",
    "bpp_payload",
    "encode_ms",
    "decode_ms",
    "lossless",
)


class FrameRow(BaseModel):
    sequence: str = ""
    frame: int
    points: int
    voxels: int
    payload_bits: int
    header_bits: int
    bpp: float
    bpp_payload: float
    encode_ms: float = 0.0
    decode_ms: float = 0.0
    lossless: bool = True

    @classmethod
    def from_stats(cls, stats: FrameStats, *, sequence: str = "", encode_ms: float = 0.0, decode_ms: float = 0.0, lossless: bool = True) -> "FrameRow":
        return cls(
            sequence=sequence,
            frame=stats.frame_index,
            points=stats.points,
            voxels=stats.voxels,
            payload_bits=stats.payload_bits,
            header_bits=stats.header_bits,
            bpp=stats.bpp,
            bpp_payload=stats.bpp_payload,
            encode_ms=encode_ms,
            decode_ms=decode_ms,
            lossless=lossless,
        )

    def csv_row(self) -> list[str]:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append("1" if v else "0")
            elif isinstance(v, float):
                out.append(f"{v:.6f}")
            else:
                out.append(str(v))
        return out


class BenchReport(BaseModel):
    label: str = "hint"
    rows: list[FrameRow] = Field(default_factory=list)
    num_parameters: int = 0
    model_size_mb: float = 0.0
    # Mean BPP of the comparison run over the same frames, when requested.
    baseline_bpp: float | None = None
    baseline_label: str = "spatial-only"

    def _mean(self, name: str) -> float:
        if not self.rows:
            return 0.0
        return sum(float(getattr(r, name)) for r in self.rows) / len(self.rows)

    @property
    def mean_bpp(self) -> float:
        return self._mean("bpp")

    @property
    def mean_bpp_payload(self) -> float:
        return self._mean("bpp_payload")

    @property
    def mean_encode_ms(self) -> float:
        return self._mean("encode_ms")

    @property
    def mean_decode_ms(self) -> float:
        return self._mean("decode_ms")

    @property
    def all_lossless(self) -> bool:
        return all(r.lossless for r in self.rows)

    @property
    def failed_frames(self) -> list[FrameRow]:
        return [r for r in self.rows if not r.lossless]

    @property
    def reduction_vs_baseline(self) -> float | None:
        """Percent BPP saved against the comparison run (positive is better)."""
        if not self.baseline_bpp:
            return None
        return 100.0 * (self.baseline_bpp - self.mean_bpp) / self.baseline_bpp

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.csv_row())
        return path
