"""Typed configuration for the codec and the trainer."""

from __future__ import annotations

import hashlib
import json
from typing import ClassVar, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .geom import MAX_DEPTH

# Bump when the model graph changes in a way that invalidates checkpoints.
ARCH_VERSION = 1

WindowSize = Literal[7, 27, 125]


class CodecConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    depth: int = Field(10, ge=1, le=MAX_DEPTH)
    vd: WindowSize = 27
    vfine: WindowSize = 125
    channels: int = Field(32, ge=4, le=1024)
    hidden: int = Field(64, ge=4, le=4096)

    # Ablation switches; all off gives the spatial-only baseline.
    coarse: bool = True
    fine: bool = True
    sibling: bool = True

    share_embedding: bool = False
    zero_init_heads: bool = True
    seed: int = 0

    HASHED: ClassVar[tuple[str, ...]] = (
        "vd",
        "vfine",
        "channels",
        "hidden",
        "coarse",
        "fine",
        "sibling",
        "share_embedding",
    )

    @classmethod
    def build(cls, **kwargs) -> "CodecConfig":
        """Validate keyword settings, raising ConfigError instead of pydantic's error."""
        try:
            return cls(**{k: v for k, v in kwargs.items() if v is not None})
        except ValidationError as e:
            raise ConfigError(f"invalid codec config: {e}") from e

    def architecture(self) -> dict:
        arch = {name: getattr(self, name) for name in self.HASHED}
        arch["arch_version"] = ARCH_VERSION
        return arch

    def config_hash(self) -> int:
        """u64 digest of the fields the bitstream depends on (depth and seed excluded)."""
        blob = json.dumps(self.architecture(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")

    def diff(self, other: "CodecConfig") -> list[str]:
        return [name for name in self.HASHED if getattr(self, name) != getattr(other, name)]

    def spatial_only(self) -> "CodecConfig":
        return self.model_copy(update={"coarse": False, "fine": False, "sibling": False})

    @property
    def flags(self) -> int:
        return int(self.coarse) | int(self.fine) << 1 | int(self.sibling) << 2 | int(self.share_embedding) << 3


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(1, ge=1)
    lr: float = Field(1e-3, gt=0.0, le=1.0)
    seed: int = 0
    shuffle: bool = True
    checkpoint: str | None = None
    log_every: int = Field(50, ge=1)
