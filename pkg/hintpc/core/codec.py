"""Frame and sequence coding.

Symbol schedule inside one frame payload, for every level transition d -> d+1
(d = 0 .. D-2): even-group s0, even-group s1, odd-group s0, odd-group s1. Each
pass walks children in Morton order. The whole frame shares one range coder
and one flush. Level-0 voxels and codes travel raw in the container.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .coder import RangeDecoder, RangeEncoder, decode_batch, encode_batch, ideal_bits, quantize_table
from .config import CodecConfig
from .container import Container, StreamHeader, read_container, write_container
from .errors import ConfigMismatchError, CorruptStreamError, HintError
from .geom import MAX_DEPTH, SortedVoxelSet
from .model import HintModel, split_symbols
from .nn import Tensor, no_grad
from .pyramid import FramePyramid, FrameState, SparseLevel, build_pyramid, upscale

log = logging.getLogger(__name__)

__all__ = [
    "DecodedFrame",
    "EncodedFrame",
    "FrameState",
    "FrameStats",
    "decode_frame",
    "decode_sequence",
    "encode_frame",
    "encode_sequence",
    "model_for_config",
    "replay_levels",
    "stream_config",
]

_ARCH_FIELDS = ("vd", "vfine", "channels")
_SWITCHES = ("coarse", "fine", "sibling")
_FLAG_FIELDS = (*_SWITCHES, "share_embedding")


@dataclass(frozen=True)
class FrameStats:
    frame_index: int
    points: int
    voxels: int
    codes: int
    payload_bits: int
    header_bits: int
    ideal_bits: float
    model_bits: float

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.header_bits

    @property
    def bpp(self) -> float:
        return self.total_bits / max(self.points, 1)

    @property
    def bpp_payload(self) -> float:
        return self.payload_bits / max(self.points, 1)

    @property
    def bits_per_code(self) -> float:
        return self.payload_bits / max(self.codes, 1)


@dataclass(frozen=True, eq=False)
class EncodedFrame:
    data: bytes
    state: FrameState
    stats: FrameStats


class DecodedFrame(NamedTuple):
    leaves: SortedVoxelSet
    state: FrameState
    header: StreamHeader


def model_for_config(model: HintModel, config: CodecConfig) -> HintModel:
    """Same parameters with the ablation switches of ``config``."""
    fixed = [name for name in (*_ARCH_FIELDS, "hidden", "share_embedding") if getattr(model.config, name) != getattr(config, name)]
    if fixed:
        raise ConfigMismatchError(f"checkpoint was trained with different {', '.join(fixed)}", fixed)
    if model.config == config:
        return model
    return model.variant(config)


class _Tally:
    def __init__(self) -> None:
        self.ideal = 0.0
        self.model = 0.0


def _encode_group(enc: RangeEncoder, model: HintModel, features: Tensor, codes: np.ndarray, tally: _Tally) -> None:
    if not codes.size:
        return
    s0, s1 = split_symbols(codes)
    for symbols, probs in ((s0, model.predict_s0(features)), (s1, model.predict_s1(features, s0))):
        cdfs = quantize_table(probs)
        encode_batch(enc, symbols, cdfs)
        tally.ideal += ideal_bits(symbols, cdfs)
        tally.model += float(-np.log2(np.maximum(probs[np.arange(symbols.size), symbols], 1e-300)).sum())


def _decode_group(dec: RangeDecoder, model: HintModel, features: Tensor, count: int) -> np.ndarray:
    if not count:
        return np.zeros(0, dtype=np.int64)
    s0 = decode_batch(dec, quantize_table(model.predict_s0(features)), count)
    s1 = decode_batch(dec, quantize_table(model.predict_s1(features, s0)), count)
    return s1 * 16 + s0


def encode_frame(
    leaves: SortedVoxelSet,
    prev: FrameState,
    model: HintModel,
    config: CodecConfig | None = None,
    *,
    frame_index: int = 0,
    points: int | None = None,
) -> EncodedFrame:
    """Code one frame given the reconstructed previous frame."""
    config = config or model.config
    model = model_for_config(model, config)
    depth = config.depth
    prev.check_depth(depth)
    pyramid = build_pyramid(leaves, depth)

    enc = RangeEncoder()
    tally = _Tally()
    coded: list[np.ndarray] = []
    with no_grad():
        for d in range(depth - 1):
            ctx = model.level_context(pyramid.level(d), prev)
            codes = pyramid.level(d + 1).codes.astype(np.int64)
            even, odd = ctx.even_rows, ctx.odd_rows
            _encode_group(enc, model, model.even_features(ctx), codes[even], tally)
            _encode_group(enc, model, model.odd_features(ctx, codes[even]), codes[odd], tally)
            coded.append(codes)
    payload = enc.finish()

    header = StreamHeader(
        config_hash=config.config_hash(),
        params_fingerprint=model.fingerprint(),
        vd=config.vd,
        vfine=config.vfine,
        flags=config.flags,
        channels=config.channels,
        depth=depth,
        frame_index=frame_index,
    )
    counts = [len(lv) for lv in pyramid.levels] + [len(pyramid.leaves)]
    data = write_container(header, pyramid.level(0), counts, payload)

    # Carry forward what the decoder will rebuild, not the input set.
    rebuilt = replay_levels(pyramid.level(0), coded)
    stats = FrameStats(
        frame_index=frame_index,
        points=len(leaves) if points is None else points,
        voxels=len(leaves),
        codes=pyramid.num_coded,
        payload_bits=8 * len(payload),
        header_bits=8 * (len(data) - len(payload)),
        ideal_bits=tally.ideal,
        model_bits=tally.model,
    )
    log.info("frame %d: %d voxels, %d payload bits (%.3f bpp)", frame_index, stats.voxels, stats.payload_bits, stats.bpp)
    return EncodedFrame(data, FrameState(rebuilt), stats)


def replay_levels(root: SparseLevel, coded: list[np.ndarray]) -> FramePyramid:
    """Pyramid rebuilt from the root and the coded codes of levels 1..D-1, as a decoder sees it."""
    levels = [root]
    for d, codes in enumerate(coded):
        children = upscale(levels[d])
        levels.append(SparseLevel(d + 1, SortedVoxelSet(children.keys, d + 1, codes)))
    return FramePyramid(tuple(levels), len(levels), upscale(levels[-1]))


def stream_config(header: StreamHeader, base: CodecConfig) -> CodecConfig:
    """``base`` with every field the header records replaced by the header's value."""
    return base.model_copy(
        update={
            "depth": header.depth,
            "vd": header.vd,
            "vfine": header.vfine,
            "channels": header.channels,
            **{name: getattr(header, name) for name in _FLAG_FIELDS},
        }
    )


def _check_header(header: StreamHeader, model: HintModel, config: CodecConfig | None) -> HintModel:
    stream = stream_config(header, model.config)
    if config is not None:
        wrong = config.diff(stream)
        if wrong:
            detail = ", ".join(f"{n}: stream={getattr(stream, n)} decoder={getattr(config, n)}" for n in wrong)
            raise ConfigMismatchError(f"bitstream config differs from decoder config ({detail})", wrong)
    # Switches may differ from the checkpoint's; the architecture may not.
    wrong = [n for n in model.config.diff(stream) if n not in _SWITCHES]
    if wrong:
        detail = ", ".join(f"{n}: stream={getattr(stream, n)} checkpoint={getattr(model.config, n)}" for n in wrong)
        raise ConfigMismatchError(f"bitstream was coded with a different model ({detail})", wrong)

    decoder = model_for_config(model, stream)
    if decoder.config.config_hash() != header.config_hash:
        raise ConfigMismatchError("config hash differs (hidden width or architecture version)", ["config_hash"])
    if decoder.fingerprint() != header.params_fingerprint:
        raise ConfigMismatchError("bitstream was coded with different model parameters", ["params"])
    return decoder


def decode_frame(
    data: bytes | Container,
    prev: FrameState,
    model: HintModel,
    config: CodecConfig | None = None,
) -> DecodedFrame:
    """Rebuild the leaf voxels of one frame from its bitstream and the previous decoded frame."""
    container = data if isinstance(data, Container) else read_container(data)
    header = container.header
    if not 1 <= header.depth <= MAX_DEPTH:
        raise CorruptStreamError(f"header depth {header.depth} outside 1..{MAX_DEPTH}")
    model = _check_header(header, model, config)
    depth = header.depth
    if len(container.root) != 1:
        raise CorruptStreamError(f"root level holds {len(container.root)} voxels, expected 1")
    prev.check_depth(depth)

    dec = RangeDecoder(container.payload)
    levels: list[SparseLevel] = [container.root]
    with no_grad():
        for d in range(depth - 1):
            ctx = model.level_context(levels[d], prev)
            n = len(ctx.children)
            if n != container.counts[d + 1]:
                raise CorruptStreamError(f"level {d + 1} expands to {n} voxels, header says {container.counts[d + 1]}")
            codes = np.zeros(n, dtype=np.int64)
            even, odd = ctx.even_rows, ctx.odd_rows
            codes[even] = _decode_group(dec, model, model.even_features(ctx), even.size)
            codes[odd] = _decode_group(dec, model, model.odd_features(ctx, codes[even]), odd.size)
            levels.append(SparseLevel(d + 1, SortedVoxelSet(ctx.children.keys, d + 1, codes)))

    leaves = upscale(levels[-1])
    if len(leaves) != container.counts[depth]:
        raise CorruptStreamError(f"frame decodes to {len(leaves)} voxels, header says {container.counts[depth]}")
    state = FrameState(FramePyramid(tuple(levels), depth, leaves))
    log.info("frame %d: decoded %d voxels", header.frame_index, len(leaves))
    return DecodedFrame(leaves, state, header)


def encode_sequence(
    frames: Iterable[SortedVoxelSet],
    model: HintModel,
    config: CodecConfig | None = None,
    *,
    points: list[int] | None = None,
) -> list[EncodedFrame]:
    """Frame 0 sees an empty previous frame; frame t sees the reconstruction of t-1."""
    prev = FrameState.empty()
    out: list[EncodedFrame] = []
    for i, leaves in enumerate(frames):
        try:
            encoded = encode_frame(leaves, prev, model, config, frame_index=i, points=None if points is None else points[i])
        except HintError as e:
            e.at_frame(i)
            raise
        out.append(encoded)
        prev = encoded.state
    if not out:
        raise HintError("sequence has no frames")
    return out


def decode_sequence(
    streams: Iterable[bytes],
    model: HintModel,
    config: CodecConfig | None = None,
) -> list[SortedVoxelSet]:
    prev = FrameState.empty()
    out: list[SortedVoxelSet] = []
    for i, data in enumerate(streams):
        try:
            decoded = decode_frame(data, prev, model, config)
        except HintError as e:
            e.at_frame(i)
            raise
        out.append(decoded.leaves)
        prev = decoded.state
    return out
