"""Occupancy entropy model.

For every level transition d -> d+1 the model turns the decoded parent level of
the current frame and the reconstructed previous frame into per-child features
and two 16-way distributions, one for each nibble of the child's occupancy code.

Feature flow for one transition::

    F_s   spatial prior on parents (embedding + face-neighbor residual blocks)
    T_d   coarse temporal: existence window over current and previous parents
    F_d   = broadcast(F_s + T_d) onto the children
    T     fine temporal: mean code embedding over the previous frame's children
    F     = F_d + T
    odd children add the per-parent mean descriptor of their even siblings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .config import CodecConfig
from .errors import ConfigError, ContractError, ShapeError
from .geom import NeighborhoodSpec, SortedVoxelSet, expand_neighborhood, locate_batch, lookup_batch, neighborhood
from .nn import (
    ParamStore,
    Tensor,
    add,
    concat_cols,
    embedding_lookup,
    embedding_mean,
    gather_rows,
    linear,
    masked_mean,
    no_grad,
    relu,
    scale,
    softmax,
    softmax_cross_entropy,
)
from .pyramid import FramePyramid, FrameState, SparseLevel, child_layout, upscale

log = logging.getLogger(__name__)

EVEN_GROUP = (0, 3, 5, 6)
ODD_GROUP = (1, 2, 4, 7)

_IS_EVEN = np.array([i in EVEN_GROUP for i in range(8)], dtype=bool)

# Rows per neighborhood query batch; bounds the (rows, V, 3) scratch array.
_WINDOW_CHUNK = 8192

_SPATIAL_BLOCKS = 2


def relative_position(index) -> np.ndarray:
    """(b_x, b_y, b_z) of child indices as float32 rows."""
    i = np.asarray(index, dtype=np.int64).reshape(-1)
    return np.stack([i & 1, (i >> 1) & 1, (i >> 2) & 1], axis=1).astype(np.float32)


@dataclass(frozen=True)
class GroupSpec:
    even: tuple[int, ...] = EVEN_GROUP
    odd: tuple[int, ...] = ODD_GROUP

    def is_even(self, index) -> np.ndarray:
        return _IS_EVEN[np.asarray(index, dtype=np.int64)]


GROUPS = GroupSpec()


def split_symbols(codes) -> tuple[np.ndarray, np.ndarray]:
    """Occupancy codes -> (s0 low nibble, s1 high nibble)."""
    c = np.asarray(codes, dtype=np.int64)
    return c & 15, c >> 4


@dataclass(frozen=True, eq=False)
class FeatureMap:
    level: int
    values: Tensor

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class LevelContext:
    """Everything the heads need to code the children of one parent level."""

    parent: SparseLevel
    children: SortedVoxelSet
    parent_row: np.ndarray
    child_index: np.ndarray
    features: FeatureMap

    @cached_property
    def even_rows(self) -> np.ndarray:
        return np.flatnonzero(_IS_EVEN[self.child_index])

    @cached_property
    def odd_rows(self) -> np.ndarray:
        return np.flatnonzero(~_IS_EVEN[self.child_index])


def _window(vset: SortedVoxelSet, centers: np.ndarray, spec: NeighborhoodSpec, *, codes: bool) -> np.ndarray:
    out = np.zeros((centers.shape[0], spec.size), dtype=np.uint8 if codes else bool)
    for lo in range(0, centers.shape[0], _WINDOW_CHUNK):
        q = expand_neighborhood(centers[lo : lo + _WINDOW_CHUNK], spec)
        if codes:
            out[lo : lo + _WINDOW_CHUNK] = lookup_batch(vset, q).codes
        else:
            out[lo : lo + _WINDOW_CHUNK] = locate_batch(vset, q)[0]
    return out


def existence_map(parent: SparseLevel, prev_parent: SortedVoxelSet, spec: NeighborhoodSpec) -> np.ndarray:
    """Binary (N, 2V) window: current-frame hits then previous-frame hits."""
    if prev_parent.depth != parent.level:
        raise ShapeError(f"previous level depth {prev_parent.depth} != current level {parent.level}")
    z_t = _window(parent.voxels, parent.coords, spec, codes=False)
    z_p = _window(prev_parent, parent.coords, spec, codes=False)
    return np.concatenate([z_t, z_p], axis=1)


def window_codes(children: SortedVoxelSet, prev_level: SortedVoxelSet, spec: NeighborhoodSpec) -> np.ndarray:
    """(N, V) previous-frame codes around each child, 0 where absent."""
    if prev_level.depth != children.depth:
        raise ShapeError(f"previous level depth {prev_level.depth} != current level {children.depth}")
    return _window(prev_level, children.coords, spec, codes=True)


class HintModel:
    """Parameters and forward passes of the entropy model."""

    def __init__(self, config: CodecConfig, store: ParamStore | None = None):
        self.config = config
        self.store = store if store is not None else ParamStore(config.seed)
        self._face = self._face_offsets()
        self._build()

    @staticmethod
    def _face_offsets() -> NeighborhoodSpec:
        full = neighborhood(7).offsets
        return NeighborhoodSpec(6, full[np.any(full != 0, axis=1)])

    def _build(self) -> None:
        c, h, cfg = self.config.channels, self.config.hidden, self.config
        p = self.store.create
        p("prior.embed", (256, c), fan_in=1)
        for k in range(_SPATIAL_BLOCKS):
            p(f"prior.block{k}.weight", (c, c), fan_in=c)
            p(f"prior.block{k}.bias", (c,), fan_in=c)
        p("coarse.fc1.weight", (h, 2 * cfg.vd), fan_in=2 * cfg.vd)
        p("coarse.fc1.bias", (h,), fan_in=2 * cfg.vd)
        p("coarse.fc2.weight", (c, h), fan_in=h)
        p("coarse.fc2.bias", (c,), fan_in=h)
        p("fine.embed", (256, c), fan_in=1)
        p("fine.proj", (c, c), fan_in=c)
        if not cfg.share_embedding:
            p("sibling.embed", (256, c), fan_in=1)
        p("sibling.proj", (c, c + 3), fan_in=c + 3)
        p("s0.embed", (16, c), fan_in=1)
        for head in ("head0", "head1"):
            p(f"{head}.fc1.weight", (h, c), fan_in=c)
            p(f"{head}.fc1.bias", (h,), fan_in=c)
            p(f"{head}.fc2.weight", (16, h), fan_in=h, zero=cfg.zero_init_heads)
            p(f"{head}.fc2.bias", (16,), fan_in=h, zero=cfg.zero_init_heads)

    def variant(self, config: CodecConfig) -> "HintModel":
        """A model over the same parameters with different ablation switches."""
        clone = object.__new__(HintModel)
        clone.config = config
        clone.store = self.store
        clone._face = self._face
        return clone

    def __getitem__(self, name: str) -> Tensor:
        return self.store[name]

    @property
    def num_parameters(self) -> int:
        return self.store.num_parameters()

    @property
    def model_size_mb(self) -> float:
        return self.num_parameters * 4 / 1e6

    def fingerprint(self) -> int:
        return self.store.fingerprint()

    # -- feature paths --------------------------------------------------

    def spatial_prior(self, parent: SparseLevel) -> FeatureMap:
        n = len(parent)
        h = embedding_lookup(self["prior.embed"], parent.codes)
        found, index = locate_batch(parent.voxels, expand_neighborhood(parent.coords, self._face))
        centers = np.repeat(np.arange(n, dtype=np.int64), self._face.size)[found.reshape(-1)]
        neighbors = index.reshape(-1)[found.reshape(-1)]
        for k in range(_SPATIAL_BLOCKS):
            m = masked_mean(gather_rows(h, neighbors), groups=centers, num_groups=n)
            mixed = linear(add(h, m), self[f"prior.block{k}.weight"], self[f"prior.block{k}.bias"])
            h = add(h, relu(mixed))
        return FeatureMap(parent.level, h)

    def coarse_temporal(
        self,
        parent: SparseLevel,
        prev_parent: SortedVoxelSet,
        spec: NeighborhoodSpec | None = None,
    ) -> FeatureMap:
        spec = spec or neighborhood(self.config.vd)
        if spec.size != self.config.vd:
            raise ConfigError(f"coarse window has {spec.size} offsets, model expects {self.config.vd}")
        m = Tensor(existence_map(parent, prev_parent, spec).astype(np.float32))
        hidden = relu(linear(m, self["coarse.fc1.weight"], self["coarse.fc1.bias"]))
        return FeatureMap(parent.level, linear(hidden, self["coarse.fc2.weight"], self["coarse.fc2.bias"]))

    def fuse_and_broadcast(self, spatial: FeatureMap, temporal: FeatureMap | None, parent: SparseLevel) -> FeatureMap:
        if len(spatial) != len(parent) or (temporal is not None and len(temporal) != len(parent)):
            raise ShapeError("parent feature rows do not match the parent level")
        fused = spatial.values if temporal is None else add(spatial.values, temporal.values)
        rows, _ = child_layout(parent)
        return FeatureMap(parent.level + 1, gather_rows(fused, rows))

    def fine_temporal(
        self,
        children: SortedVoxelSet,
        prev_level: SortedVoxelSet,
        spec: NeighborhoodSpec | None = None,
    ) -> FeatureMap:
        spec = spec or neighborhood(self.config.vfine)
        if spec.size != self.config.vfine:
            raise ConfigError(f"fine window has {spec.size} offsets, model expects {self.config.vfine}")
        bag = embedding_mean(self["fine.embed"], window_codes(children, prev_level, spec))
        return FeatureMap(children.depth, linear(bag, self["fine.proj"]))

    def final_feature(self, broadcast: FeatureMap, fine: FeatureMap) -> FeatureMap:
        if len(broadcast) != len(fine):
            raise ShapeError(f"feature rows differ: {len(broadcast)} vs {len(fine)}")
        return FeatureMap(broadcast.level, add(broadcast.values, fine.values))

    def sibling_context(
        self,
        parent_rows: np.ndarray,
        child_index: np.ndarray,
        codes: np.ndarray,
        num_parents: int,
    ) -> Tensor:
        """Per-parent mean of projected (code embedding, relative position) over occupied even children."""
        child_index = np.asarray(child_index, dtype=np.int64)
        if child_index.size and not bool(GROUPS.is_even(child_index).all()):
            raise ContractError("sibling context built from a child outside the even group")
        table = self["fine.embed"] if self.config.share_embedding else self["sibling.embed"]
        e = embedding_lookup(table, codes)
        desc = linear(concat_cols(e, Tensor(relative_position(child_index))), self["sibling.proj"])
        return masked_mean(desc, groups=parent_rows, num_groups=num_parents)

    # -- level assembly -------------------------------------------------

    def level_context(self, parent: SparseLevel, prev: FrameState) -> LevelContext:
        d = parent.level
        children = upscale(parent)
        rows, index = child_layout(parent)
        temporal = self.coarse_temporal(parent, prev.voxels(d)) if self.config.coarse else None
        features = self.fuse_and_broadcast(self.spatial_prior(parent), temporal, parent)
        if self.config.fine:
            features = self.final_feature(features, self.fine_temporal(children, prev.level(d + 1)))
        return LevelContext(parent, children, rows, index, features)

    def even_features(self, ctx: LevelContext) -> Tensor:
        return gather_rows(ctx.features.values, ctx.even_rows)

    def odd_features(self, ctx: LevelContext, even_codes: np.ndarray) -> Tensor:
        """Odd-child features, fused with the even siblings' context when enabled."""
        odd = ctx.odd_rows
        base = gather_rows(ctx.features.values, odd)
        if not self.config.sibling:
            return base
        even = ctx.even_rows
        even_codes = np.asarray(even_codes).reshape(-1)
        if even_codes.size != even.size:
            raise ShapeError(f"{even_codes.size} even codes for {even.size} even children")
        per_parent = self.sibling_context(ctx.parent_row[even], ctx.child_index[even], even_codes, len(ctx.parent))
        return add(base, gather_rows(per_parent, ctx.parent_row[odd]))

    # -- heads ----------------------------------------------------------

    def _head(self, name: str, x: Tensor) -> Tensor:
        hidden = relu(linear(x, self[f"{name}.fc1.weight"], self[f"{name}.fc1.bias"]))
        return linear(hidden, self[f"{name}.fc2.weight"], self[f"{name}.fc2.bias"])

    def logits_s0(self, features: Tensor) -> Tensor:
        return self._head("head0", features)

    def logits_s1(self, features: Tensor, s0) -> Tensor:
        return self._head("head1", add(features, embedding_lookup(self["s0.embed"], s0)))

    def predict_s0(self, features: Tensor) -> np.ndarray:
        with no_grad():
            return softmax(self.logits_s0(features).data)

    def predict_s1(self, features: Tensor, s0) -> np.ndarray:
        with no_grad():
            return softmax(self.logits_s1(features, s0).data)

    # -- training objective ---------------------------------------------

    def _group_bits(self, features: Tensor, codes: np.ndarray) -> Tensor:
        s0, s1 = split_symbols(codes)
        n = float(codes.size)
        bits0 = scale(softmax_cross_entropy(self.logits_s0(features), s0), n)
        bits1 = scale(softmax_cross_entropy(self.logits_s1(features, s0), s1), n)
        return add(bits0, bits1)

    def level_bits(self, ctx: LevelContext, codes: np.ndarray) -> Tensor | None:
        """Total code length in bits of the children's true codes, or None without children."""
        codes = np.asarray(codes, dtype=np.int64).reshape(-1)
        if codes.size != len(ctx.children):
            raise ShapeError(f"{codes.size} codes for {len(ctx.children)} children")
        total: Tensor | None = None
        even, odd = ctx.even_rows, ctx.odd_rows
        if even.size:
            total = self._group_bits(self.even_features(ctx), codes[even])
        if odd.size:
            bits = self._group_bits(self.odd_features(ctx, codes[even]), codes[odd])
            total = bits if total is None else add(total, bits)
        return total

    def frame_loss(self, pyramid: FramePyramid, prev: FrameState) -> tuple[Tensor | None, int]:
        """Mean bits per coded occupancy code with ground-truth contexts; (None, 0) when nothing is coded."""
        prev.check_depth(pyramid.depth)
        total: Tensor | None = None
        for d in range(pyramid.depth - 1):
            ctx = self.level_context(pyramid.level(d), prev)
            bits = self.level_bits(ctx, pyramid.level(d + 1).codes)
            if bits is not None:
                total = bits if total is None else add(total, bits)
        n = pyramid.num_coded
        if total is None or n == 0:
            return None, 0
        return scale(total, 1.0 / n), n
