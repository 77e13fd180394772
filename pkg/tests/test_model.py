from __future__ import annotations

import numpy as np
import pytest

from hintpc.core.config import CodecConfig
from hintpc.core.errors import ConfigError, ContractError
from hintpc.core.geom import SortedVoxelSet, build_sorted_set, neighborhood
from hintpc.core.model import (
    EVEN_GROUP,
    GROUPS,
    ODD_GROUP,
    FeatureMap,
    HintModel,
    existence_map,
    relative_position,
    split_symbols,
)
from hintpc.core.nn import Tensor
from hintpc.core.pyramid import FrameState, SparseLevel, build_pyramid, upscale
from hintpc.core.synthetic import make_synthetic_sequence


def _model(**kw) -> HintModel:
    base = dict(depth=5, vd=7, vfine=27, channels=8, hidden=8, seed=3)
    base.update(kw)
    return HintModel(CodecConfig(**base))


def _frames(kind="jitter", depth=5):
    return make_synthetic_sequence(kind, 2, density=1.0, seed=1, depth=depth)


def test_groups_partition_children():
    assert sorted(EVEN_GROUP + ODD_GROUP) == list(range(8))
    # No even child shares a face with another even child.
    pos = relative_position(EVEN_GROUP)
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.abs(pos[i] - pos[j]).sum() == 2


def test_split_symbols():
    s0, s1 = split_symbols([0x00, 0x1F, 0xA3])
    assert s0.tolist() == [0, 15, 3]
    assert s1.tolist() == [0, 1, 10]


def test_zero_init_heads_predict_uniform():
    model = _model()
    pyr = build_pyramid(_frames()[0], 5)
    ctx = model.level_context(pyr.level(2), FrameState.empty())
    probs = model.predict_s0(model.even_features(ctx))
    assert np.allclose(probs, 1 / 16)
    loss, n = model.frame_loss(pyr, FrameState.empty())
    assert n == pyr.num_coded
    assert loss.item() == pytest.approx(8.0, abs=1e-4)


def test_existence_map_matches_direct_membership():
    frames = _frames("translate")
    cur, prev = build_pyramid(frames[1], 5), build_pyramid(frames[0], 5)
    parent = cur.level(3)
    spec = neighborhood(27)
    z = existence_map(parent, prev.level(3).voxels, spec)
    assert z.shape == (len(parent), 54)
    here = {tuple(v) for v in parent.coords.tolist()}
    there = {tuple(v) for v in prev.level(3).coords.tolist()}
    for row, center in zip(z, parent.coords.tolist()):
        for j, off in enumerate(spec.offsets.tolist()):
            q = tuple(c + o for c, o in zip(center, off))
            assert row[j] == (q in here)
            assert row[27 + j] == (q in there)


def test_fine_feature_is_constant_without_previous_frame():
    model = _model()
    pyr = build_pyramid(_frames()[0], 5)
    children = pyr.level(3).voxels
    fine = model.fine_temporal(children, FrameState.empty().level(3))
    assert np.allclose(fine.values.data, fine.values.data[0])


def test_window_size_must_match_config():
    model = _model()
    pyr = build_pyramid(_frames()[0], 5)
    with pytest.raises(ConfigError):
        model.coarse_temporal(pyr.level(2), FrameState.empty().voxels(2), neighborhood(27))


def test_sibling_context_rejects_odd_children():
    model = _model()
    with pytest.raises(ContractError):
        model.sibling_context(np.array([0]), np.array([1]), np.array([5]), 1)


def test_sibling_context_is_mean_of_projected_descriptors():
    model = _model()
    store = model.store
    store["sibling.embed"].data[:] = 0.0
    store["sibling.proj"].data[:] = 0.0
    c = model.config.channels
    # Project only the relative position (last three input columns) onto the first channels.
    store["sibling.proj"].data[0, c] = 1.0
    store["sibling.proj"].data[1, c + 1] = 1.0
    store["sibling.proj"].data[2, c + 2] = 1.0
    out = model.sibling_context(np.array([0, 0, 1]), np.array([3, 5, 6]), np.array([1, 2, 3]), 3)
    assert out.data[0, :3].tolist() == pytest.approx([1.0, 0.5, 0.5])
    assert out.data[1, :3].tolist() == pytest.approx([0.0, 1.0, 1.0])
    assert np.all(out.data[2] == 0.0)


def _randomize_outputs(model: HintModel, seed: int) -> None:
    rng = np.random.default_rng(seed)
    for name in ("head0.fc2.weight", "head0.fc2.bias", "head1.fc2.weight", "head1.fc2.bias", "sibling.embed", "sibling.proj"):
        p = model[name]
        p.data = rng.normal(size=p.data.shape).astype(np.float32)


def _regrow_odd_subtrees(leaves: SortedVoxelSet, depth: int, d: int) -> SortedVoxelSet:
    """The same frame with every odd child at level d+1 given a different subtree below it."""
    child = build_pyramid(leaves, depth).level(d + 1)
    odd = ~GROUPS.is_even((child.keys & np.uint64(7)).astype(np.int64))
    keep = leaves.keys[np.isin(leaves.keys >> np.uint64(3 * (depth - d - 1)), child.keys[~odd])]
    codes = child.codes[odd] ^ np.uint8(0xFF)
    codes[codes == 0] = 1
    grand = upscale(SparseLevel.from_arrays(d + 1, child.keys[odd], codes))
    fill = grand.keys << np.uint64(3 * (depth - d - 2))
    return SortedVoxelSet(np.union1d(keep, fill), depth)


@pytest.mark.parametrize("d", [2, 3])
def test_group_predictions_ignore_undecoded_data(d):
    model = _model()
    _randomize_outputs(model, d)
    frames = _frames()
    prev = FrameState(build_pyramid(frames[0], 5))
    a = build_pyramid(frames[1], 5)
    b = build_pyramid(_regrow_odd_subtrees(frames[1], 5, d), 5)

    ctx_a, ctx_b = model.level_context(a.level(d), prev), model.level_context(b.level(d), prev)
    even, odd = ctx_a.even_rows, ctx_a.odd_rows
    codes_a, codes_b = a.level(d + 1).codes.astype(np.int64), b.level(d + 1).codes.astype(np.int64)
    assert even.size and odd.size
    assert np.array_equal(a.level(d + 1).keys, b.level(d + 1).keys)
    assert np.array_equal(codes_a[even], codes_b[even])
    assert np.all(codes_a[odd] != codes_b[odd])
    assert not a.leaves.same_voxels(b.leaves)

    # Even children see nothing of the odd codes or anything below level d+1.
    s0 = codes_a[even] & 15
    assert np.array_equal(model.predict_s0(model.even_features(ctx_a)), model.predict_s0(model.even_features(ctx_b)))
    assert np.array_equal(model.predict_s1(model.even_features(ctx_a), s0), model.predict_s1(model.even_features(ctx_b), s0))

    # Odd children see the even codes and nothing else from level d+1 on.
    odd_a = model.odd_features(ctx_a, codes_a[even])
    odd_b = model.odd_features(ctx_b, codes_b[even])
    s0 = codes_a[odd] & 15
    assert np.array_equal(model.predict_s0(odd_a), model.predict_s0(odd_b))
    assert np.array_equal(model.predict_s1(odd_a, s0), model.predict_s1(odd_b, s0))


def test_odd_predictions_depend_on_even_codes():
    model = _model()
    _randomize_outputs(model, 1)
    pyr = build_pyramid(_frames()[0], 5)
    ctx = model.level_context(pyr.level(2), FrameState.empty())
    even_codes = pyr.level(3).codes[ctx.even_rows].astype(np.int64)
    a = model.predict_s0(model.odd_features(ctx, even_codes))
    b = model.predict_s0(model.odd_features(ctx, 256 - even_codes))
    assert not np.allclose(a, b)


def _prior_model() -> HintModel:
    model = _model(channels=4, hidden=4)
    for k in range(2):
        model[f"prior.block{k}.weight"].data = np.eye(4, dtype=np.float32)
        model[f"prior.block{k}.bias"].data[:] = 0.0
    model["prior.embed"].data = np.abs(model["prior.embed"].data)
    return model


def test_isolated_parent_follows_its_own_embedding():
    model = _prior_model()
    # No two voxels share a face, so every neighbor mean is zero.
    level = SparseLevel.from_arrays(2, build_sorted_set([(0, 0, 0), (2, 2, 2), (3, 0, 1)], 2).keys, [1, 7, 200])
    out = model.spatial_prior(level).values.data
    # h + relu(h) twice on a non-negative embedding.
    assert np.allclose(out, 4.0 * model["prior.embed"].data[level.codes])


def test_isomorphic_neighborhoods_give_identical_features():
    model = _model()
    voxels = build_sorted_set([(0, 0, 0), (1, 0, 0), (5, 5, 5), (6, 5, 5), (2, 6, 1), (2, 6, 2)], 3)
    out = model.spatial_prior(SparseLevel.from_arrays(3, voxels.keys, [9] * 6)).values.data
    assert np.allclose(out, out[0], atol=1e-6)
    lone = model.spatial_prior(SparseLevel.from_arrays(3, voxels.keys[:1], [9])).values.data
    assert not np.allclose(lone[0], out[0])


def test_broadcast_rows_follow_parent_coordinates():
    model = _model()
    parent = build_pyramid(_frames()[0], 5).level(3)
    spatial = model.spatial_prior(parent)
    out = model.fuse_and_broadcast(spatial, None, parent)
    children = upscale(parent)
    assert out.level == 4 and len(out) == len(children)
    row_of = {tuple(c): i for i, c in enumerate(parent.coords.tolist())}
    rows = [row_of[tuple(c)] for c in (children.coords >> 1).tolist()]
    assert np.array_equal(out.values.data, spatial.values.data[rows])


def test_zero_temporal_features_are_the_identity():
    model = _model()
    parent = build_pyramid(_frames()[0], 5).level(2)
    spatial = model.spatial_prior(parent)
    plain = model.fuse_and_broadcast(spatial, None, parent)
    zero_t = FeatureMap(2, Tensor(np.zeros_like(spatial.values.data)))
    assert np.array_equal(model.fuse_and_broadcast(spatial, zero_t, parent).values.data, plain.values.data)
    zero_fine = FeatureMap(3, Tensor(np.zeros_like(plain.values.data)))
    assert np.array_equal(model.final_feature(plain, zero_fine).values.data, plain.values.data)


def test_ablated_variant_shares_parameters():
    model = _model()
    base = model.variant(model.config.spatial_only())
    assert base.store is model.store
    assert base.fingerprint() == model.fingerprint()
    pyr = build_pyramid(_frames()[0], 5)
    loss, _ = base.frame_loss(pyr, FrameState.empty())
    assert loss.item() == pytest.approx(8.0, abs=1e-4)


def test_share_embedding_drops_table():
    assert _model(share_embedding=True).num_parameters == _model().num_parameters - 256 * 8
