from __future__ import annotations

import math

import numpy as np
import pytest

from hintpc.core.checkpoint import load_model
from hintpc.core.codec import encode_sequence
from hintpc.core.config import CodecConfig, TrainConfig
from hintpc.core.errors import HintError, TrainingDivergedError
from hintpc.core.geom import build_sorted_set
from hintpc.core.model import HintModel
from hintpc.core.pyramid import FrameState, build_pyramid
from hintpc.core.synthetic import make_synthetic_sequence
from hintpc.core.train import build_samples, train


def _model(**kw) -> HintModel:
    base = dict(depth=5, vd=7, vfine=27, channels=8, hidden=16, seed=0)
    base.update(kw)
    return HintModel(CodecConfig(**base))


def test_build_samples_links_previous_frames():
    frames = make_synthetic_sequence("translate", 3, depth=5)
    samples = build_samples([frames, frames[:1]], 5)
    assert [(s.sequence, s.frame) for s in samples] == [(0, 0), (0, 1), (0, 2), (1, 0)]
    assert samples[0].prev.is_empty and samples[3].prev.is_empty
    assert samples[2].prev.digest() == FrameState(samples[1].pyramid).digest()
    with pytest.raises(HintError):
        build_samples([], 5)


def test_initial_loss_is_eight_bits():
    frames = make_synthetic_sequence("static", 1, depth=5)
    loss, n = _model().frame_loss(build_samples([frames], 5)[0].pyramid, FrameState.empty())
    assert n > 0
    assert loss.item() == pytest.approx(8.0, abs=1e-4)


def test_loss_decreases():
    frames = make_synthetic_sequence("static", 2, depth=5)
    model = _model()
    result = train([frames], model, TrainConfig(epochs=20, lr=0.02, seed=1))
    assert result.steps == 40
    assert len(result.epoch_means) == 20
    assert result.final_loss < result.epoch_means[0] - 0.1


def test_on_step_callback_and_checkpoint(tmp_path):
    frames = make_synthetic_sequence("jitter", 2, depth=5)
    seen = []
    cfg = TrainConfig(epochs=2, lr=0.01, checkpoint=str(tmp_path / "run.ckpt"))
    model = _model()
    result = train([frames], model, cfg, on_step=lambda step, loss: seen.append((step, loss)))
    assert [s for s, _ in seen] == [1, 2, 3, 4]
    assert result.checkpoint is not None and result.checkpoint.exists()
    assert load_model(result.checkpoint).fingerprint() == model.fingerprint()


def test_divergence_is_reported():
    model = _model()
    model["head0.fc2.bias"].data[:] = np.nan
    frames = make_synthetic_sequence("static", 1, depth=5)
    with pytest.raises(TrainingDivergedError) as info:
        train([frames], model, TrainConfig(epochs=1))
    assert "sequence 0" in str(info.value)


def test_depth_one_frames_are_skipped():
    model = _model(depth=1)
    result = train([[build_sorted_set([(1, 1, 1)], 1)]], model, TrainConfig(epochs=1))
    assert result.steps == 0
    assert math.isnan(result.final_loss)


def test_training_loss_matches_coded_rate():
    frames = make_synthetic_sequence("translate", 3, density=0.5, seed=2, depth=5)
    model = _model()
    train([frames], model, TrainConfig(epochs=5, lr=0.02, seed=0))
    encoded = encode_sequence(frames, model)
    for t in (1, 2):
        loss, n = model.frame_loss(build_pyramid(frames[t], 5), encoded[t - 1].state)
        stats = encoded[t].stats
        assert n == stats.codes
        assert loss.item() < 7.5
        assert loss.item() == pytest.approx(stats.model_bits / n, abs=1e-3)
        assert abs(loss.item() - stats.ideal_bits / n) < 0.01
        assert stats.payload_bits <= 1.001 * stats.ideal_bits + 32


# Same budget for every configuration: 2 sequences x 4 frames x 625 epochs = 5000 steps.
_BUDGET = TrainConfig(epochs=625, lr=3e-3, seed=0)


def _trained_bpp(kind: str, config: CodecConfig) -> float:
    """Mean BPP on a held-out sequence after training on two sequences of the same kind."""
    depth = config.depth
    model = HintModel(config)
    train([make_synthetic_sequence(kind, 4, seed=s, depth=depth) for s in (0, 1)], model, _BUDGET)
    encoded = encode_sequence(make_synthetic_sequence(kind, 4, seed=100, depth=depth), model)
    return float(np.mean([e.stats.bpp for e in encoded]))


_FULL = CodecConfig(depth=5, vd=27, vfine=27, channels=16, hidden=32, seed=0)


@pytest.mark.slow
@pytest.mark.parametrize("kind, ratio", [("translate", 1.0), ("static", 0.95), ("random", 1.01)])
def test_temporal_context_against_spatial_only(kind, ratio):
    full = _trained_bpp(kind, _FULL)
    spatial = _trained_bpp(kind, _FULL.spatial_only())
    assert full <= ratio * spatial


@pytest.mark.slow
def test_sibling_context_does_not_cost_rate():
    base = _FULL.model_copy(update={"coarse": False, "fine": False})
    with_sibling = _trained_bpp("static", base)
    without = _trained_bpp("static", base.model_copy(update={"sibling": False}))
    assert with_sibling <= without


@pytest.mark.slow
def test_overfits_one_repeated_pair():
    frames = make_synthetic_sequence("static", 2, seed=5, depth=6)
    pair = build_samples([frames], 6)[1:]
    result = train(pair, HintModel(CodecConfig(depth=6)), TrainConfig(epochs=2000, lr=1e-3, seed=0))
    assert result.steps == 2000
    assert result.losses[-1] < 1.0
