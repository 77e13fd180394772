"""Training of the entropy model on ground-truth contexts.

Each sample is one frame together with the previous ground-truth frame of its
sequence. No range coder runs here; the loss is the cross-entropy of the true
occupancy codes in bits per code.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_model
from .config import TrainConfig
from .errors import HintError, TrainingDivergedError
from .geom import SortedVoxelSet
from .model import HintModel
from .nn import sgd_adam_step
from .pyramid import FramePyramid, FrameState, build_pyramid

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Sample:
    pyramid: FramePyramid
    prev: FrameState
    sequence: int
    frame: int


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    steps: int = 0
    checkpoint: Path | None = None

    @property
    def final_loss(self) -> float:
        return self.epoch_means[-1] if self.epoch_means else math.nan


def build_samples(sequences: Sequence[Sequence[SortedVoxelSet]], depth: int) -> list[Sample]:
    """Pair every frame with its predecessor; the first frame of a sequence gets an empty state."""
    samples: list[Sample] = []
    for s, frames in enumerate(sequences):
        prev = FrameState.empty()
        for t, leaves in enumerate(frames):
            pyramid = build_pyramid(leaves, depth)
            samples.append(Sample(pyramid, prev, s, t))
            prev = FrameState(pyramid)
    if not samples:
        raise HintError("training dataset is empty")
    return samples


def train(
    dataset: Sequence[Sequence[SortedVoxelSet]] | Sequence[Sample],
    model: HintModel,
    train_config: TrainConfig,
    epochs: int | None = None,
    *,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Adam over mean bits per occupancy code; saves a checkpoint after every epoch when configured."""
    if not len(dataset):
        raise HintError("training dataset is empty")
    samples = list(dataset) if isinstance(dataset[0], Sample) else build_samples(dataset, model.config.depth)
    epochs = epochs or train_config.epochs
    rng = np.random.default_rng(train_config.seed)
    store = model.store
    result = TrainResult()

    for epoch in range(epochs):
        order = rng.permutation(len(samples)) if train_config.shuffle else np.arange(len(samples))
        epoch_losses: list[float] = []
        for i in order.tolist():
            sample = samples[i]
            store.zero_grad()
            loss, n_codes = model.frame_loss(sample.pyramid, sample.prev)
            if loss is None:
                log.debug("sequence %d frame %d has no coded levels; skipped", sample.sequence, sample.frame)
                continue
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss is {value} at step {store.step + 1} (epoch {epoch + 1}, sequence {sample.sequence}, "
                    f"frame {sample.frame}, {n_codes} codes, lr={train_config.lr}, "
                    f"last finite loss {result.losses[-1] if result.losses else 'n/a'})"
                )
            loss.backward()
            sgd_adam_step(store, train_config.lr)
            result.losses.append(value)
            epoch_losses.append(value)
            result.steps += 1
            if on_step is not None:
                on_step(store.step, value)
            if store.step % train_config.log_every == 0:
                log.info("step %d: %.4f bits/code", store.step, value)

        mean = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        result.epoch_means.append(mean)
        log.info("epoch %d/%d: mean %.4f bits/code over %d frames", epoch + 1, epochs, mean, len(epoch_losses))
        if train_config.checkpoint:
            result.checkpoint = save_model(train_config.checkpoint, model)
    return result
