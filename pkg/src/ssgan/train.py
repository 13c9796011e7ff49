"""Adversarial training loop and the supervised-only baseline."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .core import ops
from .core.adam import AdamState, adam_step
from .core.prng import Prng, prng_uniform
from .core.tensor import GradientTape, Tensor, backward
from .data.dataset import Dataset, sample_batch
from .data.images import selection_channels
from .data.split import relabel
from .errors import ConfigError, NonFiniteError
from .losses import (
    IGNORE_LABEL,
    LossBreakdown,
    discriminator_loss,
    generator_loss,
    supervised_loss,
    unsupervised_fake_loss,
    unsupervised_real_loss,
)
from .models import (
    DiscriminatorParams,
    DiscriminatorSpec,
    GeneratorParams,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
)

log = logging.getLogger(__name__)

MODES = ("ssgan", "supervised_baseline")
D_BATCHING = ("joint", "separate")
LOG_KEYS = ("step", "sup", "unsup_real", "unsup_fake", "d_total", "g_loss", "wall_ms")


@dataclass
class TrainConfig:
    selection: str = "Red+NIR"
    labeled_fraction: float = 0.3
    epochs: int = 1
    steps_per_epoch: int = 500
    batch_size: int = 32
    tile_h: int = 32
    tile_w: int = 32
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_u: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    mode: str = "ssgan"
    noise_dim: int = 100
    unsup_on_labeled: bool = True
    d_batching: str = "joint"

    def validate(self) -> "TrainConfig":
        selection_channels(self.selection)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.lambda_u < 0:
            raise ConfigError("lambda_u must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.d_batching not in D_BATCHING:
            raise ConfigError(f"d_batching must be one of {D_BATCHING}, got {self.d_batching!r}")
        if self.epochs < 0 or self.steps_per_epoch < 0 or self.checkpoint_every < 0:
            raise ConfigError("epochs, steps_per_epoch and checkpoint_every must be non-negative")
        return self

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def channels(self) -> int:
        return len(selection_channels(self.selection))

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class TrainerState:
    config: TrainConfig
    disc: DiscriminatorParams
    adam_d: AdamState
    gen: Optional[GeneratorParams] = None
    adam_g: Optional[AdamState] = None
    step: int = 0


@dataclass
class StepBatches:
    labeled_images: Tensor
    labeled_masks: np.ndarray
    unlabeled_images: Optional[Tensor] = None
    noise_d: Optional[Tensor] = None
    noise_g: Optional[Tensor] = None


def generator_spec(config: TrainConfig) -> GeneratorSpec:
    return GeneratorSpec(out_channels=config.channels, tile_h=config.tile_h, tile_w=config.tile_w,
                         noise_dim=config.noise_dim)


def discriminator_spec(config: TrainConfig) -> DiscriminatorSpec:
    return DiscriminatorSpec(in_channels=config.channels)


class Streams:
    """Independent random streams so both training modes draw identical batches."""

    def __init__(self, seed: int):
        root = Prng(seed)
        self.init_gen = root.spawn(1)
        self.init_disc = root.spawn(2)
        self.labeled = root.spawn(3)
        self.unlabeled = root.spawn(4)
        self.noise = root.spawn(5)


def init_state(config: TrainConfig, streams: Optional[Streams] = None) -> TrainerState:
    config.validate()
    streams = streams or Streams(config.seed)
    disc = build_discriminator(discriminator_spec(config), streams.init_disc)
    state = TrainerState(config, disc, AdamState.for_params(disc.tensors))
    if config.mode == "ssgan":
        state.gen = build_generator(generator_spec(config), streams.init_gen)
        state.adam_g = AdamState.for_params(state.gen.tensors)
    return state


def _check(value: Tensor, name: str, step: int):
    if not value.is_finite():
        raise NonFiniteError(f"non-finite {name} at step {step}", name=name, step=step)


def _combined_real_loss(parts):
    """Pixel-weighted mean of unsup_real over several logit batches."""
    total_px = sum(lg.data[:, 0].size for lg in parts)
    return ops.linear_combination(
        [(lg.data[:, 0].size / total_px, unsupervised_real_loss(lg)) for lg in parts])


def _adversarial_d_losses(disc, wd, batches: StepBatches, fake: Tensor, config: TrainConfig):
    """(sup, unsup_real, unsup_fake) for the discriminator update.

    ``joint`` batching runs labeled, unlabeled and generated tiles through
    one forward pass, so batch normalization sees a single set of
    statistics and the running statistics track that same mixture (what
    the network is trained to expect). ``separate`` runs three passes and
    never folds fake statistics.
    """
    real = [batches.labeled_images]
    if batches.unlabeled_images is not None:
        real.append(batches.unlabeled_images)
    sizes = [t.shape[0] for t in real] + [fake.shape[0]]
    if config.d_batching == "joint":
        logits = discriminator_forward(disc, ops.concat_rows(real + [Tensor(fake.data)]), "train", wd)
        bounds = np.cumsum([0] + sizes)
        parts = [ops.slice_rows(logits, bounds[i], bounds[i + 1]) for i in range(len(sizes))]
    else:
        parts = [discriminator_forward(disc, t, "train", wd) for t in real]
        parts.append(discriminator_forward(disc, fake, "train", wd, update_running=False))
    lab_logits, fake_logits = parts[0], parts[-1]
    real_parts = parts[:-1] if config.unsup_on_labeled or len(parts) == 2 else parts[1:-1]
    sup = supervised_loss(lab_logits, batches.labeled_masks)
    return sup, _combined_real_loss(real_parts), unsupervised_fake_loss(fake_logits)


def train_step(state: TrainerState, batches: StepBatches, config: Optional[TrainConfig] = None) -> LossBreakdown:
    """One discriminator update followed by one generator update."""
    config = config or state.config
    step = state.step + 1
    disc, gen = state.disc, state.gen
    if not (batches.labeled_masks != IGNORE_LABEL).any():
        raise ConfigError("labeled batch carries no labeled pixel")
    adversarial = config.mode == "ssgan" and gen is not None

    tape = GradientTape()
    wd = disc.watch(tape)
    unsup_real = unsup_fake = 0.0
    if adversarial and config.lambda_u > 0:
        fake = generator_forward(gen, batches.noise_d, "train")
        sup, ur, uf = _adversarial_d_losses(disc, wd, batches, fake, config)
        for value, name in ((sup, "sup"), (ur, "unsup_real"), (uf, "unsup_fake")):
            _check(value, name, step)
        d_total = discriminator_loss(sup, ur, uf, config.lambda_u)
        unsup_real, unsup_fake = ur.item(), uf.item()
    else:
        lab_logits = discriminator_forward(disc, batches.labeled_images, "train", wd)
        sup = supervised_loss(lab_logits, batches.labeled_masks)
        _check(sup, "sup", step)
        d_total = sup
        if adversarial:
            # report-only terms; running statistics and gradients untouched
            fake = generator_forward(gen, batches.noise_d, "train")
            consts = disc.constants()
            real_parts = [Tensor(lab_logits.data)]
            if batches.unlabeled_images is not None:
                real_parts.append(discriminator_forward(disc, batches.unlabeled_images, "train", consts,
                                                        update_running=False))
            fake_logits = discriminator_forward(disc, fake, "train", consts, update_running=False)
            unsup_real = _combined_real_loss(real_parts).item()
            unsup_fake = unsupervised_fake_loss(fake_logits).item()
    _check(d_total, "d_total", step)
    grads = backward(tape, d_total)
    adam_step(disc.tensors, grads, state.adam_d, config.lr, config.beta1, config.beta2, config.adam_eps)

    g_value = 0.0
    if adversarial:
        tape = GradientTape()
        wg = gen.watch(tape)
        fake = generator_forward(gen, batches.noise_g, "train", wg)
        logits = discriminator_forward(disc, fake, "train", disc.constants(), update_running=False)
        g_loss = generator_loss(logits)
        _check(g_loss, "g_loss", step)
        grads = backward(tape, g_loss)
        adam_step(gen.tensors, grads, state.adam_g, config.lr, config.beta1, config.beta2, config.adam_eps)
        g_value = g_loss.item()
        if not gen.all_finite():
            raise NonFiniteError(f"generator parameters became non-finite at step {step}",
                                 name="generator", step=step)
    if not disc.all_finite():
        raise NonFiniteError(f"discriminator parameters became non-finite at step {step}",
                             name="discriminator", step=step)
    state.step = step
    sup_v = sup.item()
    return LossBreakdown(sup=sup_v, unsup_real=float(unsup_real), unsup_fake=float(unsup_fake),
                         d_total=float(d_total.item()), g_loss=float(g_value))


def draw_batches(dataset: Dataset, config: TrainConfig, streams: Streams, adversarial: bool) -> StepBatches:
    """Sample one step's inputs; every stream advances the same way in both modes."""
    for _ in range(100):
        lab = sample_batch(dataset, "labeled", config.selection, streams.labeled, config.batch_size,
                           config.tile_h, config.tile_w)
        if (lab.masks != IGNORE_LABEL).any():
            break
    else:
        raise ConfigError("could not draw a labeled batch with annotated pixels")
    unl = None
    if dataset.pool_ids("unlabeled"):
        unl = sample_batch(dataset, "unlabeled", config.selection, streams.unlabeled, config.batch_size,
                           config.tile_h, config.tile_w).images
    extents = (config.batch_size, config.noise_dim)
    noise_d = prng_uniform(streams.noise, extents, -1.0, 1.0)
    noise_g = prng_uniform(streams.noise, extents, -1.0, 1.0)
    if not adversarial:
        unl = None
    return StepBatches(lab.images, lab.masks, unl, noise_d, noise_g)


def prepare_dataset(config: TrainConfig, dataset_dir) -> Dataset:
    """Load the dataset; re-draw the labeled subset if the fraction differs."""
    ds = Dataset(dataset_dir)
    if abs(ds.split.labeled_fraction - config.labeled_fraction) > 1e-12:
        split = relabel(ds.split.train, ds.split.test, config.labeled_fraction,
                        Prng(ds.split.seed ^ 0x5EED), ds.split.seed)
        ds = Dataset(dataset_dir, split)
    if not ds.pool_ids("labeled"):
        raise ConfigError("labeled pool is empty")
    for image_id in ds.ids[:1]:
        ds.stacked(image_id, config.selection)
    return ds


@dataclass
class TrainResult:
    state: TrainerState
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    dataset: Optional[Dataset] = None


def train(config: TrainConfig, dataset_dir, out_dir=None, dataset: Optional[Dataset] = None) -> TrainResult:
    """Run ``epochs * steps_per_epoch`` steps; log one JSON line per step.

    With ``out_dir`` set, writes ``metrics.jsonl``, periodic checkpoints
    ``step_XXXXXX.ssgk`` every ``checkpoint_every`` steps and ``final.ssgk``.
    """
    from .checkpoint import Checkpoint, save_checkpoint

    config.validate()
    ds = dataset or prepare_dataset(config, dataset_dir)
    streams = Streams(config.seed)
    state = init_state(config, streams)
    adversarial = config.mode == "ssgan"
    result = TrainResult(state, dataset=ds)
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")
    try:
        for _ in range(config.total_steps):
            t0 = time.perf_counter()
            batches = draw_batches(ds, config, streams, adversarial)
            losses = train_step(state, batches, config)
            entry = {"step": state.step, **losses.as_dict(),
                     "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
            result.log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if out_dir is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                path = os.path.join(out_dir, f"step_{state.step:06d}.ssgk")
                save_checkpoint(path, Checkpoint.from_state(state))
                result.checkpoints.append(path)
            if state.step % 50 == 0:
                log.info("step %d sup=%.4f d_total=%.4f g=%.4f", state.step, losses.sup,
                         losses.d_total, losses.g_loss)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        path = os.path.join(out_dir, "final.ssgk")
        save_checkpoint(path, Checkpoint.from_state(state))
        result.checkpoints.append(path)
    return result


def train_supervised_baseline(config: TrainConfig, dataset_dir, out_dir=None,
                              dataset: Optional[Dataset] = None) -> TrainResult:
    """Discriminator-only training on labeled tiles (lambda_u = 0, no generator)."""
    return train(replace(config, mode="supervised_baseline", lambda_u=0.0), dataset_dir, out_dir, dataset)
