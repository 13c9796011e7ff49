"""Generator and pixel-wise (n+1)-class discriminator.

Generator: uniform noise -> dense projection to ``base_maps`` feature maps
at 1/16 of the tile size -> four 4x4 stride-2 transposed convolutions
(128, 64, 32, C maps). ReLU everywhere except the Tanh output. With C=1 the
feature-map sequence is (256, 128, 64, 32, 1).

Discriminator: encoder of four 4x4 stride-2 convolutions (32, 64, 128, 256
maps), decoder of three stride-2 transposed convolutions (128, 64, 32), and
a stride-2 transposed-convolution head producing K = 4 logit maps
(background, crop, weed, fake) at the input resolution. LeakyReLU(0.2)
after every hidden layer; no batch norm on the first encoder layer or the
head.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ops
from .core.ops import RunningStats
from .core.prng import Prng
from .core.tensor import GradientTape, Tensor
from .errors import ConfigError, ShapeError

NUM_REAL_CLASSES = 3
FAKE_CLASS = 3
CLASS_NAMES = ("background", "crop", "weed", "fake")
INIT_STD = 0.02
KERNEL, STRIDE, PADDING = 4, 2, 1


@dataclass(frozen=True)
class GeneratorSpec:
    out_channels: int = 1
    tile_h: int = 32
    tile_w: int = 32
    noise_dim: int = 100
    base_maps: int = 256
    up_maps: tuple = (128, 64, 32)

    @property
    def factor(self) -> int:
        return 2 ** (len(self.up_maps) + 1)

    @property
    def feature_maps(self) -> tuple:
        return (self.base_maps, *self.up_maps, self.out_channels)

    def validate(self):
        f = self.factor
        if self.tile_h % f or self.tile_w % f or self.tile_h <= 0 or self.tile_w <= 0:
            raise ConfigError(f"generator tile {self.tile_h}x{self.tile_w} must be a positive multiple of {f}")
        if self.out_channels < 1 or self.noise_dim < 1:
            raise ConfigError("generator needs positive out_channels and noise_dim")


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 2
    encoder_maps: tuple = (32, 64, 128, 256)
    decoder_maps: tuple = (128, 64, 32)
    num_classes: int = NUM_REAL_CLASSES + 1
    alpha: float = 0.2

    @property
    def factor(self) -> int:
        return 2 ** len(self.encoder_maps)

    def validate(self):
        if len(self.encoder_maps) != len(self.decoder_maps) + 1:
            raise ConfigError("discriminator encoder depth must equal decoder depth + 1")
        if self.in_channels < 1:
            raise ConfigError("discriminator needs at least one input channel")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"leaky slope must lie in (0, 1), got {self.alpha}")


@dataclass
class NetworkParams:
    """Named trainable tensors plus the running statistics of each norm layer."""

    spec: object
    tensors: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)

    def watch(self, tape: GradientTape) -> dict:
        return tape.watch_all(self.tensors)

    def constants(self) -> dict:
        return {k: Tensor(v) for k, v in self.tensors.items()}

    def copy(self):
        return type(self)(
            self.spec,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: RunningStats(s.mean.copy(), s.var.copy()) for k, s in self.running.items()},
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


class GeneratorParams(NetworkParams):
    pass


class DiscriminatorParams(NetworkParams):
    pass


def _add_bn(tensors, running, name, channels):
    tensors[f"{name}.gamma"] = np.ones(channels, dtype=np.float32)
    tensors[f"{name}.beta"] = np.zeros(channels, dtype=np.float32)
    running[name] = RunningStats.fresh(channels)


def build_generator(spec: GeneratorSpec, prng: Prng) -> GeneratorParams:
    spec.validate()
    h0, w0 = spec.tile_h // spec.factor, spec.tile_w // spec.factor
    t, r = {}, {}
    t["proj.w"] = prng.normal((spec.noise_dim, spec.base_maps * h0 * w0), std=INIT_STD)
    t["proj.b"] = np.zeros(spec.base_maps * h0 * w0, dtype=np.float32)
    _add_bn(t, r, "proj", spec.base_maps)
    maps = spec.feature_maps
    names = [f"up{i + 1}" for i in range(len(spec.up_maps))] + ["out"]
    for name, cin, cout in zip(names, maps[:-1], maps[1:]):
        t[f"{name}.w"] = prng.normal((cin, cout, KERNEL, KERNEL), std=INIT_STD)
        t[f"{name}.b"] = np.zeros(cout, dtype=np.float32)
        if name != "out":
            _add_bn(t, r, name, cout)
    return GeneratorParams(spec, t, r)


def generator_forward(params: GeneratorParams, noise, mode: str = "infer",
                      weights: Optional[dict] = None, update_running: bool = True) -> Tensor:
    """Map noise (N, noise_dim) to images (N, C, tile_h, tile_w) in (-1, 1)."""
    spec = params.spec
    noise = noise if isinstance(noise, Tensor) else Tensor(noise)
    if noise.data.ndim != 2 or noise.shape[1] != spec.noise_dim:
        raise ShapeError(f"noise must be (N, {spec.noise_dim}), got {noise.shape}")
    w = params.constants() if weights is None else weights
    n = noise.shape[0]
    h0, w0 = spec.tile_h // spec.factor, spec.tile_w // spec.factor

    x = ops.dense(noise, w["proj.w"], w["proj.b"])
    x = ops.reshape(x, (n, spec.base_maps, h0, w0))
    x = ops.batch_norm(x, w["proj.gamma"], w["proj.beta"], params.running["proj"], mode,
                       update_running=update_running)
    x = ops.relu(x)
    for i in range(len(spec.up_maps)):
        name = f"up{i + 1}"
        x = ops.conv2d_transpose(x, w[f"{name}.w"], w[f"{name}.b"], STRIDE, PADDING)
        x = ops.batch_norm(x, w[f"{name}.gamma"], w[f"{name}.beta"], params.running[name], mode,
                           update_running=update_running)
        x = ops.relu(x)
    x = ops.conv2d_transpose(x, w["out.w"], w["out.b"], STRIDE, PADDING)
    return ops.tanh(x)


def build_discriminator(spec: DiscriminatorSpec, prng: Prng) -> DiscriminatorParams:
    spec.validate()
    t, r = {}, {}
    cin = spec.in_channels
    for i, cout in enumerate(spec.encoder_maps):
        name = f"enc{i + 1}"
        t[f"{name}.w"] = prng.normal((cout, cin, KERNEL, KERNEL), std=INIT_STD)
        t[f"{name}.b"] = np.zeros(cout, dtype=np.float32)
        if i > 0:
            _add_bn(t, r, name, cout)
        cin = cout
    for i, cout in enumerate(spec.decoder_maps):
        name = f"dec{i + 1}"
        t[f"{name}.w"] = prng.normal((cin, cout, KERNEL, KERNEL), std=INIT_STD)
        t[f"{name}.b"] = np.zeros(cout, dtype=np.float32)
        _add_bn(t, r, name, cout)
        cin = cout
    t["head.w"] = prng.normal((cin, spec.num_classes, KERNEL, KERNEL), std=INIT_STD)
    t["head.b"] = np.zeros(spec.num_classes, dtype=np.float32)
    return DiscriminatorParams(spec, t, r)


def discriminator_forward(params: DiscriminatorParams, images, mode: str = "infer",
                          weights: Optional[dict] = None, update_running: bool = True,
                          running_rows: Optional[int] = None) -> Tensor:
    """Per-pixel logits (N, K, H, W) for images (N, C, H, W).

    ``running_rows`` limits running-statistic updates to the leading rows,
    so a joint real+fake batch only folds real statistics.
    """
    spec = params.spec
    images = images if isinstance(images, Tensor) else Tensor(images)
    if images.data.ndim != 4:
        raise ShapeError(f"discriminator expects (N, C, H, W), got {images.shape}")
    n, c, h, wd = images.shape
    if c != spec.in_channels:
        raise ShapeError(f"discriminator built for {spec.in_channels} channels, got {c}")
    if h % spec.factor or wd % spec.factor:
        raise ShapeError(f"image extents {h}x{wd} must be multiples of {spec.factor}")
    w = params.constants() if weights is None else weights

    x = images
    for i in range(len(spec.encoder_maps)):
        name = f"enc{i + 1}"
        x = ops.conv2d(x, w[f"{name}.w"], w[f"{name}.b"], STRIDE, PADDING)
        if i > 0:
            x = ops.batch_norm(x, w[f"{name}.gamma"], w[f"{name}.beta"], params.running[name], mode,
                               update_running=update_running, running_rows=running_rows)
        x = ops.leaky_relu(x, spec.alpha)
    for i in range(len(spec.decoder_maps)):
        name = f"dec{i + 1}"
        x = ops.conv2d_transpose(x, w[f"{name}.w"], w[f"{name}.b"], STRIDE, PADDING)
        x = ops.batch_norm(x, w[f"{name}.gamma"], w[f"{name}.beta"], params.running[name], mode,
                           update_running=update_running, running_rows=running_rows)
        x = ops.leaky_relu(x, spec.alpha)
    return ops.conv2d_transpose(x, w["head.w"], w["head.b"], STRIDE, PADDING)
