"""Finite-difference checks for every differentiable op, the losses and a
reduced generator + discriminator stack.

Each case builds a scalar function of named float64 parameters; analytic
gradients from the tape are compared with central differences.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .core import ops
from .core.gradcheck import finite_diff_check
from .core.ops import RunningStats
from .core.prng import Prng
from .core.tensor import Tensor
from .models import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
)

TOLERANCE = 1e-3


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple]
    max_coords: int = None


@dataclass
class GradResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _away_from_kinks(x, margin=0.05):
    """Push values off zero so piecewise-linear ops stay differentiable."""
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _weighted(out, w):
    # a random projection makes every output coordinate matter
    return ops.total(ops.mul(out, Tensor(w)))


def _unary(op, positive=False, kinks=False):
    def build(r):
        x = r.normal(size=(2, 3, 3, 3))
        if positive:
            x = np.abs(x) + 0.5
        if kinks:
            x = _away_from_kinks(x)
        w = r.normal(size=x.shape)
        return (lambda p: _weighted(op(p["x"]), w)), {"x": x}
    return build


def _binary(op):
    def build(r):
        a, b = r.normal(size=(2, 5)), r.normal(size=(2, 5))
        w = r.normal(size=(2, 5))
        return (lambda p: _weighted(op(p["a"], p["b"]), w)), {"a": a, "b": b}
    return build


def _conv(stride, padding):
    def build(r):
        params = {"x": r.normal(size=(2, 2, 6, 6)), "k": r.normal(size=(3, 2, 3, 3)), "b": r.normal(size=3)}
        shape = ops.conv2d(params["x"], params["k"], params["b"], stride, padding).shape
        w = r.normal(size=shape)
        return (lambda p: _weighted(ops.conv2d(p["x"], p["k"], p["b"], stride, padding), w)), params
    return build


def _conv_t(stride, padding):
    def build(r):
        params = {"x": r.normal(size=(2, 3, 3, 3)), "k": r.normal(size=(3, 2, 4, 4)), "b": r.normal(size=2)}
        shape = ops.conv2d_transpose(params["x"], params["k"], params["b"], stride, padding).shape
        w = r.normal(size=shape)
        return (lambda p: _weighted(ops.conv2d_transpose(p["x"], p["k"], p["b"], stride, padding), w)), params
    return build


def _batch_norm_train(r):
    params = {"x": r.normal(size=(6, 3, 2, 2)), "g": r.normal(size=3), "b": r.normal(size=3)}
    w = r.normal(size=(6, 3, 2, 2))
    return (lambda p: _weighted(ops.batch_norm(p["x"], p["g"], p["b"], None, "train"), w)), params


def _batch_norm_infer(r):
    stats = RunningStats(r.normal(size=3), r.uniform(0.5, 2.0, size=3))
    params = {"x": r.normal(size=(4, 3, 2, 2)), "g": r.normal(size=3), "b": r.normal(size=3)}
    w = r.normal(size=(4, 3, 2, 2))
    return (lambda p: _weighted(ops.batch_norm(p["x"], p["g"], p["b"], stats, "infer"), w)), params


def _dense(r):
    params = {"x": r.normal(size=(4, 5)), "w": r.normal(size=(5, 3)), "b": r.normal(size=3)}
    w = r.normal(size=(4, 3))
    return (lambda p: _weighted(ops.dense(p["x"], p["w"], p["b"]), w)), params


def _reductions(r):
    x = r.normal(size=(3, 4))
    mask = r.random(size=(3, 4)) > 0.4
    mask[0, 0] = True
    return (lambda p: ops.linear_combination([
        (0.3, ops.total(p["x"])), (-1.7, ops.mean(ops.square(p["x"]))),
        (2.0, ops.masked_mean(ops.exp(p["x"]), mask)),
    ])), {"x": x}


def _reshape_rows(r):
    a, b = r.normal(size=(2, 3, 2, 2)), r.normal(size=(3, 3, 2, 2))
    w = r.normal(size=(4, 12))

    def fn(p):
        both = ops.concat_rows([p["a"], p["b"]])
        mid = ops.slice_rows(both, 1, 5)
        return _weighted(ops.reshape(mid, (4, 12)), w)

    return fn, {"a": a, "b": b}


def _scale_clamp(r):
    x = _away_from_kinks(r.normal(size=(2, 6)))
    w = r.normal(size=(2, 6))
    return (lambda p: _weighted(ops.clamp_min(ops.scale(p["x"], -1.5), 0.0), w)), {"x": x}


def _channel_ops(r):
    z = r.normal(size=(2, 4, 3, 3))
    labels = r.integers(0, 4, size=(2, 3, 3))
    w = r.normal(size=(2, 4, 3, 3))

    def fn(p):
        lse = ops.logsumexp_channels(p["z"], (0, 2))
        picked = ops.take_channels(p["z"], labels)
        return ops.add(_weighted(ops.softmax_channels(p["z"]), w), ops.mean(ops.sub(lse, picked)))

    return fn, {"z": z}


def _loss(name):
    def build(r):
        z = r.normal(scale=1.5, size=(1, 4, 4, 4))
        mask = r.integers(0, 3, size=(1, 4, 4))
        mask[0, 0, :2] = losses.IGNORE_LABEL
        fns = {
            "sup": lambda p: losses.supervised_loss(p["z"], mask),
            "unsup_real": lambda p: losses.unsupervised_real_loss(p["z"]),
            "unsup_fake": lambda p: losses.unsupervised_fake_loss(p["z"]),
            "generator": lambda p: losses.generator_loss(p["z"]),
        }
        return fns[name], {"z": z}
    return build


def reduced_stack(seed: int = 0):
    """A narrow generator and discriminator with enlarged init weights.

    Returns ``(fn, params)`` where ``fn`` evaluates the generator objective
    through both networks. The fresh 0.02 init makes gradients tiny
    relative to float noise, so weights are scaled up by 10.
    """
    gspec = GeneratorSpec(out_channels=1, tile_h=32, tile_w=32, noise_dim=6, base_maps=8, up_maps=(4, 2))
    dspec = DiscriminatorSpec(in_channels=1, encoder_maps=(2, 2, 2, 2), decoder_maps=(2, 2, 2))
    g = build_generator(gspec, Prng(seed + 1))
    d = build_discriminator(dspec, Prng(seed + 2))
    params = {}
    for prefix, net in (("g", g), ("d", d)):
        for k, v in net.tensors.items():
            params[f"{prefix}/{k}"] = v * 10.0 if k.endswith(".w") else v
    z = np.asarray(Prng(seed + 3).normal((2, 6)), dtype=np.float64)

    def fn(p):
        fake = generator_forward(g, z, "train", {k[2:]: v for k, v in p.items() if k.startswith("g/")},
                                 update_running=False)
        logits = discriminator_forward(d, fake, "train", {k[2:]: v for k, v in p.items() if k.startswith("d/")},
                                       update_running=False)
        return losses.generator_loss(logits)

    return fn, params


CASES = (
    GradCase("add", _binary(ops.add)),
    GradCase("sub", _binary(ops.sub)),
    GradCase("mul", _binary(ops.mul)),
    GradCase("scale+clamp_min", _scale_clamp),
    GradCase("square", _unary(ops.square)),
    GradCase("exp", _unary(ops.exp)),
    GradCase("log", _unary(ops.log, positive=True)),
    GradCase("total+mean+masked_mean+linear_combination", _reductions),
    GradCase("reshape+concat_rows+slice_rows", _reshape_rows),
    GradCase("relu", _unary(ops.relu, kinks=True)),
    GradCase("leaky_relu", _unary(ops.leaky_relu, kinks=True)),
    GradCase("tanh", _unary(ops.tanh)),
    GradCase("softmax+logsumexp+take_channels", _channel_ops),
    GradCase("dense", _dense),
    GradCase("conv2d s1 p1", _conv(1, 1)),
    GradCase("conv2d s2 p1", _conv(2, 1)),
    GradCase("conv2d_transpose s1 p0", _conv_t(1, 0)),
    GradCase("conv2d_transpose s2 p1", _conv_t(2, 1)),
    GradCase("batch_norm train", _batch_norm_train),
    GradCase("batch_norm infer", _batch_norm_infer),
    GradCase("loss sup", _loss("sup")),
    GradCase("loss unsup_real", _loss("unsup_real")),
    GradCase("loss unsup_fake", _loss("unsup_fake")),
    GradCase("loss generator", _loss("generator")),
    # fixed configuration: central differences are no oracle when a relu or
    # leaky-relu input lies within epsilon of its kink, which some random
    # draws of this stack hit; seed 0 has no such coordinate
    GradCase("reduced generator+discriminator stack", lambda r: reduced_stack(0), 24),
)


def run_gradient_suite(seed: int = 0, cases=CASES) -> list:
    """Run every case; returns a list of :class:`GradResult`."""
    results = []
    for i, case in enumerate(cases):
        t0 = time.perf_counter()
        fn, params = case.build(np.random.default_rng(seed * 1000 + i))
        err = finite_diff_check(fn, params, max_coords=case.max_coords, seed=seed)
        results.append(GradResult(case.name, float(err), time.perf_counter() - t0))
    return results
