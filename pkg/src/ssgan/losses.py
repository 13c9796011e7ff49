"""Semi-supervised adversarial objective over (N, 4, H, W) logit maps.

Channels 0..2 are the real classes (background, crop, weed) and channel 3
is the fake class. The discriminator minimizes

    sup + lambda_u * (unsup_real + unsup_fake)

where ``sup`` is pixel cross-entropy on labeled pixels, ``unsup_real`` is
-log(1 - p_fake) on real pixels and ``unsup_fake`` is -log(p_fake) on
generated pixels. The generator minimizes -log(1 - p_fake) on its own
images (non-saturating form).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import ops
from .core.tensor import Tensor
from .errors import ContractError, NonFiniteError, ShapeError
from .models import FAKE_CLASS, NUM_REAL_CLASSES

PROB_FLOOR = 1e-7
IGNORE_LABEL = 255
REAL_CHANNELS = tuple(range(NUM_REAL_CLASSES))


@dataclass
class LossBreakdown:
    sup: float
    unsup_real: float
    unsup_fake: float
    d_total: float
    g_loss: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_logits(logits: Tensor):
    if logits.data.ndim != 4 or logits.shape[1] != NUM_REAL_CLASSES + 1:
        raise ShapeError(f"expected logits (N, {NUM_REAL_CLASSES + 1}, H, W), got {logits.shape}")


def _log_real_prob(logits: Tensor) -> Tensor:
    return ops.sub(ops.logsumexp_channels(logits, REAL_CHANNELS), ops.logsumexp_channels(logits))


def real_prob(logits) -> Tensor:
    """1 - p_fake per pixel, as exp(lse(real channels) - lse(all channels))."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    _check_logits(logits)
    return ops.exp(_log_real_prob(logits))


def fake_prob(logits) -> Tensor:
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    _check_logits(logits)
    lse = ops.logsumexp_channels(logits)
    return ops.exp(ops.sub(ops.take_channels(logits, np.full(lse.shape, FAKE_CLASS)), lse))


def supervised_loss(logits, mask) -> Tensor:
    """Mean of -log softmax(logits)[label] over pixels whose label is not 255."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    _check_logits(logits)
    mask = np.asarray(mask)
    if mask.ndim == 4 and mask.shape[1] == 1:
        mask = mask[:, 0]
    n, _, h, w = logits.shape
    if mask.shape != (n, h, w):
        raise ShapeError(f"mask extents {mask.shape} do not match logits {logits.shape}")
    labeled = mask != IGNORE_LABEL
    if not labeled.any():
        raise ContractError("supervised_loss: every pixel is marked unlabeled (255)")
    bad = labeled & (mask >= NUM_REAL_CLASSES)
    if bad.any():
        raise ShapeError(f"mask contains values outside {{0, 1, 2, {IGNORE_LABEL}}}")
    labels = np.where(labeled, mask, 0).astype(np.int64)
    nll = ops.sub(ops.logsumexp_channels(logits), ops.take_channels(logits, labels))
    return ops.masked_mean(nll, labeled)


def unsupervised_real_loss(logits) -> Tensor:
    """-mean(log(max(real_prob, 1e-7))) over all pixels."""
    return ops.scale(ops.mean(ops.log(ops.clamp_min(real_prob(logits), PROB_FLOOR))), -1.0)


def unsupervised_fake_loss(logits) -> Tensor:
    """-mean(log(max(p_fake, 1e-7))) over all pixels."""
    return ops.scale(ops.mean(ops.log(ops.clamp_min(fake_prob(logits), PROB_FLOOR))), -1.0)


def generator_loss(logits) -> Tensor:
    """Non-saturating generator objective: -mean(log real_prob) on generated pixels."""
    return unsupervised_real_loss(logits)


def discriminator_loss(sup, unsup_real, unsup_fake, lambda_u: float = 1.0):
    """sup + lambda_u * (unsup_real + unsup_fake).

    Accepts floats (returns a float) or one-element tensors (returns a
    tensor on their tape).
    """
    if lambda_u < 0:
        raise ContractError(f"lambda_u must be non-negative, got {lambda_u}")
    parts = (sup, unsup_real, unsup_fake)
    if all(isinstance(p, Tensor) for p in parts):
        for name, p in zip(("sup", "unsup_real", "unsup_fake"), parts):
            if not p.is_finite():
                raise NonFiniteError(f"{name} is not finite", name=name)
        return ops.linear_combination([(1.0, sup), (lambda_u, unsup_real), (lambda_u, unsup_fake)])
    vals = [float(p.item() if isinstance(p, Tensor) else p) for p in parts]
    for name, v in zip(("sup", "unsup_real", "unsup_fake"), vals):
        if not np.isfinite(v):
            raise NonFiniteError(f"{name} is not finite", name=name)
    return vals[0] + lambda_u * (vals[1] + vals[2])
