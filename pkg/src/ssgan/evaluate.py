"""Tiled inference, confusion matrices, per-class F1 and confidence maps."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ops
from .data.dataset import Dataset
from .data.images import MultispectralImage, selection_channels, stack_selection
from .data.rasters import write_pgm
from .errors import ConfigError, DatasetError
from .losses import IGNORE_LABEL
from .models import CLASS_NAMES, NUM_REAL_CLASSES, DiscriminatorParams, discriminator_forward

REAL_CLASS_NAMES = CLASS_NAMES[:NUM_REAL_CLASSES]
ARGMAX_GRAY = (0, 85, 170, 255)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted, over background/crop/weed."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    @classmethod
    def from_arrays(cls, predicted, truth) -> "ConfusionMatrix":
        cm = cls()
        cm.add(predicted, truth)
        return cm

    def add(self, predicted, truth) -> None:
        predicted = np.asarray(predicted).reshape(-1).astype(np.int64)
        truth = np.asarray(truth).reshape(-1).astype(np.int64)
        if predicted.shape != truth.shape:
            raise ConfigError("prediction and label rasters differ in size")
        keep = truth != IGNORE_LABEL
        p, t = predicted[keep], truth[keep]
        if p.size and (p.max() >= 3 or t.max() >= 3 or p.min() < 0 or t.min() < 0):
            raise ConfigError("class indices must be 0, 1 or 2 (or 255 in labels)")
        self.counts += np.bincount(t * 3 + p, minlength=9).reshape(3, 3)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def f1_scores(conf) -> dict:
    """Per class: precision, recall, F1 and which of them hit 0/0.

    A 0/0 ratio scores 0 and its name is listed under ``undefined``.
    """
    counts = conf.counts if isinstance(conf, ConfusionMatrix) else np.asarray(conf)
    out = {}
    for k, name in enumerate(REAL_CLASS_NAMES):
        tp = int(counts[k, k])
        fp = int(counts[:, k].sum()) - tp
        fn = int(counts[k, :].sum()) - tp
        undefined = []
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            undefined.append("precision")
        if tp + fn:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            undefined.append("recall")
        # 2PR/(P+R) written over counts: a single rounding, exact for small counts
        if tp:
            f1 = 2 * tp / (2 * tp + fp + fn)
        else:
            f1 = 0.0
            if tp + fp + fn == 0:
                undefined.append("f1")
        out[name] = {"precision": precision, "recall": recall, "f1": f1,
                     "tp": tp, "fp": fp, "fn": fn, "undefined": undefined}
    return out


@dataclass
class EvalReport:
    scores: dict
    confusion: ConfusionMatrix
    config: dict = field(default_factory=dict)
    pixels: int = 0

    @property
    def macro_f1(self) -> float:
        return float(np.mean([s["f1"] for s in self.scores.values()]))

    def f1(self, name: str) -> float:
        return self.scores[name]["f1"]

    def as_dict(self) -> dict:
        return {
            "scores": self.scores,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.counts.tolist(),
            "pixels": self.pixels,
            "config": self.config,
        }

    def to_text(self) -> str:
        lines = [f"{'class':<12}{'precision':>10}{'recall':>10}{'F1':>10}"]
        for name, s in self.scores.items():
            flag = " (undefined: " + ", ".join(s["undefined"]) + ")" if s["undefined"] else ""
            lines.append(f"{name:<12}{s['precision']:>10.4f}{s['recall']:>10.4f}{s['f1']:>10.4f}{flag}")
        lines.append(f"{'macro':<12}{'':>10}{'':>10}{self.macro_f1:>10.4f}")
        lines.append("confusion (rows true, cols predicted): " + json.dumps(self.confusion.counts.tolist()))
        if "config_hash" in self.config:
            lines.append(f"config hash: {self.config['config_hash']}")
        return "\n".join(lines)


def tile_origins(size: int, tile: int) -> list:
    """Non-overlapping tile starts; a partial last tile is shifted inward."""
    if tile > size:
        raise DatasetError(f"tile {tile} larger than image extent {size}")
    starts = list(range(0, size - tile + 1, tile))
    if starts[-1] + tile < size:
        starts.append(size - tile)
    return starts


def predict_probs(disc: DiscriminatorParams, array: np.ndarray, tile_h: int = 32, tile_w: int = 32,
                  max_batch: int = 64) -> np.ndarray:
    """Softmax confidence (4, H, W) of a normalized (C, H, W) image, tile by tile."""
    c, h, w = array.shape
    ys, xs = tile_origins(h, tile_h), tile_origins(w, tile_w)
    coords = [(y, x) for y in ys for x in xs]
    probs = np.zeros((disc.spec.num_classes, h, w), dtype=np.float32)
    for i in range(0, len(coords), max_batch):
        chunk = coords[i : i + max_batch]
        tiles = np.stack([array[:, y : y + tile_h, x : x + tile_w] for y, x in chunk])
        p = ops.softmax_channels(discriminator_forward(disc, tiles, "infer")).data
        for (y, x), pt in zip(chunk, p):
            probs[:, y : y + tile_h, x : x + tile_w] = pt
    return probs


def predict_labels(disc: DiscriminatorParams, array: np.ndarray, tile_h: int = 32, tile_w: int = 32) -> np.ndarray:
    """Argmax over the real classes only; the fake channel never wins."""
    probs = predict_probs(disc, array, tile_h, tile_w)
    return probs[:NUM_REAL_CLASSES].argmax(axis=0).astype(np.uint8)


def evaluate(disc: DiscriminatorParams, dataset, selection: str, pool: str = "test",
             tile_h: int = 32, tile_w: int = 32, config: Optional[dict] = None) -> EvalReport:
    if not isinstance(dataset, Dataset):
        dataset = Dataset(dataset)
    if len(selection_channels(selection)) != disc.spec.in_channels:
        raise ConfigError(
            f"discriminator expects {disc.spec.in_channels} channels, selection {selection} has "
            f"{len(selection_channels(selection))}")
    ids = dataset.pool_ids(pool)
    if not ids:
        raise DatasetError(f"pool {pool!r} is empty")
    conf = ConfusionMatrix()
    for image_id in ids:
        pred = predict_labels(disc, dataset.stacked(image_id, selection), tile_h, tile_w)
        conf.add(pred, dataset.masks[image_id].labels)
    return EvalReport(f1_scores(conf), conf, dict(config or {}), conf.total)


def render_maps(disc: DiscriminatorParams, image: MultispectralImage, selection: str, out_dir,
                tile_h: int = 32, tile_w: int = 32) -> list:
    """Write one confidence PGM per class and an argmax PGM; return the paths."""
    array = stack_selection(image, selection)
    probs = predict_probs(disc, array, tile_h, tile_w)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for k, name in enumerate(CLASS_NAMES):
        path = os.path.join(out_dir, f"{image.id}.conf_{name}.pgm")
        write_pgm(path, np.clip(np.rint(probs[k] * 255.0), 0, 255).astype(np.uint8))
        paths.append(path)
    gray = np.array(ARGMAX_GRAY, dtype=np.uint8)[probs.argmax(axis=0)]
    path = os.path.join(out_dir, f"{image.id}.argmax.pgm")
    write_pgm(path, gray)
    paths.append(path)
    return paths
