"""Dataset directory I/O and tile batch sampling.

Layout::

    dataset/images/<id>.<channel>.msr    channel in red_660nm, nir_790nm, ndvi
    dataset/masks/<id>.pgm
    dataset/split.json
"""
from __future__ import annotations

import os
import queue
import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..core.prng import Prng
from ..core.tensor import Tensor
from ..errors import DatasetError, FormatError, ShapeError
from .images import CHANNEL_NAMES, LabelMask, MultispectralImage, normalize_channels, stack_selection
from .rasters import load_mask, load_raster, save_mask, save_raster
from .split import DatasetSplit

POOLS = ("labeled", "unlabeled", "test")


def write_dataset(out_dir, images, masks, split: Optional[DatasetSplit] = None) -> None:
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    for img in images:
        for name, raster in img.channels.items():
            save_raster(os.path.join(out_dir, "images", f"{img.id}.{name}.msr"), raster)
    for mask in masks:
        save_mask(os.path.join(out_dir, "masks", f"{mask.id}.pgm"), mask.labels)
    if split is not None:
        split.save(os.path.join(out_dir, "split.json"))


def list_image_ids(dataset_dir) -> list:
    img_dir = os.path.join(dataset_dir, "images")
    if not os.path.isdir(img_dir):
        raise DatasetError(f"{dataset_dir} has no images/ directory")
    ids = set()
    for fn in os.listdir(img_dir):
        if fn.endswith(".msr"):
            stem = fn[: -len(".msr")]
            image_id, _, channel = stem.rpartition(".")
            if channel in CHANNEL_NAMES and image_id:
                ids.add(image_id)
    if not ids:
        raise DatasetError(f"{img_dir} contains no .msr rasters")
    return sorted(ids)


def load_image(dataset_dir, image_id: str) -> MultispectralImage:
    chans = {}
    for name in CHANNEL_NAMES:
        path = os.path.join(dataset_dir, "images", f"{image_id}.{name}.msr")
        if os.path.exists(path):
            try:
                chans[name] = load_raster(path)
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}") from exc
    if not chans:
        raise DatasetError(f"no rasters for image {image_id!r}")
    return MultispectralImage(image_id, chans, normalized=False)


class Dataset:
    """Images (normalized in memory), masks and split of a dataset directory."""

    def __init__(self, root, split: Optional[DatasetSplit] = None):
        self.root = str(root)
        self.ids = list_image_ids(root)
        self.images = {}
        self.masks = {}
        for image_id in self.ids:
            img = load_image(root, image_id)
            self.images[image_id] = normalize_channels(img)
            mpath = os.path.join(root, "masks", f"{image_id}.pgm")
            if os.path.exists(mpath):
                labels = load_mask(mpath)
                if labels.shape != (img.height, img.width):
                    raise DatasetError(f"mask of {image_id!r} has extents {labels.shape}, image "
                                       f"{(img.height, img.width)}")
                self.masks[image_id] = LabelMask(image_id, labels)
        if split is None:
            spath = os.path.join(root, "split.json")
            if not os.path.exists(spath):
                raise DatasetError(f"{root} has no split.json")
            split = DatasetSplit.load(spath)
        self.split = split
        self._validate_split()
        self._stacks = {}

    def _validate_split(self):
        known = set(self.ids)
        for pool in POOLS:
            missing = [i for i in self.pool_ids(pool) if i not in known]
            if missing:
                raise DatasetError(f"split pool {pool!r} names unknown images {missing[:5]}")
        for pool in ("labeled", "test"):
            unmasked = [i for i in self.pool_ids(pool) if i not in self.masks]
            if unmasked:
                raise DatasetError(f"{pool} images without masks: {unmasked[:5]}")

    def pool_ids(self, pool: str) -> list:
        if pool == "labeled":
            return self.split.labeled_train
        if pool == "unlabeled":
            return self.split.unlabeled_train
        if pool == "test":
            return self.split.test
        raise DatasetError(f"unknown pool {pool!r}; expected one of {POOLS}")

    def stacked(self, image_id: str, selection: str) -> np.ndarray:
        key = (image_id, selection)
        if key not in self._stacks:
            self._stacks[key] = stack_selection(self.images[image_id], selection)
        return self._stacks[key]


@dataclass
class Batch:
    images: Tensor
    masks: Optional[np.ndarray]
    ids: list
    offsets: np.ndarray


def sample_batch(dataset: Dataset, pool: str, selection: str, prng: Prng, batch_size: int = 32,
                 tile_h: int = 32, tile_w: int = 32) -> Batch:
    """Random tiles: uniform image choice, uniform top-left offset per element."""
    ids = dataset.pool_ids(pool)
    if not ids:
        raise DatasetError(f"pool {pool!r} is empty")
    if batch_size < 1:
        raise DatasetError("batch_size must be at least 1")
    picks = prng.integers(len(ids), batch_size)
    u = prng.random(2 * batch_size)
    with_masks = pool != "unlabeled"
    c = len(dataset.stacked(ids[0], selection))
    images = np.empty((batch_size, c, tile_h, tile_w), dtype=np.float32)
    masks = np.empty((batch_size, tile_h, tile_w), dtype=np.uint8) if with_masks else None
    offsets = np.empty((batch_size, 2), dtype=np.int64)
    chosen = []
    for b, k in enumerate(picks):
        image_id = ids[int(k)]
        arr = dataset.stacked(image_id, selection)
        h, w = arr.shape[1:]
        if tile_h > h or tile_w > w:
            raise ShapeError(f"tile {tile_h}x{tile_w} larger than image {image_id!r} ({h}x{w})")
        y = int(u[2 * b] * (h - tile_h + 1))
        x = int(u[2 * b + 1] * (w - tile_w + 1))
        images[b] = arr[:, y : y + tile_h, x : x + tile_w]
        if with_masks:
            masks[b] = dataset.masks[image_id].labels[y : y + tile_h, x : x + tile_w]
        offsets[b] = (y, x)
        chosen.append(image_id)
    return Batch(Tensor(images), masks, chosen, offsets)


class BatchQueue:
    """Background producer feeding batches through a bounded queue.

    The producer thread calls ``make_batch()`` repeatedly and blocks once
    ``maxsize`` batches are waiting. Batches come out in production order,
    so a deterministic ``make_batch`` gives a deterministic stream.
    """

    _DONE = object()

    def __init__(self, make_batch: Callable[[], object], count: int, maxsize: int = 4):
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._error: Optional[BaseException] = None
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(make_batch, count), daemon=True)
        self._thread.start()

    def _run(self, make_batch, count):
        try:
            for _ in range(count):
                item = make_batch()
                while not self._stop.is_set():
                    try:
                        self._q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
        except BaseException as exc:  # re-raised in the consumer
            self._error = exc
        self._q.put(self._DONE)

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is self._DONE:
                if self._error is not None:
                    raise self._error
                return
            yield item

    def qsize(self) -> int:
        return self._q.qsize()

    def close(self):
        self._stop.set()
        try:
            while True:
                self._q.get_nowait()
        except queue.Empty:
            pass
        self._thread.join(timeout=5)
