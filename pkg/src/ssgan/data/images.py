"""Multispectral images, label masks, NDVI and channel selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.tensor import Tensor
from ..errors import ConfigError, ContractError, MissingChannelError, ShapeError

RED = "red_660nm"
NIR = "nir_790nm"
NDVI = "ndvi"
CHANNEL_NAMES = (RED, NIR, NDVI)
NDVI_EPS = 1e-8

# channel sets in the row order of the results table
SELECTIONS = {
    "Red": (RED,),
    "NIR": (NIR,),
    "NDVI": (NDVI,),
    "Red+NIR": (RED, NIR),
    "Red+NIR+NDVI": (RED, NIR, NDVI),
}


def selection_channels(selection: str) -> tuple:
    try:
        return SELECTIONS[selection]
    except KeyError:
        raise ConfigError(
            f"unknown channel selection {selection!r}; valid selections: {', '.join(SELECTIONS)}"
        ) from None


@dataclass
class MultispectralImage:
    id: str
    channels: dict = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        shapes = {name: np.shape(r) for name, r in self.channels.items()}
        unknown = set(shapes) - set(CHANNEL_NAMES)
        if unknown:
            raise ConfigError(f"unknown channel names {sorted(unknown)}")
        if len(set(shapes.values())) > 1:
            raise ShapeError(f"channels of image {self.id!r} differ in extents: {shapes}")
        for name in shapes:
            self.channels[name] = np.asarray(self.channels[name], dtype=np.float32)

    @property
    def height(self) -> int:
        return next(iter(self.channels.values())).shape[0]

    @property
    def width(self) -> int:
        return next(iter(self.channels.values())).shape[1]


@dataclass
class LabelMask:
    id: str
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if not np.isin(self.labels, (0, 1, 2, 255)).all():
            raise ContractError(f"mask {self.id!r} holds values outside {{0, 1, 2, 255}}")


def compute_ndvi(nir, red) -> np.ndarray:
    """(NIR - Red) / (NIR + Red + 1e-8) on un-normalized reflectance."""
    nir = np.asarray(nir, dtype=np.float32)
    red = np.asarray(red, dtype=np.float32)
    if nir.shape != red.shape:
        raise ShapeError(f"nir {nir.shape} and red {red.shape} extents differ")
    out = (nir - red) / (nir + red + np.float32(NDVI_EPS))
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def with_ndvi(image: MultispectralImage) -> MultispectralImage:
    if image.normalized:
        raise ContractError("NDVI must be computed from un-normalized reflectance")
    chans = dict(image.channels)
    chans[NDVI] = compute_ndvi(chans[NIR], chans[RED])
    return MultispectralImage(image.id, chans, False)


def normalize_channels(image: MultispectralImage) -> MultispectralImage:
    """Map red/nir reflectance from [0, 1] to [-1, 1]; NDVI passes through."""
    if image.normalized:
        raise ContractError(f"image {image.id!r} is already normalized")
    chans = {}
    for name, r in image.channels.items():
        chans[name] = r if name == NDVI else (2.0 * r - 1.0).astype(np.float32)
    return MultispectralImage(image.id, chans, True)


def stack_selection(image: MultispectralImage, selection: str) -> np.ndarray:
    """(C, H, W) array of the selected normalized channels."""
    names = selection_channels(selection)
    if not image.normalized:
        raise ContractError(f"image {image.id!r} must be normalized before channel selection")
    missing = [n for n in names if n not in image.channels]
    if missing:
        raise MissingChannelError(f"image {image.id!r} lacks channel(s) {missing} required by {selection}")
    return np.stack([image.channels[n] for n in names])


def select_channels(image: MultispectralImage, selection: str) -> Tensor:
    return Tensor(stack_selection(image, selection)[None])
