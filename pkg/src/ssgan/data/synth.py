"""Synthetic crop/weed fields for desk-scale experiments.

A field is bare soil crossed by vertical crop rows at a fixed spacing, with
circular weed patches scattered on top (weeds overwrite crop where they
overlap). Each pixel draws its red and NIR reflectance from the normal
distribution of its class, plus sensor noise, clipped to [0, 1].
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..core.prng import Prng
from ..errors import ConfigError
from .images import NIR, RED, LabelMask, MultispectralImage, compute_ndvi, NDVI

SOIL, CROP, WEED = 0, 1, 2


@dataclass
class SyntheticFieldConfig:
    width: int = 128
    height: int = 128
    crop_row_spacing: int = 24
    crop_row_width: int = 8
    weed_blob_count: int = 10
    weed_radius_min: int = 5
    weed_radius_max: int = 10
    # (mean, stddev) per class and band
    soil_red: tuple = (0.30, 0.03)
    soil_nir: tuple = (0.25, 0.03)
    crop_red: tuple = (0.06, 0.02)
    crop_nir: tuple = (0.60, 0.04)
    weed_red: tuple = (0.12, 0.02)
    weed_nir: tuple = (0.45, 0.04)
    sensor_noise: float = 0.02
    seed: int = 0

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("field extents must be positive")
        if self.crop_row_width < 1 or self.crop_row_width >= self.crop_row_spacing:
            raise ConfigError(
                f"crop_row_width ({self.crop_row_width}) must be positive and below "
                f"crop_row_spacing ({self.crop_row_spacing})")
        if self.weed_blob_count < 0:
            raise ConfigError("weed_blob_count must be non-negative")
        if not 0 < self.weed_radius_min <= self.weed_radius_max:
            raise ConfigError("weed radius range must satisfy 0 < min <= max")
        if not (self.crop_nir[0] > self.soil_nir[0] and self.weed_nir[0] > self.soil_nir[0]):
            raise ConfigError("crop and weed NIR means must exceed the soil NIR mean")
        if not (self.crop_red[0] < self.soil_red[0] and self.weed_red[0] < self.soil_red[0]):
            raise ConfigError("crop and weed red means must lie below the soil red mean")
        if self.sensor_noise < 0:
            raise ConfigError("sensor_noise must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticFieldConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown synthetic field keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def as_dict(self) -> dict:
        return asdict(self)


def paint_labels(config: SyntheticFieldConfig, prng: Prng) -> np.ndarray:
    """Class raster for one field: soil, crop rows, then weed disks."""
    h, w = config.height, config.width
    labels = np.zeros((h, w), dtype=np.uint8)
    phase = int(prng.integers(config.crop_row_spacing, 1)[0])
    cols = np.arange(w)
    in_row = ((cols - phase) % config.crop_row_spacing) < config.crop_row_width
    labels[:, in_row] = CROP
    yy, xx = np.mgrid[0:h, 0:w]
    n = config.weed_blob_count
    if n:
        cy = prng.integers(h, n)
        cx = prng.integers(w, n)
        r = config.weed_radius_min + prng.integers(config.weed_radius_max - config.weed_radius_min + 1, n)
        for y0, x0, rad in zip(cy, cx, r):
            labels[(yy - y0) ** 2 + (xx - x0) ** 2 <= rad * rad] = WEED
    return labels


def synth_field(config: SyntheticFieldConfig, prng: Prng, image_id: str = "field"):
    """Return (MultispectralImage with red, nir, ndvi; LabelMask)."""
    config.validate()
    labels = paint_labels(config, prng)
    shape = labels.shape
    bands = {}
    for band, per_class in ((RED, (config.soil_red, config.crop_red, config.weed_red)),
                            (NIR, (config.soil_nir, config.crop_nir, config.weed_nir))):
        means = np.array([m for m, _ in per_class])[labels]
        stds = np.array([s for _, s in per_class])[labels]
        z = prng.normal(shape, dtype=np.float64)
        noise = prng.normal(shape, std=config.sensor_noise, dtype=np.float64)
        bands[band] = np.clip(means + stds * z + noise, 0.0, 1.0).astype(np.float32)
    bands[NDVI] = compute_ndvi(bands[NIR], bands[RED])
    return MultispectralImage(image_id, bands, normalized=False), LabelMask(image_id, labels)


def synth_dataset(out_dir, config: SyntheticFieldConfig, n_images: int, prng: Prng,
                  labeled_fraction: float = 0.5, test_fraction: float = 0.2):
    """Write ``n_images`` fields plus ``split.json`` in the dataset layout."""
    from .dataset import write_dataset
    from .split import make_split

    images, masks = [], []
    for i in range(n_images):
        img, mask = synth_field(config, prng.spawn(i), image_id=f"field{i:03d}")
        images.append(img)
        masks.append(mask)
    split = make_split([im.id for im in images], labeled_fraction, test_fraction, prng.spawn(n_images + 1))
    write_dataset(out_dir, images, masks, split)
    return split
