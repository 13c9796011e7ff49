"""Rasters, masks, splits, batch sampling and synthetic fields."""
from .dataset import Batch, BatchQueue, Dataset, load_image, sample_batch, write_dataset
from .images import (
    CHANNEL_NAMES,
    NDVI,
    NIR,
    RED,
    SELECTIONS,
    LabelMask,
    MultispectralImage,
    compute_ndvi,
    normalize_channels,
    select_channels,
    selection_channels,
    with_ndvi,
)
from .rasters import (
    decode_mask,
    decode_raster,
    encode_mask,
    encode_raster,
    load_mask,
    load_raster,
    save_mask,
    save_raster,
)
from .split import DatasetSplit, make_split, relabel
from .synth import SyntheticFieldConfig, synth_dataset, synth_field

__all__ = [
    "Batch", "BatchQueue", "CHANNEL_NAMES", "Dataset", "DatasetSplit", "LabelMask",
    "MultispectralImage", "NDVI", "NIR", "RED", "SELECTIONS", "SyntheticFieldConfig",
    "compute_ndvi", "decode_mask", "decode_raster", "encode_mask", "encode_raster",
    "load_image", "load_mask", "load_raster", "make_split", "normalize_channels", "relabel",
    "sample_batch", "save_mask", "save_raster", "select_channels", "selection_channels",
    "synth_dataset", "synth_field", "with_ndvi", "write_dataset",
]
