"""
Synthetic fields, NDVI and tiles
================================

Build a small synthetic crop/weed dataset on disk, look at its NDVI
channel, and draw a batch of labeled tiles.
"""

import tempfile

import numpy as np

from ssgan.core import Prng
from ssgan.data import Dataset, SyntheticFieldConfig, compute_ndvi, sample_batch, synth_dataset, synth_field

# one field: Red and NIR reflectance plus a pixel mask (0 soil, 1 crop, 2 weed)
config = SyntheticFieldConfig()
image, mask = synth_field(config, Prng(1))
print("channels:", sorted(image.channels), "mask classes:", np.unique(mask.labels))

# vegetation reflects NIR and absorbs Red, so NDVI separates plants from soil
ndvi = compute_ndvi(image.channels["nir_790nm"], image.channels["red_660nm"])
for k, name in enumerate(("soil", "crop", "weed")):
    print(f"mean NDVI over {name}: {ndvi[mask.labels == k].mean():+.2f}")

# twenty fields on disk with a 30% labeled / 20% test split
root = tempfile.mkdtemp()
synth_dataset(root, config, 20, Prng(7), labeled_fraction=0.3, test_fraction=0.2)
ds = Dataset(root)
for pool in ("labeled", "unlabeled", "test"):
    print(pool, len(ds.pool_ids(pool)))

# a batch of 32x32 Red+NIR tiles from labeled images, masks aligned to tiles
batch = sample_batch(ds, "labeled", "Red+NIR", Prng(3), batch_size=8)
print("tiles", batch.images.shape, "masks", batch.masks.shape)
