"""
Semi-supervised training in miniature
=====================================

Train the four-output discriminator (crop, weed, soil, fake) against the
generator for a few steps, then score it per class and lay the numbers
out as a results table.
"""

import tempfile

import numpy as np

from ssgan import losses
from ssgan.core import Prng, Tensor
from ssgan.data import SyntheticFieldConfig, synth_dataset
from ssgan.evaluate import evaluate
from ssgan.sweep import SweepCell, SweepResult, format_table
from ssgan.train import TrainConfig, train, train_supervised_baseline

# with all logits equal every class, fake included, gets probability 1/4
z = Tensor(np.zeros((1, 4, 2, 2)))
print(f"sup {losses.supervised_loss(z, np.zeros((1, 2, 2), int)).item():.6f}",
      f"unsup_real {losses.unsupervised_real_loss(z).item():.6f}",
      f"unsup_fake {losses.unsupervised_fake_loss(z).item():.6f}")

root = tempfile.mkdtemp()
synth_dataset(root, SyntheticFieldConfig(), 20, Prng(7), labeled_fraction=0.3, test_fraction=0.2)

# 40 short steps, far from converged; the acceptance run uses 500 steps of batch 32
config = TrainConfig(selection="Red+NIR", batch_size=16, steps_per_epoch=40, seed=1)
ssgan = train(config, root)
baseline = train_supervised_baseline(config, root)
print("last step:", {k: round(v, 3) for k, v in ssgan.log[-1].items() if k != "wall_ms" and isinstance(v, float)})

result = SweepResult(("Red+NIR",), (0.3,))
for name, run in (("ssgan", ssgan), ("baseline", baseline)):
    report = evaluate(run.state.disc, run.dataset, config.selection)
    print(name, {c: round(report.f1(c), 3) for c in ("background", "crop", "weed")})
    if name == "ssgan":
        result.cells.append(SweepCell("Red+NIR", 0.3, config.seed, crop=report.f1("crop"), weed=report.f1("weed")))

print(format_table(result))
