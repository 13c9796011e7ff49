"""Image-level train/test and labeled/unlabeled splits."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from ..core.prng import Prng
from ..errors import ConfigError, DatasetError


def round_half_up(x: float) -> int:
    # tolerance absorbs binary representation error, e.g. 0.3 * 10
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass
class DatasetSplit:
    labeled_train: list = field(default_factory=list)
    unlabeled_train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    labeled_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        groups = [set(self.labeled_train), set(self.unlabeled_train), set(self.test)]
        for a in range(3):
            for b in range(a + 1, 3):
                if groups[a] & groups[b]:
                    raise DatasetError(f"split lists overlap: {sorted(groups[a] & groups[b])[:5]}")
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")

    @property
    def train(self) -> list:
        return sorted(self.labeled_train + self.unlabeled_train)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        try:
            d = json.loads(text)
            return cls(
                labeled_train=list(d["labeled_train"]),
                unlabeled_train=list(d["unlabeled_train"]),
                test=list(d["test"]),
                labeled_fraction=float(d["labeled_fraction"]),
                seed=int(d["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"invalid split.json: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def _labeled_count(fraction: float, n: int) -> int:
    return min(n, max(1, round_half_up(fraction * n)))


def make_split(ids, labeled_fraction: float, test_fraction: float, prng: Prng) -> DatasetSplit:
    """Shuffle ``ids``, carve the test set, then label a fraction of the rest.

    Counts use round-half-up with a floor of one. Because labeled images are
    taken from the front of one shuffled order, a smaller fraction yields a
    subset of a larger one for the same seed.
    """
    ids = sorted(ids)
    if len(ids) != len(set(ids)):
        raise DatasetError("duplicate image ids")
    if len(ids) < 3:
        raise DatasetError(f"need at least 3 images to split, got {len(ids)}")
    if not 0 < labeled_fraction <= 1:
        raise ConfigError(f"labeled_fraction must lie in (0, 1], got {labeled_fraction}")
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    seed = prng.state
    order = [ids[i] for i in prng.permutation(len(ids))]
    n_test = min(len(ids) - 1, max(1, round_half_up(test_fraction * len(ids))))
    test, train = order[:n_test], order[n_test:]
    return relabel(train, test, labeled_fraction, Prng(seed ^ 0x5EED), seed)


def relabel(train, test, labeled_fraction: float, prng: Prng, seed: int = 0) -> DatasetSplit:
    """Choose the labeled subset of ``train`` keeping ``test`` fixed."""
    train = sorted(train)
    order = [train[i] for i in prng.permutation(len(train))]
    k = _labeled_count(labeled_fraction, len(train))
    return DatasetSplit(
        labeled_train=sorted(order[:k]),
        unlabeled_train=sorted(order[k:]),
        test=sorted(test),
        labeled_fraction=labeled_fraction,
        seed=seed,
    )
