"""Channel-selection by labeled-fraction sweep, reported in the layout of
the published results table (rows = channel sets, column groups = labeled
fraction, each with Crop and Weed F1)."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

from .data.images import SELECTIONS
from .errors import SSGANError
from .train import TrainConfig

log = logging.getLogger(__name__)

FRACTIONS = (0.5, 0.4, 0.3)
ROWS = tuple(SELECTIONS)
TABLE_CLASSES = ("crop", "weed")
ROW_SEED_STRIDE = 100
FAILED = "failed"


def cell_seed(base_seed: int, row: int, col: int) -> int:
    """Seed policy: base seed plus row and column offsets."""
    return base_seed + ROW_SEED_STRIDE * row + col


def fraction_label(fraction: float) -> str:
    return f"{round(fraction * 100):d}%"


@dataclass
class SweepCell:
    selection: str
    fraction: float
    seed: int
    status: str = "ok"
    crop: Optional[float] = None
    weed: Optional[float] = None
    background: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SweepResult:
    selections: tuple
    fractions: tuple
    cells: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def cell(self, selection: str, fraction: float) -> SweepCell:
        for c in self.cells:
            if c.selection == selection and abs(c.fraction - fraction) < 1e-12:
                return c
        raise KeyError((selection, fraction))

    def as_dict(self) -> dict:
        return {
            "selections": list(self.selections),
            "fractions": list(self.fractions),
            "classes": list(TABLE_CLASSES),
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(tuple(d["selections"]), tuple(d["fractions"]), [SweepCell(**c) for c in d["cells"]],
                   d.get("config", {}))

    def to_text(self) -> str:
        return format_table(self)

    def save(self, out_dir) -> tuple:
        os.makedirs(out_dir, exist_ok=True)
        jpath = os.path.join(out_dir, "sweep.json")
        tpath = os.path.join(out_dir, "sweep.txt")
        with open(jpath, "w", encoding="utf-8") as f:
            json.dump(self.as_dict(), f, indent=2)
        with open(tpath, "w", encoding="utf-8") as f:
            f.write(self.to_text())
        return jpath, tpath


def _fmt(value: Optional[float]) -> str:
    return FAILED if value is None else f"{value:.3f}"


def format_table(result: SweepResult, title: str = "Semi-supervised GAN") -> str:
    """Fixed-width text table: one row per channel set, Crop/Weed per fraction."""
    label_w = max(len("Labeled Data"), max(len(s) for s in result.selections)) + 2
    col_w = 8
    group_w = col_w * len(TABLE_CLASSES)
    lines = [
        "F1 Score".ljust(label_w) + title,
        "Labeled Data".ljust(label_w) + "".join(fraction_label(f).ljust(group_w) for f in result.fractions),
        "Channel".ljust(label_w) + "".join(
            "".join(c.capitalize().ljust(col_w) for c in TABLE_CLASSES) for _ in result.fractions),
    ]
    for sel in result.selections:
        row = sel.ljust(label_w)
        for frac in result.fractions:
            try:
                cell = result.cell(sel, frac)
            except KeyError:
                cell = None
            for cls in TABLE_CLASSES:
                row += _fmt(getattr(cell, cls) if cell is not None and cell.ok else None).ljust(col_w)
        lines.append(row.rstrip())
    return "\n".join(line.rstrip() for line in lines) + "\n"


def parse_table(text: str) -> dict:
    """Inverse of :func:`format_table` for its value cells.

    Returns ``{(selection, fraction_label, class): value or None}``.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    fracs = lines[1].split()[2:]
    out = {}
    for line in lines[3:]:
        tokens = line.split()
        values = tokens[-2 * len(fracs):]
        sel = " ".join(tokens[: len(tokens) - len(values)])
        for i, frac in enumerate(fracs):
            for j, cls in enumerate(TABLE_CLASSES):
                v = values[2 * i + j]
                out[(sel, frac, cls)] = None if v == FAILED else float(v)
    return out


def default_runner(config: TrainConfig, dataset_dir) -> dict:
    """Train one configuration and return its per-class F1 on the test pool."""
    from .evaluate import evaluate
    from .train import train

    result = train(config, dataset_dir)
    report = evaluate(result.state.disc, result.dataset, config.selection, config=config.as_dict())
    return {name: report.f1(name) for name in ("background", "crop", "weed")}


def run_sweep(base: TrainConfig, dataset_dir, selections: Sequence[str] = ROWS,
              fractions: Sequence[float] = FRACTIONS, out_dir=None,
              runner: Optional[Callable[[TrainConfig, object], dict]] = None) -> SweepResult:
    """Train and evaluate every (selection, fraction) cell.

    Cell seeds follow :func:`cell_seed` with row/column indices taken from
    the full table, so a partial sweep reproduces the matching cells of a
    full one.  A failing cell is recorded as failed and the sweep goes on.
    """
    runner = runner or default_runner
    result = SweepResult(tuple(selections), tuple(fractions), config=base.as_dict())
    for sel in selections:
        row = ROWS.index(sel) if sel in ROWS else len(ROWS)
        for frac in fractions:
            col = _column(frac)
            seed = cell_seed(base.seed, row, col)
            cell = SweepCell(sel, float(frac), seed)
            try:
                config = replace(base, selection=sel, labeled_fraction=float(frac), seed=seed).validate()
                scores = runner(config, dataset_dir)
                cell.crop, cell.weed = float(scores["crop"]), float(scores["weed"])
                cell.background = float(scores.get("background")) if "background" in scores else None
            except (SSGANError, ValueError, ArithmeticError, OSError) as exc:
                cell.status, cell.error = FAILED, f"{type(exc).__name__}: {exc}"
                cell.crop = cell.weed = cell.background = None
                log.error("sweep cell %s / %s failed: %s", sel, fraction_label(frac), cell.error)
            result.cells.append(cell)
            log.info("sweep cell %s / %s: %s", sel, fraction_label(frac), cell.status)
    if out_dir is not None:
        result.save(out_dir)
    return result


def _column(fraction: float) -> int:
    for i, f in enumerate(FRACTIONS):
        if abs(f - fraction) < 1e-12:
            return i
    return len(FRACTIONS) + int(round(fraction * 1000))
