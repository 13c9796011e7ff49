"""Command-line entry point: ``python -m ssgan <command> ...``.

Commands: synth, prepare, train, eval, sweep, sample, gradcheck.

Configuration comes from an optional JSON file with ``train`` and
``synth`` sections, then ``--set section.key=value`` overrides, then the
dedicated flags; later sources win. The effective configuration is echoed
to stdout and written next to every artifact.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure (non-finite loss or failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np

from .errors import ConfigError, DatasetError, FormatError, NonFiniteError, SSGANError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SECTIONS = ("train", "synth")
MODE_ALIASES = {"ssgan": "ssgan", "baseline": "supervised_baseline", "supervised_baseline": "supervised_baseline"}

log = logging.getLogger("ssgan.cli")


class UsageError(SSGANError):
    """Bad flags or configuration; exit code 1."""


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config


def _config_classes():
    from .data.synth import SyntheticFieldConfig
    from .train import TrainConfig

    return {"train": TrainConfig, "synth": SyntheticFieldConfig}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()) -> dict:
    """Merge a JSON file and ``section.key=value`` overrides into plain dicts.

    Unknown sections or keys raise :class:`UsageError`.
    """
    classes = _config_classes()
    merged = {s: {} for s in SECTIONS}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        for section, values in data.items():
            if section not in SECTIONS or not isinstance(values, dict):
                raise UsageError(f"unknown config section {section!r}; expected {SECTIONS}")
            merged[section].update(values)
    for item in overrides:
        key, eq, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not eq or not dot:
            raise UsageError(f"override {item!r} must look like section.key=value")
        if section not in SECTIONS:
            raise UsageError(f"unknown config section {section!r}; expected {SECTIONS}")
        merged[section][name] = _parse_value(value)
    for section, values in merged.items():
        known = {f.name for f in fields(classes[section])}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown {section} config keys {unknown}; valid keys: {sorted(known)}")
    return merged


def train_config(merged: dict, **flags):
    from .train import TrainConfig

    values = dict(merged["train"])
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        return TrainConfig.from_dict(values).validate()
    except TypeError as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def synth_config(merged: dict, **flags):
    from .data.synth import SyntheticFieldConfig

    values = dict(merged["synth"])
    values.update({k: v for k, v in flags.items() if v is not None})
    cfg = SyntheticFieldConfig.from_dict(values)
    cfg.validate()
    return cfg


def echo(title: str, payload: dict) -> None:
    print(f"{title}: " + json.dumps(payload, sort_keys=True))


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def require_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"{args.command} needs an explicit --seed (no implicit entropy is used)")
    return args.seed


def prepare_out_dir(path, force: bool) -> None:
    """Refuse to write into an existing non-empty directory unless forced."""
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise UsageError(f"{path} exists and is not empty; pass --force to overwrite")
    os.makedirs(path, exist_ok=True)


def check_selection(name: str) -> str:
    from .data.images import SELECTIONS

    if name not in SELECTIONS:
        raise UsageError(f"unknown channel selection {name!r}; valid selections: {', '.join(SELECTIONS)}")
    return name


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    from .core.prng import Prng
    from .data.synth import synth_dataset

    seed = require_seed(args)
    merged = load_config(args.config, args.set)
    cfg = synth_config(merged, seed=seed)
    if args.n_images < 3:
        raise UsageError("--n-images must be at least 3")
    prepare_out_dir(args.out, args.force)
    effective = {"synth": cfg.as_dict(), "n_images": args.n_images,
                 "labeled_fraction": args.labeled_fraction, "test_fraction": args.test_fraction}
    echo("config", effective)
    split = synth_dataset(args.out, cfg, args.n_images, Prng(seed), args.labeled_fraction, args.test_fraction)
    write_json(os.path.join(args.out, "config.json"), effective)
    print(f"wrote {args.n_images} images to {args.out}: {len(split.labeled_train)} labeled, "
          f"{len(split.unlabeled_train)} unlabeled, {len(split.test)} test")
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .core.prng import Prng
    from .data.dataset import list_image_ids, load_image
    from .data.images import NDVI, NIR, RED, compute_ndvi
    from .data.rasters import save_raster
    from .data.split import make_split

    seed = require_seed(args)
    split_path = os.path.join(args.dataset, "split.json")
    if os.path.exists(split_path) and not args.force:
        raise UsageError(f"{split_path} exists; pass --force to replace it")
    ids = list_image_ids(args.dataset)
    written = 0
    for image_id in ids:
        img = load_image(args.dataset, image_id)
        if RED not in img.channels or NIR not in img.channels:
            raise DatasetError(f"image {image_id!r} lacks red or nir; cannot derive ndvi")
        ndvi = compute_ndvi(img.channels[NIR], img.channels[RED])
        save_raster(os.path.join(args.dataset, "images", f"{image_id}.{NDVI}.msr"), ndvi)
        written += 1
    split = make_split(ids, args.labeled_fraction, args.test_fraction, Prng(seed))
    split.save(split_path)
    effective = {"labeled_fraction": args.labeled_fraction, "test_fraction": args.test_fraction, "seed": seed}
    echo("config", effective)
    write_json(os.path.join(args.dataset, "prepare.json"), effective)
    print(f"split {len(ids)} images: {len(split.labeled_train)} labeled, {len(split.unlabeled_train)} "
          f"unlabeled, {len(split.test)} test; wrote {written} ndvi rasters")
    return EXIT_OK


def cmd_train(args) -> int:
    from .evaluate import evaluate
    from .train import train

    seed = require_seed(args)
    merged = load_config(args.config, args.set)
    flags = dict(seed=seed, lr=args.lr, beta1=args.beta1, batch_size=args.batch_size,
                 labeled_fraction=args.labeled_fraction, lambda_u=args.lambda_u,
                 checkpoint_every=args.checkpoint_every, epochs=args.epochs, steps_per_epoch=args.steps)
    if args.channels is not None:
        flags["selection"] = check_selection(args.channels)
    if args.mode is not None:
        flags["mode"] = MODE_ALIASES[args.mode]
    cfg = train_config(merged, **flags)
    if cfg.mode == "supervised_baseline":
        cfg = replace(cfg, lambda_u=0.0)
    check_selection(cfg.selection)
    prepare_out_dir(args.out, args.force)
    effective = {"train": cfg.as_dict(), "config_hash": cfg.config_hash()}
    echo("config", effective)
    write_json(os.path.join(args.out, "config.json"), effective)
    result = train(cfg, args.dataset, args.out)
    last = result.log[-1] if result.log else {}
    print(f"trained {result.state.step} steps; final checkpoint {result.checkpoints[-1]}")
    if last:
        print("last step: " + json.dumps(last, sort_keys=True))
    if args.evaluate:
        report = evaluate(result.state.disc, result.dataset, cfg.selection, config=effective)
        _write_report(report, args.out)
    return EXIT_OK


def _write_report(report, out_dir=None) -> None:
    print(report.to_text())
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "report.json"), report.as_dict())
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as f:
            f.write(report.to_text() + "\n")


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data.dataset import Dataset
    from .data.images import selection_channels
    from .evaluate import evaluate

    ckpt = load_checkpoint(args.checkpoint)
    trained_on = ckpt.config.get("selection")
    selection = check_selection(args.channels or trained_on)
    if len(selection_channels(selection)) != ckpt.disc.spec.in_channels:
        raise UsageError(f"checkpoint was trained on {ckpt.disc.spec.in_channels} channels ({trained_on}); "
                         f"selection {selection} has {len(selection_channels(selection))}")
    dataset = Dataset(args.dataset)
    effective = {"train": ckpt.config, "config_hash": ckpt.config_hash, "selection": selection,
                 "pool": args.pool, "checkpoint": os.path.abspath(args.checkpoint), "step": ckpt.step}
    echo("config", effective)
    report = evaluate(ckpt.disc, dataset, selection, pool=args.pool, config=effective)
    _write_report(report, args.out)
    if args.maps:
        from .evaluate import render_maps

        for image_id in dataset.pool_ids(args.pool)[: args.maps]:
            render_maps(ckpt.disc, dataset.images[image_id], selection, os.path.join(args.out or ".", "maps"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import FRACTIONS, run_sweep
    from .data.images import SELECTIONS

    seed = require_seed(args)
    merged = load_config(args.config, args.set)
    cfg = train_config(merged, seed=seed, steps_per_epoch=args.steps, epochs=args.epochs)
    selections = [check_selection(s) for s in (args.selections or list(SELECTIONS))]
    fractions = args.fractions or list(FRACTIONS)
    prepare_out_dir(args.out, args.force)
    effective = {"train": cfg.as_dict(), "selections": selections, "fractions": fractions}
    echo("config", effective)
    result = run_sweep(cfg, args.dataset, selections, fractions, out_dir=args.out)
    print(result.to_text(), end="")
    failed = [c for c in result.cells if not c.ok]
    print(f"{len(result.cells)} runs, {2 * len(result.cells)} F1 cells, {len(failed)} failed runs")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .checkpoint import load_checkpoint
    from .core.prng import Prng, prng_uniform
    from .data.images import selection_channels
    from .data.rasters import write_pgm
    from .models import build_generator, generator_forward
    from .train import TrainConfig, generator_spec

    seed = require_seed(args)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.gen is None:
            raise UsageError(f"{args.checkpoint} holds no generator (supervised baseline?)")
        gen = ckpt.gen
        selection = check_selection(args.channels or ckpt.config.get("selection"))
    else:
        selection = check_selection(args.channels or "Red+NIR")
        gen = build_generator(generator_spec(TrainConfig(selection=selection)), Prng(seed).spawn(1))
    names = selection_channels(selection)
    if len(names) != gen.spec.out_channels:
        raise UsageError(f"generator emits {gen.spec.out_channels} channels, selection {selection} has {len(names)}")
    prepare_out_dir(args.out, args.force)
    effective = {"selection": selection, "n": args.n, "seed": seed, "checkpoint": args.checkpoint}
    echo("config", effective)
    noise = prng_uniform(Prng(seed).spawn(5), (args.n, gen.spec.noise_dim), -1.0, 1.0)
    tiles = generator_forward(gen, noise, "infer").data
    count = 0
    for i, tile in enumerate(tiles):
        for name, band in zip(names, tile):
            gray = np.clip(np.rint((band + 1.0) * 127.5), 0, 255).astype(np.uint8)
            write_pgm(os.path.join(args.out, f"sample{i:03d}.{name}.pgm"), gray)
            count += 1
    write_json(os.path.join(args.out, "config.json"), effective)
    print(f"wrote {count} PGM files to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_gradient_suite

    results = run_gradient_suite(seed=args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<45} max rel err {r.error:.3e}  ({r.seconds:.2f}s)")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases within {TOLERANCE:g}")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------- parser


def _common_config(p):
    p.add_argument("--config", help="JSON file with 'train' and/or 'synth' sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field (repeatable)")


def build_parser() -> Parser:
    parser = Parser(prog="ssgan", description="Semi-supervised GAN crop/weed segmentation on multispectral tiles.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("synth", help="write a synthetic multispectral dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-images", type=int, default=60)
    p.add_argument("--labeled-fraction", type=float, default=0.5)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--force", action="store_true")
    _common_config(p)

    p = sub.add_parser("prepare", help="derive ndvi rasters and write split.json")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labeled-fraction", type=float, required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="train the semi-supervised GAN or the supervised baseline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channels")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES))
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="steps per epoch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--labeled-fraction", type=float)
    p.add_argument("--lambda-u", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--evaluate", action="store_true", help="evaluate on the test pool afterwards")
    p.add_argument("--force", action="store_true")
    _common_config(p)

    p = sub.add_parser("eval", help="per-class F1 of a checkpoint on a dataset pool")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--channels")
    p.add_argument("--pool", default="test", choices=("labeled", "unlabeled", "test"))
    p.add_argument("--out")
    p.add_argument("--maps", type=int, default=0, help="render confidence maps for the first N images")

    p = sub.add_parser("sweep", help="channel-selection x labeled-fraction sweep table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--selections", nargs="+")
    p.add_argument("--fractions", nargs="+", type=float)
    p.add_argument("--force", action="store_true")
    _common_config(p)

    p = sub.add_parser("sample", help="write generated tiles as PGM, one file per channel")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--channels")
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    return parser


HANDLERS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
    "sweep": cmd_sweep, "sample": cmd_sample, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\nssgan: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return HANDLERS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DatasetError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SSGANError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
