"""Command-line front end.

One binary, five subcommands: ``synth`` (phantom corpus), ``train``,
``eval``, ``infer``, ``sweep``. Every subcommand resolves its settings as
defaults <- JSON config file <- flags <- ``--set`` dotted overrides, then
writes the resolved configuration next to its outputs so a run can be
reproduced byte for byte. Exit codes: 0 success, 1 usage or configuration
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tensor
from .imageio import ImageFormatError, load, save
from .metrics import (
    DEFAULT_TAU_GRID,
    baseline_scores,
    binarize,
    evaluate,
    save_overlay,
    select_threshold,
    write_per_image_csv,
    write_report,
)
from .network import CHECKPOINT_VERSION, CheckpointError, forward, load_checkpoint
from .phantom import (
    PhantomSpec,
    build_corpus,
    default_spec,
    load_images,
    load_manifest,
    load_truths,
)
from .training import TrainConfig, TrainingDiverged, fit

__all__ = ["main", "entry"]


class CliError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_set(pairs: list[str]) -> list[tuple[str, object]]:
    out = []
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise CliError(f"--set expects key=value, got {pair!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.append((key, value))
    return out


def _apply_set(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        if k not in cur:
            raise CliError(f"unknown config key {dotted!r}")
        if cur[k] is None:
            cur[k] = {}
        if not isinstance(cur[k], dict):
            raise CliError(f"config key {dotted!r} does not nest")
        cur = cur[k]
    cur[keys[-1]] = value


def _merge(base: dict, update: dict) -> None:
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def _load_json(path, what: str) -> dict | list:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} file {path} is not valid JSON: {exc}") from None
    return data


def _resolve(defaults: dict, config_path, sets: list[str], **flag_overrides) -> dict:
    cfg = copy.deepcopy(defaults)
    if config_path is not None:
        data = _load_json(config_path, "config")
        if not isinstance(data, dict):
            raise CliError(f"config file {config_path} must hold a JSON object")
        _merge(cfg, data)
    for key, value in flag_overrides.items():
        if value is not None:
            cfg[key] = value
    for key, value in _parse_set(sets):
        _apply_set(cfg, key, value)
    return cfg


def _echo(cfg: dict, out_dir: Path, name: str) -> None:
    (out_dir / name).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _predict_maps(params, images: np.ndarray, batch: int = 32) -> list[np.ndarray]:
    preds = []
    for i in range(0, images.shape[0], batch):
        shadow = forward(params, Tensor(images[i : i + batch])).shadow.data
        preds.extend(shadow[j, 0].copy() for j in range(shadow.shape[0]))
    return preds


def cmd_synth(args) -> int:
    spec_dict = default_spec().to_dict()
    if args.spec is not None:
        data = _load_json(args.spec, "spec")
        if not isinstance(data, dict):
            raise CliError(f"spec file {args.spec} must hold a JSON object")
        _merge(spec_dict, data)
    for key, value in _parse_set(args.set):
        _apply_set(spec_dict, key, value)
    try:
        spec = PhantomSpec.from_dict(spec_dict)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None
    if args.train <= 0 or args.eval <= 0:
        raise CliError("--train and --eval must be positive")
    manifest_path = build_corpus(spec, args.train, args.eval, args.seed, args.out)
    echo = {
        "spec": spec.to_dict(),
        "train": args.train,
        "eval": args.eval,
        "seed": args.seed,
    }
    _echo(echo, Path(args.out), "synth_config.json")
    print(f"wrote {args.train + args.eval} phantoms to {manifest_path.parent}")
    return 0


_TRAIN_DEFAULTS = TrainConfig(corpus="", out_dir="").to_dict()


def _train_config(args) -> TrainConfig:
    cfg = _resolve(
        _TRAIN_DEFAULTS,
        args.config,
        args.set,
        corpus=args.corpus,
        out_dir=args.out,
        epochs=args.epochs,
        seed=args.seed,
    )
    if not cfg["corpus"]:
        raise CliError("a corpus is required (--corpus or config file)")
    if not cfg["out_dir"]:
        raise CliError("an output directory is required (--out or config file)")
    try:
        return TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


def cmd_train(args) -> int:
    cfg = _train_config(args)
    result = fit(cfg, resume_from=args.resume)
    print(f"trained {result.steps} steps -> {result.checkpoint_path}")
    return 0


def _eval_once(params, manifest, select_tau: bool, tau: float):
    images = load_images(manifest, "eval")
    truths = load_truths(manifest)
    preds = _predict_maps(params, images)
    if select_tau:
        tau, _ = select_threshold(preds, truths, DEFAULT_TAU_GRID)
    return evaluate(preds, truths, tau), images, truths


def cmd_eval(args) -> int:
    if args.tau is not None and not 0.0 < args.tau < 1.0:
        raise CliError(f"--tau {args.tau} outside (0, 1)")
    out_dir = Path(args.out)
    manifest = load_manifest(args.corpus)
    params, _, _ = load_checkpoint(args.checkpoint)
    tau = args.tau if args.tau is not None else 0.5
    report, images, truths = _eval_once(params, manifest, args.select_tau, tau)

    out_dir.mkdir(exist_ok=True)
    write_report(report, out_dir / "eval_report.json")
    write_per_image_csv(report, out_dir / "per_image.csv")
    print(
        f"model tau={report.tau:g} mean_iou={report.mean_iou:.4f} "
        f"mean_dice={report.mean_dice:.4f} n={report.count}"
    )

    baseline_report = None
    if args.select_baseline or args.baseline_threshold is not None:
        scores = [baseline_scores(images[i, 0], manifest.spec.geometry) for i in range(len(truths))]
        if args.select_baseline:
            b_tau, _ = select_threshold(scores, truths, DEFAULT_TAU_GRID)
        else:
            b_tau = args.baseline_threshold
        baseline_report = evaluate(scores, truths, b_tau)
        write_report(baseline_report, out_dir / "baseline_report.json")
        print(
            f"baseline tau={baseline_report.tau:g} mean_iou={baseline_report.mean_iou:.4f} "
            f"mean_dice={baseline_report.mean_dice:.4f}"
        )

    echo = {
        "corpus": str(args.corpus),
        "checkpoint": str(args.checkpoint),
        "tau": report.tau,
        "select_tau": args.select_tau,
        "baseline_threshold": None if baseline_report is None else baseline_report.tau,
        "select_baseline": args.select_baseline,
    }
    _echo(echo, out_dir, "eval_config.json")
    return 0


def cmd_infer(args) -> int:
    if not 0.0 < args.tau < 1.0:
        raise CliError(f"--tau {args.tau} outside (0, 1)")
    image = load(args.image)
    params, _, _ = load_checkpoint(args.checkpoint)
    shadow = forward(params, image).shadow.data[0, 0]
    out_dir = Path(args.out)
    out_dir.mkdir(exist_ok=True)
    save(shadow, out_dir / "shadow.png")
    mask = binarize(shadow, args.tau)
    save_overlay(image.data[0, 0], mask, np.zeros_like(mask), out_dir / "overlay.png")
    echo = {
        "checkpoint": str(args.checkpoint),
        "image": str(args.image),
        "tau": args.tau,
    }
    _echo(echo, out_dir, "infer_config.json")
    print(f"shadow map and overlay written to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    base = _train_config(args).to_dict()
    grid = _load_json(args.grid, "grid")
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise CliError(f"grid file {args.grid} must hold a JSON array of override objects")
    if not grid:
        raise CliError("grid is empty")

    out_dir = Path(args.out)
    out_dir.mkdir(exist_ok=True)
    manifest = load_manifest(base["corpus"])

    rows = []
    for i, overrides in enumerate(grid):
        run_cfg = copy.deepcopy(base)
        for key, value in overrides.items():
            _apply_set(run_cfg, key, value)
        run_cfg["out_dir"] = str(out_dir / f"run_{i:02d}")
        try:
            cfg = TrainConfig.from_dict(run_cfg)
        except (TypeError, ValueError) as exc:
            raise CliError(f"grid entry {i}: {exc}") from None
        result = fit(cfg)
        report, _, _ = _eval_once(result.params, manifest, True, 0.5)
        rows.append(
            {
                "run": i,
                "overrides": json.dumps(overrides, sort_keys=True),
                "tau": report.tau,
                "mean_iou": report.mean_iou,
                "mean_dice": report.mean_dice,
            }
        )
        print(
            f"run {i}: {rows[-1]['overrides']} -> mean_iou={report.mean_iou:.4f} "
            f"(tau={report.tau:g})"
        )

    ranked = sorted(rows, key=lambda r: -r["mean_iou"])
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "run", "overrides", "tau", "mean_iou", "mean_dice"])
        for rank, row in enumerate(ranked):
            writer.writerow(
                [
                    rank,
                    row["run"],
                    row["overrides"],
                    repr(row["tau"]),
                    repr(row["mean_iou"]),
                    repr(row["mean_dice"]),
                ]
            )
    _echo({"base": base, "grid": grid}, out_dir, "sweep_config.json")
    best = ranked[0]
    print(f"best: run {best['run']} {best['overrides']} mean_iou={best['mean_iou']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sonoshadow", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"sonoshadow {__version__} (checkpoint format {CHECKPOINT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a phantom corpus")
    p.add_argument("--out", required=True, help="corpus directory (parent must exist)")
    p.add_argument("--train", type=int, default=100, help="training images")
    p.add_argument("--eval", type=int, default=20, help="held-out images with truth masks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="JSON phantom spec to start from")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--corpus", help="corpus directory or manifest path")
    p.add_argument("--out", help="output directory for checkpoint and log")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, help="binarization threshold (default 0.5)")
    p.add_argument("--select-tau", action="store_true", help="grid-search tau instead")
    p.add_argument("--baseline-threshold", type=float, help="add a fixed-threshold baseline")
    p.add_argument(
        "--select-baseline", action="store_true", help="add a grid-searched baseline"
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="shadow map for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="train and rank config variants")
    p.add_argument("--corpus", help="corpus directory or manifest path")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base JSON training config")
    p.add_argument("--grid", required=True, help="JSON array of dotted overrides")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        TrainingDiverged,
        CheckpointError,
        ImageFormatError,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
