"""Command-line entry point: decompose, synth, train, enhance, eval."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core.checkpoint import CheckpointError
from .data import (
    DatasetError,
    SplitSpec,
    generate_corpus,
    list_images,
    load_dataset,
    materialize,
    read_image,
    split_dataset,
    write_image,
)
from .metrics import MetricError, SsimParams
from .model import ModelConfigError, enhance_image, load_checkpoint
from .plotting import plot_evaluation, plot_pyramid, plot_training_log
from .pyramid import PyramidError, band_visual, gauss_pyramid, laplace_pyramid
from .trainer import (
    TRAINING_SETS,
    ConfigError,
    TrainingDiverged,
    dataset_triples,
    evaluate,
    get_preset,
    run_two_phase,
    write_log_csv,
)

log = logging.getLogger("expocorr")


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1):
        self.kind, self.code = kind, code
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single machine-parsable line instead of usage text
        raise CliError("usage", message.replace("\n", " "), code=2)


# -- helpers ---------------------------------------------------------------------------


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and (path.is_file() or any(path.iterdir())):
        if not force:
            raise CliError("exists", f"{path} already exists and is not empty (use --force)")
        if path.is_file():
            raise CliError("exists", f"{path} is a file, expected a directory")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo(config: dict) -> None:
    print("config " + json.dumps(config, sort_keys=True, default=str), file=sys.stderr)


def _coerce(raw: str, current):
    if raw.lower() in ("none", "null"):
        return None
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(v) for v in raw.split(","))
    if current is None:
        try:
            return int(raw)
        except ValueError:
            return float(raw)
    return raw


def apply_overrides(obj, overrides: Sequence[str]):
    """Apply ``dotted.key=value`` overrides to nested frozen dataclasses.

    All overrides land in a single ``replace`` per dataclass, so their order
    does not matter for cross-field validation.
    """
    tree: dict = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError("override", f"expected key=value, got {item!r}", code=2)
        node = tree
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise CliError("override", f"conflicting overrides for {key!r}", code=2)
        node[parts[-1]] = raw.strip()
    return _apply_tree(obj, tree, "")


def _apply_tree(obj, tree: dict, prefix: str):
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for head, sub in tree.items():
        full_key = prefix + head
        if head not in names:
            raise CliError("override", f"unknown setting {full_key!r}", code=2)
        current = getattr(obj, head)
        if isinstance(sub, dict):
            if not dataclasses.is_dataclass(current):
                raise CliError("override", f"{full_key!r} has no sub-settings", code=2)
            updates[head] = _apply_tree(current, sub, full_key + ".")
        else:
            try:
                updates[head] = _coerce(sub, current)
            except ValueError:
                raise CliError("override", f"{full_key!r}: cannot parse {sub!r}", code=2) from None
    return dataclasses.replace(obj, **updates)


def _images_in(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = list_images(path)
    if not files:
        raise CliError("input", f"no PNG images found in {path}")
    return files


# -- subcommands -----------------------------------------------------------------------


def cmd_decompose(args) -> None:
    _echo({"command": "decompose", "input": args.input, "levels": args.levels, "out": args.out})
    img = read_image(args.input)
    out = _prepare_out(Path(args.out), args.force)
    gp = gauss_pyramid(img, args.levels)
    lp = laplace_pyramid(img, args.levels)
    for i, level in enumerate(gp.levels, start=1):
        write_image(out / f"gauss_{i}.png", level)
    for i, level in enumerate(lp.levels, start=1):
        write_image(out / f"laplace_{i}.png", level if i == args.levels else band_visual(level))
    if args.figure:
        plot_pyramid(gp.levels, lp.levels, Path(args.figure))


def cmd_synth(args) -> None:
    modes = tuple(m for m in args.modes.split(",") if m)
    _echo({
        "command": "synth", "src": args.src, "generate": args.generate, "size": args.size,
        "strength": args.strength, "jitter": args.jitter, "seed": args.seed, "modes": modes, "out": args.out,
    })
    out = _prepare_out(Path(args.out), args.force)
    if args.src:
        clean = ((p.stem, read_image(p)) for p in _images_in(Path(args.src)))
        ds = materialize(out, clean, args.strength, args.seed, args.jitter, modes)
    elif args.generate:
        if set(modes) != {"over", "under"}:
            raise CliError("usage", "--generate always writes both modes", code=2)
        ds = generate_corpus(out, args.generate, args.size, args.strength, args.seed, args.jitter)
    else:
        raise CliError("usage", "give --src DIR or --generate N", code=2)
    print(json.dumps(ds.counts(), sort_keys=True))


def cmd_train(args) -> None:
    run = get_preset(args.preset)
    run = dataclasses.replace(run, seed=args.seed)
    if args.ablation:
        run = dataclasses.replace(run, ablation=args.ablation)
    run = apply_overrides(run, args.set or [])
    fractions = [float(v) for v in args.split.split(",")]
    if len(fractions) != 3:
        raise CliError("usage", "--split needs three comma-separated fractions", code=2)
    split = SplitSpec(*fractions, seed=args.seed)
    resolved = {"command": "train", "preset": args.preset, "data": args.data, "out": args.out,
                "run": run.to_dict(), "split": dataclasses.asdict(split), "max_frames": args.max_frames}
    _echo(resolved)

    ds = load_dataset(args.data)
    if args.max_frames:
        ds = ds.subset(ds.frames()[: args.max_frames])
    train, test, val = split_dataset(ds, split)
    out = _prepare_out(Path(args.out), args.force)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n")
    (out / "split.json").write_text(json.dumps(
        {"train": train.frames(), "test": test.frames(), "val": val.frames()}, indent=2) + "\n")

    result = run_two_phase(run, train, out, val_data=val if len(val) else ())
    write_log_csv(out / "train_log.csv", result.log)
    if result.log:
        plot_training_log(result.log, out / "train_log.png")
    if len(test):
        triples = dataset_triples(test, TRAINING_SETS[run.training_set])
        report = evaluate(result.generator, triples)
        (out / "eval_test.csv").write_text(report.to_csv())
        baseline = evaluate(lambda x: x, triples)
        plot_evaluation(report.rows, out / "eval_test.png", baseline.rows)
        print(f"test mean_psnr={report.mean_psnr:.4f} mean_ssim={report.mean_ssim:.4f} "
              f"(input mean_ssim={baseline.mean_ssim:.4f})")


def cmd_enhance(args) -> None:
    _echo({"command": "enhance", "ckpt": args.ckpt, "input": args.input, "out": args.out})
    ck = load_checkpoint(args.ckpt)
    files = _images_in(Path(args.input))
    out = _prepare_out(Path(args.out), args.force)
    for path in files:
        write_image(out / f"{path.stem}.png", enhance_image(ck.generator, read_image(path)))
    print(f"enhanced {len(files)} image(s) -> {out}")


def cmd_eval(args) -> None:
    params = SsimParams(peak=args.peak)
    _echo({"command": "eval", "pred": args.pred, "gt": args.gt, "peak": args.peak, "out": args.out,
           "ssim": dataclasses.asdict(params)})
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    gt_files = {p.stem: p for p in _images_in(gt_dir)}
    triples = []
    for path in _images_in(pred_dir):
        partner = gt_files.get(path.stem)
        if partner is None:
            raise CliError("input", f"{path} has no ground truth {gt_dir / path.name}")
        scale = args.peak
        triples.append((path.name, read_image(path).astype(np.float64) * scale,
                        read_image(partner).astype(np.float64) * scale))
    report = evaluate(lambda x: x, triples, params, peak=args.peak)
    sys.stdout.write(report.to_csv())
    if args.out:
        out = _prepare_out(Path(args.out), args.force)
        (out / "eval.csv").write_text(report.to_csv())
        plot_evaluation(report.rows, out / "eval.png")


# -- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="expocorr", description="Multi-scale exposure correction toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="write Gaussian and Laplacian pyramid levels as PNGs")
    p.add_argument("input")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--figure", help="also render a montage figure to this path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="build a gt/over/under corpus")
    p.add_argument("--src", help="folder of clean PNG frames")
    p.add_argument("--generate", type=int, default=0, help="number of procedural frames instead of --src")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--strength", type=float, default=0.5)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--modes", default="over,under")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="two-phase training from a preset")
    p.add_argument("--preset", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", choices=("full", "l1_only"))
    p.add_argument("--split", default="0.70,0.27,0.03", help="train,test,val fractions")
    p.add_argument("--max-frames", type=int, default=0, help="use only the first N ground-truth frames")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a preset field, e.g. phase1.epochs=3")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="apply a checkpoint to PNG images")
    p.add_argument("input", help="PNG file or folder")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM of predicted images against ground truth (CSV on stdout)")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--peak", type=float, default=1.0, choices=(1.0, 255.0))
    p.add_argument("--out", help="also write eval.csv and eval.png here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except CliError as exc:
        print(f"expocorr: error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, PyramidError, MetricError) as exc:
        print(f"expocorr: error: input: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ModelConfigError) as exc:
        print(f"expocorr: error: config: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"expocorr: error: checkpoint: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"expocorr: error: diverged: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"expocorr: error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
