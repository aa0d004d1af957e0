"""Command-line entry points: synth, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .architectures import build_model
from .checkpoint import load_checkpoint
from .config import PRESETS, RunConfig, apply_overrides, load_config
from .data import Dataset, load_dataset, make_synthetic, read_split, save_dataset, write_split, SYNTH_PRESETS
from .errors import DscnnError, NumericError
from .gradcheck import finite_diff_check, jitter_biases
from .metrics import binarize, compare_report, evaluate
from .objectives import SupervisionWeights, total_objective
from .pgm import read_pgm, to_8bit, write_pgm
from .tensor import Tensor, no_grad
from .training import train_run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _select(dataset: Dataset, split_file: str, section: str) -> Dataset:
    if not split_file:
        return dataset
    return dataset.subset(read_split(split_file)[section])


def cmd_synth(args) -> int:
    ds = make_synthetic(args.n, args.size, args.difficulty, args.seed, args.per_source)
    out = Path(args.out)
    save_dataset(ds, out)
    if args.test_sources:
        train, test = ds.split(args.test_sources, seed=args.seed)
        write_split(out / "split.txt", train.source_ids(), test.source_ids())
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


_TRAIN_FLAGS = {
    "model": str, "base_channels": int, "alpha": str, "main_weight": float, "lr": float,
    "momentum": float, "weight_decay": float, "schedule": str, "lr_gamma": float,
    "lr_period": int, "steps": int, "batch_size": int, "seed": int, "data_root": str,
    "split_file": str, "checkpoint": str, "checkpoint_every": int,
}


def cmd_train(args) -> int:
    cfg = RunConfig()
    if args.preset:
        cfg = cfg.replace(**PRESETS[args.preset])
    if args.config:
        cfg = load_config(args.config, cfg)
    overrides = {k: getattr(args, k) for k in _TRAIN_FLAGS}
    if args.augment is not None:
        overrides["augment"] = args.augment
    cfg = apply_overrides(cfg, overrides).validate()
    if not cfg.data_root:
        raise UsageError("no dataset given (use --data-root or data_root in the config)")
    train = _select(load_dataset(cfg.data_root), cfg.split_file, "train")
    trainer = train_run(cfg, train, args.out, resume=args.resume)
    print(f"trained {cfg.model} to step {trainer.state.step}; run directory {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    test = _select(load_dataset(args.data_root), args.split_file, "test")
    labels = args.label or []
    summaries = []
    for i, path in enumerate(args.checkpoint):
        model, meta = load_checkpoint(path, expect_kind=args.model)
        label = labels[i] if i < len(labels) else f"{meta['kind']}:{Path(path).stem}"
        summaries.append(evaluate(model, test, label, args.threshold))
    table = compare_report(summaries)
    sys.stdout.write(table)
    if args.report:
        Path(args.report).write_text(table)
    return EXIT_OK


def _inputs(paths: list[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.pgm")) if p.is_dir() else [p])
    return files


def cmd_predict(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump = args.dump_heads
    if dump and model.m == 0:
        print(f"warning: {meta['kind']} model has no supervised heads; writing main masks only",
              file=sys.stderr)
        dump = False
    for path in _inputs(args.input):
        pixels, maxval = read_pgm(path)
        image = Tensor((pixels.astype(np.float32) / np.float32(maxval))[None, None])
        with no_grad():
            outputs = model.forward(image)
        mask = binarize(outputs[0], args.threshold).data[0, 0]
        write_pgm(out / f"{path.stem}_mask.pgm", mask.astype(np.uint8) * 255)
        if dump:
            for i, head in enumerate(outputs[1:], 1):
                write_pgm(out / f"{path.stem}_head{i}.pgm", to_8bit(head.data[0, 0]))
    print(f"wrote predictions to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.size > 32:
        raise UsageError("gradcheck is meant for inputs of at most 32x32")
    model = build_model(args.model, 1, args.base_channels, seed=args.seed)
    jitter_biases(model, seed=args.seed)
    sample = make_synthetic(1, args.size, "medium", seed=args.seed)[0]
    weights = SupervisionWeights.uniform(model.m)

    def loss_fn(outputs, mask):
        return total_objective(outputs[0], outputs[1:], mask, weights).tensor

    hook = None
    if args.corrupt:
        def hook(name, grad):
            grad[0] += 1.0
            return grad
    report = finite_diff_check(model, loss_fn, sample, h=args.h, tol=args.tol,
                               max_elements=args.samples, seed=args.seed, refine=args.refine,
                               grad_hook=hook)
    print(report.format(args.show))
    return EXIT_OK if report.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dscnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, default=40)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--difficulty", choices=sorted(SYNTH_PRESETS), default="easy")
    s.add_argument("--per-source", type=int, default=4, help="slices per source id")
    s.add_argument("--test-sources", type=int, default=0,
                   help="also write split.txt holding out this many sources")
    s.add_argument("--out", default="data")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--out", default="run", help="run directory")
    t.add_argument("--resume", help="checkpoint to continue from")
    for name, kind in _TRAIN_FLAGS.items():
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)
    t.add_argument("--augment", dest="augment", action="store_true", default=None)
    t.add_argument("--no-augment", dest="augment", action="store_false")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report Dice statistics for checkpoints")
    e.add_argument("--checkpoint", nargs="+", required=True)
    e.add_argument("--data-root", required=True)
    e.add_argument("--split-file", default="")
    e.add_argument("--label", nargs="*")
    e.add_argument("--model", choices=("unet", "dscnn"), help="expected model kind")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--report", help="also write the table to this file")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write predicted masks (and head maps)")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", nargs="+", required=True, help="PGM files or directories")
    r.add_argument("--out", default="pred")
    r.add_argument("--dump-heads", action="store_true")
    r.add_argument("--threshold", type=float, default=0.5)
    r.set_defaults(func=cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--model", choices=("unet", "dscnn"), default="dscnn")
    g.add_argument("--size", type=int, default=16)
    g.add_argument("--base-channels", type=int, default=4)
    g.add_argument("--h", type=float, default=1e-4)
    g.add_argument("--tol", type=float, default=1e-3)
    g.add_argument("--refine", type=int, default=2,
                   help="retries with h/10 for elements that miss tol (kink crossings)")
    g.add_argument("--samples", type=int, default=100, help="elements probed per parameter")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--show", type=int, default=5, help="worst parameters to print")
    g.add_argument("--corrupt", action="store_true", help="inject a gradient error (negative control)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dscnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"dscnn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DscnnError, OSError) as exc:
        print(f"dscnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
