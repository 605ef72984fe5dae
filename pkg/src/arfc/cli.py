"""Command-line entry point: ``arfc <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (non-finite values, failed gradient check or oracle).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import selftest
from .config import parse_config
from .data import DataError, SynthConfig, generate_synthetic, load_dataset, load_pgm, save_pgm, stack
from .metrics import EvalConfig, evaluate_split, roc_csv, roc_curve
from .network import NetConfig, ShapeError, build_network, infer_padded
from .tensor import ConfigError, NonFiniteError
from .tensorio import TensorFormatError, save_tensor
from .train import TrainConfig, TrainingError, load_checkpoint, loss_log_text, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("arfc")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arfc", description=__doc__.splitlines()[0])
    p.add_argument("--workdir", default=".", help="base directory for every relative path")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=SynthConfig.count)
    g.add_argument("--test-count", type=int, default=None, help="samples in the test split (default: count // 5)")
    g.add_argument("--size", type=int, default=SynthConfig.image_size)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--background", choices=("flat", "gradient", "cloud"), default=SynthConfig.background)
    g.add_argument("--config", help="key = value file with SynthConfig fields (flags override)")

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value file with network and training fields")
    t.add_argument("--out", required=True, help="run directory: checkpoint/ and loss.csv")
    t.add_argument("--split", default="train")
    t.add_argument("--epochs", type=int, help="override the configured epoch count")

    e = sub.add_parser("eval", help="write a metrics report")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="directory of <id>.pgm saliency maps or masks")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out", required=True)

    i = sub.add_parser("infer", help="saliency map and mask for one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--saliency-out", required=True, help="raw tensor file")
    i.add_argument("--mask-out", required=True, help="PGM file")
    i.add_argument("--threshold", type=float, default=0.5)

    r = sub.add_parser("roc", help="write the threshold,fpr,tpr table")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--split", default="test")
    r.add_argument("--steps", type=int, default=19, help="thresholds evenly spaced inside (0, 1)")
    r.add_argument("--out", required=True)

    gc = sub.add_parser("gradcheck", help="64-bit finite-difference suite")
    gc.add_argument("--only", nargs="*", choices=selftest.GRADIENT_CASES)
    gc.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("selftest", help="run the built-in oracle checks")
    s.add_argument("--seed", type=int, default=0)
    return p


def _path(args, p) -> Path:
    path = Path(p)
    return path if path.is_absolute() else Path(args.workdir) / path


def _read_config(args, *classes):
    text = _path(args, args.config).read_text() if getattr(args, "config", None) else ""
    return parse_config(text, *classes)


def cmd_gen_data(args) -> int:
    synth = _read_config(args, SynthConfig)
    test_count = args.count // 5 if args.test_count is None else args.test_count
    synth = SynthConfig(**{**vars(synth), "count": args.count, "test_count": test_count,
                           "image_size": args.size, "seed": args.seed, "background": args.background})
    out = generate_synthetic(synth, _path(args, args.out))
    print(f"wrote {synth.count} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    net_cfg, train_cfg = _read_config(args, NetConfig, TrainConfig)
    if args.epochs is not None:
        train_cfg = TrainConfig(**{**vars(train_cfg), "epochs": args.epochs})
    images, masks = stack(load_dataset(_path(args, args.data), args.split))
    net = build_network(net_cfg)
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = train(net, images, masks, train_cfg)
    save_checkpoint(net, out / "checkpoint")
    (out / "loss.csv").write_text(loss_log_text(history))
    print(f"final loss {history[-1].loss:.6f}; checkpoint in {out / 'checkpoint'}")
    return EXIT_OK


def _load_predictions(directory: Path, samples) -> list:
    return [load_pgm(directory / f"{s.id}.pgm") for s in samples]


def cmd_eval(args) -> int:
    samples = load_dataset(_path(args, args.data), args.split)
    if args.checkpoint:
        net = load_checkpoint(_path(args, args.checkpoint))
        saliency = [infer_padded(net, s.image)[1][0, 0] for s in samples]
    else:
        saliency = _load_predictions(_path(args, args.predictions), samples)
    report = evaluate_split(saliency, [s.mask for s in samples], EvalConfig(threshold=args.threshold))
    out = _path(args, args.out)
    out.write_text(report.csv())
    print(report.csv(), end="")
    return EXIT_OK


def cmd_infer(args) -> int:
    net = load_checkpoint(_path(args, args.checkpoint))
    image = load_pgm(_path(args, args.image))
    mask, saliency = infer_padded(net, image, args.threshold)
    save_tensor(_path(args, args.saliency_out), saliency)
    save_pgm(_path(args, args.mask_out), mask[0, 0].astype(np.uint8) * 255)
    print(f"{int(mask.sum())} foreground pixels")
    return EXIT_OK


def cmd_roc(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be positive")
    samples = load_dataset(_path(args, args.data), args.split)
    net = load_checkpoint(_path(args, args.checkpoint))
    saliency = [infer_padded(net, s.image)[1][0, 0] for s in samples]
    thresholds = np.linspace(1, 0, args.steps + 2)[1:-1]
    rows = roc_curve(saliency, [s.mask for s in samples], thresholds)
    _path(args, args.out).write_text(roc_csv(rows))
    return EXIT_OK


def _report(results) -> int:
    print(selftest.format_results(results))
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise NumericFailure(f"failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    return _report(selftest.run_gradient_suite(args.seed, args.only))


def cmd_selftest(args) -> int:
    return _report(selftest.run_oracles(args.seed))


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "roc": cmd_roc, "gradcheck": cmd_gradcheck, "selftest": cmd_selftest}


def _thread_limit():
    value = os.environ.get("ARFC_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"ARFC_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"ARFC_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        limiter = _thread_limit()
        try:
            return COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, TrainingError, NumericFailure) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TensorFormatError, ShapeError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
