"""Command-line interface.

Subcommands: ``datagen``, ``train``, ``eval``, ``ablate``, ``sweep``,
``gradcheck``, ``defaults``.

Exit codes: 0 success, 2 for validation/configuration errors (bad inputs,
inconsistent flags, missing paths), 1 for runtime failures (training
divergence, frozen-encoder drift, manifest mismatches).

Configs are JSON files matching the ``RunConfig`` schema; ``defaults``
prints a complete, commented-by-schema listing to start from. Individual
fields can be overridden on the command line with ``--set key=value``.
The ``TAMPERLOC_DETERMINISTIC`` environment variable (0/1) overrides the
config's deterministic flag.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig
from .datagen import make_dataset
from .errors import ValidationError
from .gradcheck import run_gradcheck
from .train import ablate, evaluate, model_from_checkpoint, sweep, train


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
        cfg = RunConfig.from_json(text)
    elif getattr(args, "desk", False):
        cfg = RunConfig.desk()
    else:
        cfg = RunConfig()
    overrides = getattr(args, "set", None) or []
    if overrides:
        data = cfg.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ValidationError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                data[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                data[key.strip()] = raw
        cfg = RunConfig.from_dict(data)
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (see `defaults`)")
    p.add_argument("--desk", action="store_true",
                   help="use the CPU-scale preset instead of full-size defaults")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config field (JSON-parsed value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tamperloc",
        description="Frequency-plus-semantics image manipulation localization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    p.add_argument("--mix", help="JSON object of category fractions")

    p = sub.add_parser("train", help="train a model")
    _add_config_args(p)
    p.add_argument("--train-dir", required=True)
    p.add_argument("--val-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="where to write the JSON report (default stdout)")

    p = sub.add_parser("ablate", help="train/evaluate the component ladder")
    _add_config_args(p)
    p.add_argument("--train-dir", required=True)
    p.add_argument("--val-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("sweep", help="robustness sweep over blur/JPEG severities")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blur", default="0,1,2,3", help="comma-separated sigmas")
    p.add_argument("--jpeg", default="100,80,60,40", help="comma-separated qualities")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--per-tensor", type=int, default=2,
                   help="coordinates sampled per parameter tensor")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("defaults", help="print a complete default config as JSON")
    p.add_argument("--desk", action="store_true", help="print the CPU-scale preset")

    return parser


def _cmd_datagen(args) -> int:
    mix = json.loads(args.mix) if args.mix else None
    manifest = make_dataset(args.out, n=args.n, seed=args.seed, size=args.size, mix=mix)
    print(f"wrote {args.n} samples; manifest at {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    result = train(cfg, args.train_dir, args.val_dir, args.out,
                   resume_from=args.resume, quiet=not args.verbose)
    print(
        f"best val pixel F1 {result.best_f1:.4f} at epoch {result.best_epoch}; "
        f"checkpoints under {result.best_checkpoint.parent}"
    )
    return 0


def _cmd_eval(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    report = evaluate(model, args.corpus)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"report written to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    rows = ablate(cfg, args.train_dir, args.val_dir, args.out,
                  quiet=not args.verbose)
    for row in rows:
        f1 = "-" if row["pixel_f1"] is None else f"{row['pixel_f1']:.4f}"
        err = f"  [{row['error']}]" if row["error"] else ""
        print(f"{row['variant']:>16}  pixel_f1={f1}{err}")
    if any(row["error"] for row in rows):
        return 1
    return 0


def _cmd_sweep(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    blur = tuple(float(x) for x in args.blur.split(","))
    jpeg = tuple(int(x) for x in args.jpeg.split(","))
    result = sweep(model, args.corpus, args.out, blur_sigmas=blur, jpeg_qualities=jpeg)
    print(f"tables and plots under {result['out_dir']}")
    if result["plot_error"]:
        print(f"warning: plot emission failed: {result['plot_error']}", file=sys.stderr)
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(h=args.h, per_tensor=args.per_tensor,
                           threshold=args.threshold, seed=args.seed)
    print(report.summary())
    return 0 if report.passed else 1


def _cmd_defaults(args) -> int:
    cfg = RunConfig.desk() if args.desk else RunConfig()
    print(cfg.to_json(), end="")
    return 0


_DISPATCH = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "defaults": _cmd_defaults,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
