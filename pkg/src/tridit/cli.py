"""Command-line entry point: ``tridit {train,sample,eval,check} --config PATH``.

Exit codes: 0 success, 1 usage error, 2 configuration error or missing
input file, 3 numerical failure (including a failing property check).
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import checks, experiment
from .config import ConfigError, ExperimentConfig, load_config
from .io import ContainerError
from .metrics import MetricError
from .sampler import SamplerConfig
from .tensor import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tridit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: out_dir from the config)")

    p = sub.add_parser("train", help="train and write a checkpoint plus loss log")
    common(p)
    p.add_argument("--steps", type=int, help="override train.steps")

    p = sub.add_parser("sample", help="generate latent pairs from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.ckp)")
    p.add_argument("--cfg-scale", type=float, dest="cfg_scale", help="override sample.guidance")

    p = sub.add_parser("eval", help="score generated samples against held-out synthetic data")
    common(p)
    p.add_argument("--samples", help="sample container (default: <out>/samples.tns)")
    p.add_argument("--embeddings", nargs=2, action="append", metavar=("GEN", "REF"),
                   help="score a pair of embedding files instead of samples (repeatable)")

    p = sub.add_parser("check", help="run the property suite")
    common(p)
    return parser


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        if args.steps < 0:
            raise UsageError("--steps must be nonnegative")
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, steps=args.steps))
    if getattr(args, "cfg_scale", None) is not None:
        s = cfg.sample
        try:
            cfg = dataclasses.replace(cfg, sample=SamplerConfig(s.steps, s.solver, args.cfg_scale, s.grid))
        except ValueError as exc:
            raise UsageError(f"--cfg-scale: {exc}") from None
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=str(out))
    return cfg, out


def _run(args) -> int:
    cfg, out = _resolve(args)
    if args.command == "train":
        result = experiment.train(cfg, out)
        losses = result.losses
        last = f"{losses[-1]:.6g}" if losses else "n/a"
        print(f"trained {len(losses)} steps, final loss {last}, checkpoint {result.checkpoint}")
    elif args.command == "sample":
        ckpt = Path(args.checkpoint) if args.checkpoint else out / experiment.CHECKPOINT_NAME
        path = experiment.sample(cfg, ckpt, out)
        print(f"wrote {path}")
    elif args.command == "eval":
        if args.embeddings:
            report = experiment.embedding_report(args.embeddings)
            out.mkdir(parents=True, exist_ok=True)
            experiment.write_report(out / experiment.REPORT_NAME, report)
        else:
            samples = Path(args.samples) if args.samples else out / experiment.SAMPLES_NAME
            report = experiment.evaluate(cfg, samples, out)
        for name, value in report.items():
            print(f"{name}={value:.6g}")
    else:
        results = checks.run_all(cfg.seed)
        for r in results:
            print(r.line())
        if not all(r.passed for r in results):
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _run(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, experiment.MissingArtifact, ContainerError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, MetricError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
