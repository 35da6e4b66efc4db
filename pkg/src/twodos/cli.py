"""Command line entry point: ``twodos {ber,uncoded,threshold,validate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .channel import ChannelError
from .denevo import DensityError
from .harness import ConfigError, ExperimentConfig
from .ldpc import CodeError
from .lattice import LatticeError


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(s: str) -> int:
    v = int(s)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twodos", description="Joint LDPC / 2D-ISI decoding experiments")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "ber": "coded BER sweep over operating points and iteration limits",
        "uncoded": "uncoded baseline BER with channel-only detection",
        "threshold": "density-evolution noise thresholds per ensemble",
        "validate": "run the brute-force oracle suites",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        sp.add_argument("--out", type=Path, help="output CSV path (default: stdout)")
        sp.add_argument("--threads", type=_positive, help="worker threads (overrides the config)")
    return p


def _load(args) -> ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.output = str(args.out)
    return cfg


def _emit(cfg: ExperimentConfig, text: str, from_cli: Optional[Path]) -> Optional[Path]:
    if from_cli is not None:
        path = from_cli
    elif cfg.output is not None:
        path = cfg.resolve(cfg.output)
    else:
        sys.stdout.write(text)
        return None
    path.write_text(text)
    return path


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        if args.command == "validate":
            results = harness.run_validate(cfg)
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1
        if args.command == "threshold":
            rows = harness.run_threshold(cfg)
            _emit(cfg, harness.format_threshold_csv(rows), args.out)
            return 0 if all(r.status == "ok" for r in rows) else 1
        coded = args.command == "ber"
        cfg.validate(args.command)
        setup = harness.build_code(cfg) if coded else harness.build_uncoded(cfg)
        run = harness.run_ber if coded else harness.run_uncoded_baseline
        records = run(cfg, setup)
        path = _emit(cfg, harness.format_ber_csv(records), args.out)
        meta = harness.ber_metadata(cfg, setup, coded)
        if path is not None:
            harness.write_metadata(path.with_name(path.name + ".meta.json"), meta)
        if not coded:
            print(f"note: uncoded detector is {harness.UNCODED_DETECTOR}", file=sys.stderr)
        return 0
    except (ConfigError, ChannelError, CodeError, LatticeError, DensityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
