"""Command-line entry point: ``python -m sinklab <command> --config cfg.json``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, PairingError, SanityGateError, VerificationGateError
from .config import load_config
from .families import FAMILIES, regenerate_report, run_family

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SANITY = 3
EXIT_VERIFICATION = 4
EXIT_PAIRING = 5

HELP = {
    "observe": "sink statistics on baseline generations (MaxMass, entropy, top-5, index-0, modality)",
    "intervene": "configured conditions vs baseline",
    "sweep": "score-path eta sweep and value-path mode sweep",
    "ksweep": "union-budget masking budget sweep with equivalence table",
    "specificity": "sink vs equal-budget random masking, difference-of-differences and trend",
    "robustness": "multi-layer, phase-gated and text/image attribution ablations",
    "calibrate": "seed / step-count / conditioning-strength noise floors",
    "sanity": "no-op processor gate only",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sinklab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in FAMILIES:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None,
                        help="run directory (default: <output.dir>/<command>)")
        if name == "intervene":
            sp.add_argument("--condition", default=None, help="run only this named condition")
    rp = sub.add_parser("report", help="regenerate tables, summary and plots from a run directory")
    rp.add_argument("run_dir", type=Path)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            regenerate_report(args.run_dir)
            print(f"report regenerated in {args.run_dir}")
            return EXIT_OK
        config = load_config(args.config)
        out = args.out if args.out is not None else Path(config.output.dir) / args.command
        result = run_family(args.command, config, out, getattr(args, "condition", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SanityGateError as exc:
        print(f"sanity gate failed: {exc}", file=sys.stderr)
        return EXIT_SANITY
    except VerificationGateError as exc:
        print(f"verification gate failed: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except PairingError as exc:
        print(f"pairing error: {exc}", file=sys.stderr)
        return EXIT_PAIRING
    print(f"{args.command}: {len(result.records)} records -> {out}")
    for f in result.analysis.findings:
        print(f"  {f.question} {f.answer} ({f.evidence})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
