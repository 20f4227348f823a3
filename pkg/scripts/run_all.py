"""Run every experiment family on one config and print the findings.

    python3 scripts/run_all.py configs/small.json [--only observe sweep]
"""
import argparse
import time
from pathlib import Path

from sinklab.harness.config import load_config
from sinklab.harness.families import FAMILIES, run_family


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config", type=Path)
    p.add_argument("--only", nargs="*", choices=sorted(FAMILIES), default=None)
    args = p.parse_args()
    config = load_config(args.config)
    for family in args.only or list(FAMILIES):
        t0 = time.perf_counter()
        out = Path(config.output.dir) / family
        res = run_family(family, config, out)
        print(f"== {family}: {len(res.records)} records in {time.perf_counter() - t0:.1f}s -> {out}")
        for f in res.analysis.findings:
            print(f"   {f.question} {f.answer} ({f.evidence})")


if __name__ == "__main__":
    main()
