"""Run every bundled config (or a subset) through the command line tool.

    python scripts/reproduce_figures.py --out results
    python scripts/reproduce_figures.py --out results --only fig2_regime3 fig6_plain
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from kgssw.cli import main as kgssw_main
from kgssw.config import bundled_names


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results", help="parent output directory")
    p.add_argument("--only", nargs="*", default=None, help="bundled config names to run")
    p.add_argument("--threads", type=int, default=1)
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    names = args.only or bundled_names()
    unknown = sorted(set(names) - set(bundled_names()))
    if unknown:
        print(f"unknown configs: {', '.join(unknown)}", file=sys.stderr)
        return 1
    failed = []
    for name in names:
        t0 = time.perf_counter()
        code = kgssw_main(["--quiet", "run", "--config", name, "--out", str(Path(args.out) / name),
                           "--threads", str(args.threads)])
        print(f"{name:22s} exit {code}  {time.perf_counter() - t0:7.1f} s", flush=True)
        if code:
            failed.append(name)
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
