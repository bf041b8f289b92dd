"""Command line entry point.

    kgssw run --config FILE --out DIR          # kind taken from the config
    kgssw evolve --config FILE --out DIR       # same, kind forced
    kgssw validate --config FILE               # schema check only

Exit status: 0 success, 1 configuration error, 2 numerical failure.
Outputs are staged in a temporary directory and moved into ``--out`` only
after the whole run succeeded.  ``--config`` also accepts the name of a
bundled config (see ``kgssw list``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .backreaction import BackReactionInstability
from .config import KINDS, ConfigError, bundled, bundled_names, load
from .experiments import execute, manifest
from .spectral import SpectrumError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
THREADS_ENV = "KGSSW_THREADS"

log = logging.getLogger("kgssw")


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.suffix:
        return p
    try:
        return bundled(path)
    except FileNotFoundError:
        return p


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{THREADS_ENV}={raw!r} is not an integer"]) from None
    if n < 1:
        raise ConfigError([f"{THREADS_ENV} must be >= 1"])
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgssw", description="Klein-Gordon pair creation experiments")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="config file or bundled config name")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--threads", type=int, default=None,
                           help=f"worker threads (default ${THREADS_ENV} or 1)")
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    common(sub.add_parser("run", help="run the kind named in the config"))
    for kind in KINDS:
        common(sub.add_parser(kind, help=f"run a {kind} experiment"))
    common(sub.add_parser("validate", help="check a config without running it"), needs_out=False)
    sub.add_parser("list", help="list bundled configs")
    return parser


def _write_outputs(out_dir: Path, files: dict, man: dict) -> None:
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out_dir.parent, prefix=".kgssw-") as tmp:
        tmp = Path(tmp)
        for name, text in files.items():
            (tmp / name).write_text(text)
        (tmp / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        out_dir.mkdir(exist_ok=True)
        for f in sorted(tmp.iterdir()):
            shutil.move(str(f), out_dir / f.name)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        print("\n".join(bundled_names()))
        return EXIT_OK
    try:
        kind = None if args.command in ("run", "validate") else args.command
        cfg = load(_resolve(args.config), kind=kind)
        if args.command == "validate":
            return EXIT_OK
        threads = args.threads if args.threads is not None else cfg.get("threads") or default_threads()
        if threads < 1:
            raise ConfigError(["--threads must be >= 1"])
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(line, file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = execute(cfg, threads=threads)
    except (SpectrumError, BackReactionInstability, np.linalg.LinAlgError, RuntimeError,
            FloatingPointError, ValueError) as exc:
        mod = type(exc).__module__.split(".")[-1]
        print(f"numerical failure in {mod} ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    consts = cfg.constants()
    man = manifest(cfg, result, consts, cfg.grid(consts))
    _write_outputs(Path(args.out), result.files, man)
    if not args.quiet:
        print(json.dumps(result.summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
