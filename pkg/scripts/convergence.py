"""Grid convergence of regimes and growth rates.

For each representative potential strength the spectrum is recomputed at
several N (fixed box length) and the regime label, the number of bound
complex pairs and 2|Im E| of the fastest bound pair are tabulated.

    python scripts/convergence.py --N 256 512 1024 --out convergence.csv
"""
from __future__ import annotations

import argparse
import csv
import sys

from kgssw.core import PhysicalConstants, make_grid
from kgssw.fields import FieldConfig, SmoothBox, SmoothStep, SmoothStepY, TransverseMomenta
from kgssw.spectral import analyze, regime_classify

CASES = [("box", -2.17), ("box", -2.195), ("box", -2.22), ("box", -2.25),
         ("step_b", 2.6), ("step_b", 2.9), ("step_b", 3.07), ("step_b", 3.2), ("step_b", 3.4)]


def fields(family: str, V0: float, c: PhysicalConstants) -> FieldConfig:
    mc2, lc = c.rest_energy, c.lambda_C
    if family == "box":
        return FieldConfig(SmoothBox(V0 * mc2, 2.2 * lc, 0.2 * lc))
    A0 = 2.64 * c.m * c.c / c.q
    return FieldConfig(SmoothStep(V0 * mc2, 0.3 * lc), SmoothStepY(A0, 2.2 * lc),
                       TransverseMomenta(p_y=0.5 * A0 * c.q))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, nargs="+", default=[256, 512, 1024])
    p.add_argument("--L", type=float, default=30.0, help="box length in lambda_C")
    p.add_argument("--out", default=None, help="optional CSV path")
    args = p.parse_args(argv)

    c = PhysicalConstants()
    rows = []
    for family, V0 in CASES:
        for N in args.N:
            lab = analyze(make_grid(N, args.L * c.lambda_C, c), fields(family, V0, c), c)
            pairs = lab.bound_pairs()
            rate = max((2 * abs(lab.energies[i].imag) for i, _ in pairs), default=0.0) / c.rest_energy
            row = dict(family=family, V0=V0, N=N, regime=regime_classify(lab),
                       bound_pairs=len(pairs), rate=f"{rate:.8f}")
            rows.append(row)
            print("  ".join(f"{k}={v}" for k, v in row.items()), flush=True)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
