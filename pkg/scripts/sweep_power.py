#!/usr/bin/env python3
"""Sensing SINR vs. transmit power budget, all schemes.

Writes results.csv (+ per-run traces) under --out and prints a median
summary table in dB.
"""

import argparse
import sys

from starisac.cli import run_sweep
from starisac.scenario import Scenario

from summarize import print_summary


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/power_sweep")
    ap.add_argument("--values", default="1,2,5,10",
                    help="comma list of power budgets in watts")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--schemes", default=None,
                    help="comma list of schemes (default: all)")
    ap.add_argument("--elements", type=int, default=8)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    scn = Scenario(n_antennas=4, n_elements=args.elements, n_users=2,
                   n_scatterers=2, rate_threshold=(2.0, 2.0),
                   epsilon_outer=1e-3)
    from starisac.driver import Scheme
    schemes = args.schemes.split(",") if args.schemes \
        else [s.value for s in Scheme]
    values = [float(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    n_err = run_sweep(scn, schemes, "p_max_watts", values, seeds,
                      args.out, jobs=args.jobs)
    print_summary(args.out, "P_max")
    return 1 if n_err else 0


if __name__ == "__main__":
    sys.exit(main())
