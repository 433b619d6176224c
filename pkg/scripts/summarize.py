"""Shared helper: print a median sensing-SINR table from a sweep CSV."""

import csv
import math
import os
import statistics
from collections import defaultdict


def print_summary(out_dir, param_col):
    path = os.path.join(out_dir, "results.csv")
    groups = defaultdict(list)
    with open(path) as f:
        for row in csv.DictReader(f):
            if row["feasible"] == "1":
                groups[(row["scheme"], float(row[param_col]))].append(
                    float(row["gamma_bs"]))
    schemes = sorted({s for s, _ in groups})
    values = sorted({v for _, v in groups})
    width = max(len(s) for s in schemes) + 2
    header = f"{'scheme':<{width}}" + "".join(
        f"{param_col}={v:<10g}" for v in values)
    print(header)
    print("-" * len(header))
    for s in schemes:
        cells = []
        for v in values:
            g = groups.get((s, v))
            cells.append(f"{10 * math.log10(statistics.median(g)):<{10 + len(param_col) + 1}.3f}"
                         if g else " " * (11 + len(param_col)))
        print(f"{s:<{width}}" + "".join(cells))
    print(f"\n(median gamma_bs in dB over seeds; full data in {path})")
