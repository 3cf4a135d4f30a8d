"""Optimal measurement time and bin count against r for both turn-on regimes."""

import argparse

import numpy as np

from qreadout import error_rate as er
from qreadout.cli import write_csv
from qreadout.model import INF


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--r-min", type=float, default=1e2)
    ap.add_argument("--r-max", type=float, default=1e4)
    ap.add_argument("--points", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="window.csv")
    args = ap.parse_args()

    grid = np.geomspace(args.r_min, args.r_max, args.points)
    rows = []
    for gamma in (4.0, INF):
        for kind in er.FILTERS:
            for row in er.scaling_study(kind, gamma, grid, workers=args.workers):
                rows.append([row.r, kind, gamma, row.eps, row.tau_m, row.n_bins, row.eps_sqrt_r_over_ln_r, row.eps_r_over_ln_r])
                print(f"G={gamma:g} {kind:6s} r={row.r:9.1f} tau_M*={row.tau_m:.3f} N*={row.n_bins:.2f}", flush=True)
    header = ["r", "filter", "gamma", "eps", "tau_m", "n_bins", "eps_sqrt_r_over_ln_r", "eps_r_over_ln_r"]
    write_csv(header, rows, args.out)


if __name__ == "__main__":
    main()
