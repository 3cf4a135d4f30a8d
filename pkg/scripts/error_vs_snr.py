"""Optimized boxcar and peak error rates against r, plus the distributions at one point.

Writes ``<out>_eps.csv`` (r, filter, gamma, eps, nu, tau_m, n_bins) and
``<out>_dists.csv`` with both filters' densities at the optimum for ``--dist-r``.
"""

import argparse

import numpy as np

from qreadout import error_rate as er
from qreadout.cli import write_csv
from qreadout.distributions import dists_for
from qreadout.model import INF, ReadoutConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", default="4", help="turn-on rate, or 'inf'")
    ap.add_argument("--r-min", type=float, default=10.0)
    ap.add_argument("--r-max", type=float, default=1000.0)
    ap.add_argument("--points", type=int, default=9)
    ap.add_argument("--dist-r", type=float, default=30.0)
    ap.add_argument("--out", default="eps")
    args = ap.parse_args()
    gamma = INF if args.gamma == "inf" else float(args.gamma)

    rows = []
    for r in np.geomspace(args.r_min, args.r_max, args.points):
        for kind in er.FILTERS:
            res = er.optimize_filter(kind, float(r), gamma)
            rows.append([float(r), kind, gamma, res.eps, res.nu, res.tau_m, res.n_bins])
            print(f"r={r:8.2f} {kind:6s} eps={100 * res.eps:.3f}%", flush=True)
    write_csv(["r", "filter", "gamma", "eps", "nu", "tau_m", "n_bins"], rows, f"{args.out}_eps.csv")

    psi = np.linspace(-2.0, 2.0, 401)
    cols = [psi]
    for kind in er.FILTERS:
        res = er.optimize_filter(kind, args.dist_r, gamma)
        n = 1 if kind == "boxcar" else res.n_bins_int
        cfg = ReadoutConfig(r=args.dist_r, gamma=gamma, tau_m=res.tau_m, n_bins=n)
        minus, plus = dists_for(cfg, kind)
        cols += [minus.pdf(psi), plus.pdf(psi)]
    header = ["psi", "boxcar_minus", "boxcar_plus", "peak_minus", "peak_plus"]
    write_csv(header, zip(*cols), f"{args.out}_dists.csv")


if __name__ == "__main__":
    main()
