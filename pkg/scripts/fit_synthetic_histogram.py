"""Simulate a peak-signal histogram in raw units and fit the mixture back.

    python3 scripts/fit_synthetic_histogram.py --shots 20000 --out fit
writes ``fit_hist.csv`` (edges, counts, model counts) and ``fit.json``.
"""

import argparse
import json

import numpy as np

from qreadout import fitting as ft
from qreadout.cli import write_csv
from qreadout.model import ReadoutConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--gamma", type=float, default=4.0)
    ap.add_argument("--tau-m", type=float, default=2.5)
    ap.add_argument("--snr", type=float, default=110.0)
    ap.add_argument("--tau-b", type=float, default=0.075)
    ap.add_argument("--p-plus", type=float, default=0.47)
    ap.add_argument("--scale", type=float, default=2.0, help="raw signal of a bright bin (I)")
    ap.add_argument("--shots", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="fit")
    args = ap.parse_args()

    n = ft.bins_for(args.tau_m, args.tau_b)
    cfg = ReadoutConfig(r=args.snr, gamma=args.gamma, tau_m=n * args.tau_b, n_bins=n, p_plus=args.p_plus)
    raw = ft.synthetic_peaks(cfg, args.shots, np.random.default_rng(args.seed), scale=args.scale)
    hist = ft.Histogram.from_samples(raw)
    res = ft.fit(hist, args.gamma, args.tau_m)
    model = hist.total * ft.bin_probabilities(hist, res.params, args.gamma, args.tau_m)
    rows = zip(hist.edges[:-1], hist.edges[1:], hist.counts, model)
    write_csv(["edge_lo", "edge_hi", "count", "model"], rows, f"{args.out}_hist.csv")
    out = res.to_json()
    out["truth"] = {"I": args.scale, "r": args.snr, "tau_b": args.tau_b, "p_plus": args.p_plus}
    with open(f"{args.out}.json", "w") as fh:
        json.dump(out, fh, indent=2)
    print(f"r={res.r:.1f} tau_b={res.tau_b:.4f} P(+)={res.p_plus:.4f} chi2/dof={res.chi2:.1f}/{res.dof}")


if __name__ == "__main__":
    main()
