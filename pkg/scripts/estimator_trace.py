"""Posterior P(+) along single records with a pulse placed by hand.

Each record is one column of ``p_plus_<k>``; the matching signal is ``psi_<k>``.
"""

import argparse

import numpy as np

from qreadout import mlfilter as ml
from qreadout.cli import write_csv
from qreadout.model import INF, PulseTimes, QubitState, ReadoutConfig, generate_continuous_trace, shot_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", default="4")
    ap.add_argument("--snr", type=float, default=30.0)
    ap.add_argument("--tau-m", type=float, default=ml.ML_TAU_M)
    ap.add_argument("--t-i", type=float, default=1.0)
    ap.add_argument("--t-f", type=float, default=2.0)
    ap.add_argument("--records", type=int, default=3)
    ap.add_argument("--dt", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="estimator.csv")
    args = ap.parse_args()
    gamma = INF if args.gamma == "inf" else float(args.gamma)
    cfg = ReadoutConfig(r=args.snr, gamma=gamma, tau_m=args.tau_m)

    cols, header = [], ["t"]
    pulse = PulseTimes(args.t_i, args.t_f)
    for k in range(args.records):
        state = QubitState.PLUS if k % 2 == 0 else QubitState.MINUS
        trace = generate_continuous_trace(cfg, args.dt, state, shot_rng(args.seed, k), pulse=pulse if state is QubitState.PLUS else None)
        traj = ml.integrate_estimator(trace, cfg)
        if not cols:
            cols.append(traj.times)
        cols += [np.concatenate([[np.nan], trace.samples])[: traj.times.size], traj.p_plus]
        header += [f"psi_{k}", f"p_plus_{k}"]
    write_csv(header, zip(*cols), args.out)


if __name__ == "__main__":
    main()
