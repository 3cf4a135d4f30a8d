"""Recompute the frozen oracle values in tests/oracles.py from first principles.

Nothing here imports the package's closed forms.  Each value is an integral
of the model definition (exponential pulse times, Gaussian bin noise)
evaluated with mpmath at elevated precision.

    python3 scripts/freeze_oracles.py > /tmp/oracles.txt
"""

from __future__ import annotations

import mpmath as mp

mp.mp.dps = 20


def ncdf(x, mu, s):
    return mp.ncdf((x - mu) / s)


def npdf(x, mu, s):
    return mp.npdf(x, mu, s)


def bin_means(t_i, t_f, n, tau_b):
    out = []
    for l in range(n):
        lo, hi = l * tau_b, (l + 1) * tau_b
        ov = max(mp.mpf(0), min(hi, t_f) - max(lo, t_i))
        out.append(2 * ov / tau_b - 1)
    return out


def peak_cdf_plus(psi, gamma, tau_m, n, r):
    """P(max_l bin_l < psi | +) by direct integration over (t_i, t_f)."""
    tau_b = mp.mpf(tau_m) / n
    s = 1 / mp.sqrt(r * tau_b)
    edges = [l * tau_b for l in range(n + 1)]

    def given(t_i, t_f):
        p = mp.mpf(1)
        for mu in bin_means(t_i, t_f, n, tau_b):
            p *= ncdf(psi, mu, s)
        return p

    def inner(t_i):
        pts = [t_i] + [e for e in edges if e > t_i]
        # once t_f passes the window the bin means stop changing
        tail = mp.exp(-(tau_m - t_i)) * given(t_i, tau_m)
        return mp.quad(lambda t_f: mp.exp(-(t_f - t_i)) * given(t_i, t_f), pts) + tail

    if gamma == mp.inf:
        return inner(mp.mpf(0))
    g = mp.mpf(gamma)
    inside = mp.quad(lambda t: g * mp.exp(-g * t) * inner(t), edges)
    missed = mp.exp(-g * tau_m) * ncdf(psi, -1, s) ** n
    return inside + missed


def boxcar_eps(nu, gamma, tau_m, r):
    """Balanced error rate of the rule psi_bar > nu."""
    return (peak_cdf_plus(nu, gamma, tau_m, 1, r) + 1 - ncdf(nu, -1, 1 / mp.sqrt(r * tau_m))) / 2


def cell(m, n, gamma, tau_b):
    g = mp.mpf(gamma)
    f = lambda ti, tf: g * mp.exp(-g * ti) * mp.exp(-(tf - ti)) if tf >= ti else 0
    if m == n:
        lo, hi = m * tau_b, (m + 1) * tau_b
        return mp.quad(lambda ti: mp.quad(lambda tf: f(ti, tf), [ti, hi]), [lo, hi])
    return mp.quad(lambda ti: mp.quad(lambda tf: f(ti, tf), [n * tau_b, (n + 1) * tau_b]), [m * tau_b, (m + 1) * tau_b])


def h_def(psi, alpha, tau_b, r):
    s = 1 / mp.sqrt(r * tau_b)
    return mp.quad(lambda u: mp.exp(-alpha * tau_b * (u + 1) / 2) * npdf(psi - u, 0, s), [-1, 1])


def main():
    print("BIN_PDF_0_M1_05 =", mp.nstr(npdf(0, -1, mp.mpf("0.5")), 20))
    print("CELL_2_5_G4_TB03 =", mp.nstr(cell(2, 5, 4, mp.mpf("0.3")), 20))
    alpha, tb, r = mp.mpf(-3), mp.mpf("0.075"), 110
    hv = h_def(mp.mpf("0.3"), alpha, tb, r)
    s = 1 / mp.sqrt(r * tb)
    Hv = ncdf(mp.mpf("0.3"), -1, s) - mp.exp(-alpha * tb) * ncdf(mp.mpf("0.3"), 1, s) - hv
    print("H_SMALL_0P3 =", mp.nstr(hv, 20))
    print("BIG_H_0P3 =", mp.nstr(Hv, 20))
    print("BOXCAR_EPS_G4_T3_R100_NU_M06 =", mp.nstr(boxcar_eps(mp.mpf("-0.6"), 4, 3, 100), 20))
    print("PEAK_CDF_PLUS_N3_TM12_R20 = [")
    for gamma in (4, 1, mp.inf):
        for psi in ("-0.5", "0.2", "0.9", "1.3"):
            v = peak_cdf_plus(mp.mpf(psi), gamma, mp.mpf("1.2"), 3, 20)
            g = "inf" if gamma == mp.inf else float(gamma)
            print(f"    ({g!r}, {psi}, {mp.nstr(v, 17)}),", flush=True)
    print("]")


if __name__ == "__main__":
    main()
