"""Closed-form conditional distributions of the peak and boxcar statistics.

The peak signal is the largest of ``N`` independent Gaussian bin averages.
For the ``PLUS`` state the bins containing the pulse edges have a mean that
depends on where the edge falls inside the bin; averaging over those
positions gives the "edge bin" distributions ``p_if, p_i, p_f`` below.
Summing over all edge placements produces geometric sums over bin indices,
which are carried out in closed form (and extend to fractional ``N``).

Both the densities and their CDFs are closed form.  The CDF of ``PLUS`` is a
weighted sum of products of CDFs; its density is obtained by the product
rule, so no ``pdf/cdf`` ratio of two tiny numbers is ever formed except the
Gaussian inverse Mills ratio, which is computed from logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import special as sp
from .model import PulseTimes, QubitState, ReadoutConfig, interval_means

_ALPHA_SERIES_TOL = 1e-3


@dataclass(frozen=True)
class DistPair:
    """Density and CDF of a scalar statistic, with a finite support hint."""

    pdf: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]

    def mass(self, lo=None, hi=None, epsabs=1e-12) -> float:
        lo = self.support[0] if lo is None else lo
        hi = self.support[1] if hi is None else hi
        return quad_pdf(self.pdf, lo, hi, epsabs=epsabs)


def quad_pdf(pdf, lo, hi, epsabs=1e-12, points=None, limit=400) -> float:
    """Adaptive Gauss-Kronrod integral of a vectorized density."""
    if hi <= lo:
        return 0.0
    f = lambda x: float(pdf(np.array([x]))[0])
    pts = None if points is None else [p for p in points if lo < p < hi]
    val, _ = quad(f, lo, hi, epsabs=epsabs, epsrel=1e-12, limit=limit, points=pts or None)
    return val


def bin_pdf(psi, phi, sigma):
    """Density of one bin average with noise-free mean ``phi``."""
    return sp.norm_pdf(psi, phi, sigma)


def bin_cdf(psi, phi, sigma):
    return sp.norm_cdf(psi, phi, sigma)


def support_hint(sigma: float) -> tuple[float, float]:
    return (-1.0 - 10.0 * sigma, 1.0 + 10.0 * sigma)


@dataclass(frozen=True)
class NormConstants:
    D_if: float
    D_i: float
    D_f: float


def norm_constants(gamma: float, tau_b: float) -> NormConstants:
    """Probabilities that one bin holds both edges / only ``t_i`` / only ``t_f``,
    up to the bin-index factors."""
    D_f = -math.expm1(-tau_b)
    if math.isinf(gamma):
        return NormConstants(D_f, 1.0, D_f)
    x = (gamma - 1.0) * tau_b
    # phi1 carries the removable singularity at gamma = 1
    D_i = gamma * tau_b * float(sp.phi1(x))
    D_if = -math.expm1(-gamma * tau_b) - math.exp(-tau_b) * D_i
    return NormConstants(D_if, D_i, D_f)


def cell_prob(m: int, n: int, gamma: float, tau_b: float) -> float:
    """Probability that ``t_i`` lands in bin ``m`` and ``t_f`` in bin ``n``."""
    if n < m or m < 0:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={n}")
    c = norm_constants(gamma, tau_b)
    if math.isinf(gamma):
        if m > 0:
            return 0.0
        return c.D_f if n == 0 else c.D_f * math.exp(-tau_b * n)
    if m == n:
        return c.D_if * math.exp(-gamma * tau_b * m)
    return c.D_i * c.D_f * math.exp(-gamma * tau_b * m - tau_b * (n - m))


# --------------------------------------------------------------------------
# edge-bin functions


def log_h(psi, alpha, tau_b, r):
    """``log h(psi, alpha)``; ``h`` is the bin average of ``p_s`` over
    ``s in [-1, 1]`` weighted by ``exp(-alpha tau_b (s + 1) / 2)``."""
    psi = np.asarray(psi, dtype=float)
    sigma = 1.0 / math.sqrt(r * tau_b)
    shift = alpha / (2.0 * r)
    pref = alpha * alpha * tau_b / (8.0 * r) - alpha * tau_b * (psi + 1.0) / 2.0
    return pref + sp.log_diff_ndtr((psi + 1.0 - shift) / sigma, (psi - 1.0 - shift) / sigma)


def h_fn(psi, alpha, tau_b, r):
    return np.exp(log_h(psi, alpha, tau_b, r))


def H_fn(psi, alpha, tau_b, r):
    """``q_- - exp(-alpha tau_b) q_+ - h``; ``H/alpha`` is the CDF of ``tau_b h / 2``."""
    sigma = 1.0 / math.sqrt(r * tau_b)
    q_m = sp.norm_cdf(psi, -1.0, sigma)
    q_p = sp.norm_cdf(psi, 1.0, sigma)
    return q_m - math.exp(-alpha * tau_b) * q_p - h_fn(psi, alpha, tau_b, r)


def _truncated_moments(psi, sigma, kmax):
    """``I_k = int_0^2 v**k N_sigma(v - psi - 1) dv`` for ``k <= kmax``."""
    mu = np.asarray(psi, dtype=float) + 1.0
    q_m = sp.norm_cdf(psi, -1.0, sigma)
    q_p = sp.norm_cdf(psi, 1.0, sigma)
    p_m = sp.norm_pdf(psi, -1.0, sigma)
    p_p = sp.norm_pdf(psi, 1.0, sigma)
    s2 = sigma * sigma
    out = [q_m - q_p]
    for k in range(1, kmax + 1):
        prev2 = out[k - 2] if k >= 2 else 0.0
        boundary = 2.0 ** (k - 1) * p_p - (p_m if k == 1 else 0.0)
        out.append(mu * out[k - 1] + s2 * (k - 1) * prev2 - s2 * boundary)
    return out


def scaled_H_over_alpha(psi, alpha, tau_b, r):
    """``exp(alpha tau_b) H(psi, alpha) / alpha``, regular at ``alpha = 0``."""
    psi = np.asarray(psi, dtype=float)
    sigma = 1.0 / math.sqrt(r * tau_b)
    at = alpha * tau_b
    if abs(at) < _ALPHA_SERIES_TOL:
        # H/alpha = F(1) q_+ + int F(s) N(psi - s) ds,  F(s) = (1 - e^{-alpha w})/alpha,
        # w = tau_b (s+1)/2, expanded in powers of alpha
        moments = _truncated_moments(psi, sigma, 5)
        acc = tau_b * float(sp.phi1(at)) * sp.norm_cdf(psi, 1.0, sigma)
        for k in range(1, 6):
            acc = acc + (-alpha) ** (k - 1) / math.factorial(k) * (tau_b / 2.0) ** k * moments[k]
        return math.exp(at) * acc
    q_m = sp.norm_cdf(psi, -1.0, sigma)
    q_p = sp.norm_cdf(psi, 1.0, sigma)
    hs = np.exp(at + log_h(psi, alpha, tau_b, r))
    return (math.exp(at) * q_m - q_p - hs) / alpha


@dataclass
class _Components:
    """Per-bin-class densities and CDFs on a grid of ``psi``."""

    lq_m: np.ndarray
    lq_p: np.ndarray
    rho_m: np.ndarray
    rho_p: np.ndarray
    p_m: np.ndarray
    p_if: np.ndarray
    q_if: np.ndarray
    p_i: np.ndarray
    q_i: np.ndarray
    p_f: np.ndarray
    q_f: np.ndarray


def _components(psi, gamma, tau_b, r) -> _Components:
    psi = np.asarray(psi, dtype=float)
    sigma = 1.0 / math.sqrt(r * tau_b)
    lq_m = sp.norm_logcdf(psi, -1.0, sigma)
    lq_p = sp.norm_logcdf(psi, 1.0, sigma)
    lp_m = sp.norm_logpdf(psi, -1.0, sigma)
    lp_p = sp.norm_logpdf(psi, 1.0, sigma)
    q_m, q_p = np.exp(lq_m), np.exp(lq_p)
    p_m, p_p = np.exp(lp_m), np.exp(lp_p)
    c = norm_constants(gamma, tau_b)

    h1 = h_fn(psi, 1.0, tau_b, r)
    p_f = tau_b / (2.0 * c.D_f) * h1
    H1 = q_m - math.exp(-tau_b) * q_p - h1
    q_f = H1 / c.D_f
    if math.isinf(gamma):
        p_i, q_i, p_if, q_if = p_p, q_p, p_f, q_f
    else:
        alpha = 1.0 - gamma
        h_sc = np.exp(alpha * tau_b + log_h(psi, alpha, tau_b, r))
        K = scaled_H_over_alpha(psi, alpha, tau_b, r)
        p_i = gamma * tau_b / (2.0 * c.D_i) * h_sc
        q_i = gamma / c.D_i * K
        p_if = tau_b / (2.0 * c.D_if) * (h1 - math.exp(-tau_b) * h_sc)
        q_if = (H1 - math.exp(-tau_b) * K) / c.D_if
    return _Components(
        lq_m, lq_p, np.exp(lp_m - lq_m), np.exp(lp_p - lq_p), p_m,
        p_if, q_if, p_i, q_i, p_f, q_f,
    )


def avg_bin_dists(gamma: float, tau_b: float, r: float):
    """Edge-bin distributions as ``DistPair`` for (both edges, ``t_i`` only, ``t_f`` only)."""
    hint = support_hint(1.0 / math.sqrt(r * tau_b))

    def pick(name_p, name_q):
        return DistPair(
            lambda x: getattr(_components(x, gamma, tau_b, r), name_p),
            lambda x: getattr(_components(x, gamma, tau_b, r), name_q),
            hint,
        )

    return pick("p_if", "q_if"), pick("p_i", "q_i"), pick("p_f", "q_f")


# --------------------------------------------------------------------------
# peak signal


def _as_args(cfg: ReadoutConfig):
    return cfg.gamma, cfg.tau_b, cfg.r, float(cfg.n_bins)


def peak_cdf_minus(psi, cfg: ReadoutConfig):
    sigma = cfg.sigma
    return np.exp(cfg.n_bins * sp.norm_logcdf(psi, -1.0, sigma))


def peak_pdf_minus(psi, cfg: ReadoutConfig):
    sigma = cfg.sigma
    lq = sp.norm_logcdf(psi, -1.0, sigma)
    return cfg.n_bins * np.exp((cfg.n_bins - 1.0) * lq + sp.norm_logpdf(psi, -1.0, sigma))


def _peak_plus(psi, gamma, tau_b, r, n, want_pdf):
    """Region decomposition of the ``PLUS`` peak distribution.

    Returns ``(cdf, pdf)`` arrays (``pdf`` is None unless requested) and
    the four region terms of each for inspection.
    """
    c = _components(psi, gamma, tau_b, r)
    nc = norm_constants(gamma, tau_b)
    deterministic = math.isinf(gamma)
    gt = math.inf if deterministic else gamma * tau_b
    e_t = math.exp(-tau_b)
    e_gt = 0.0 if deterministic else math.exp(-gt)

    # R1, both edges in one bin: sum_m exp(-Gamma tau m) = g_N(e^{-Gamma tau})
    g_n = float(sp.geom_sums(n, np.array([gt]))[0][0])
    w1 = nc.D_if * g_n
    qm_n1 = np.exp((n - 1.0) * c.lq_m)
    cdf1 = w1 * qm_n1 * c.q_if

    # R1, edges in bins m < n < N, summed over m and k = n - m
    lx = c.lq_p - tau_b
    E_a, Wa_x, Wa_y = sp.pair_sums(lx, c.lq_m, n - 1.0)
    if deterministic:
        pref = nc.D_i * nc.D_f * e_t
        E_b = Wb_x = Wb_y = 0.0
    else:
        pref = nc.D_i * nc.D_f * e_t / -math.expm1(-gt)
        E_b, Wb_x, Wb_y = sp.pair_sums(lx, c.lq_m - gt, n - 1.0)
    Ed = E_a - e_gt * E_b
    qq = c.q_i * c.q_f
    cdf2 = pref * qq * Ed

    # R2, t_i inside the window and t_f beyond it
    w3 = nc.D_i * math.exp(-tau_b * n)
    if deterministic:
        E2 = np.exp((n - 1.0) * c.lq_p)
        W2_x, W2_y = 0.0, (n - 1.0) * E2
    else:
        E2, W2_x, W2_y = sp.pair_sums(c.lq_m - (gamma - 1.0) * tau_b, c.lq_p, n)
    cdf3 = w3 * c.q_i * E2

    # R3, pulse starts after the window
    w4 = 0.0 if deterministic else math.exp(-gt * n)
    cdf4 = w4 * np.exp(n * c.lq_m)
    cdf = cdf1 + cdf2 + cdf3 + cdf4
    if not want_pdf:
        return cdf, None

    pdf1 = w1 * qm_n1 * ((n - 1.0) * c.rho_m * c.q_if + c.p_if)
    dEd = c.rho_p * (Wa_x - e_gt * Wb_x) + c.rho_m * (Wa_y - e_gt * Wb_y)
    pdf2 = pref * ((c.p_i * c.q_f + c.q_i * c.p_f) * Ed + qq * dEd)
    dE2 = c.rho_m * W2_x + c.rho_p * W2_y
    pdf3 = w3 * (c.p_i * E2 + c.q_i * dE2)
    pdf4 = w4 * n * np.exp(n * c.lq_m) * c.rho_m
    return cdf, pdf1 + pdf2 + pdf3 + pdf4



def peak_pdf_plus(psi, cfg: ReadoutConfig):
    gamma, tau_b, r, n = _as_args(cfg)
    return _peak_plus(np.asarray(psi, dtype=float), gamma, tau_b, r, n, True)[1]


def peak_cdf_plus(psi, cfg: ReadoutConfig):
    gamma, tau_b, r, n = _as_args(cfg)
    return _peak_plus(np.asarray(psi, dtype=float), gamma, tau_b, r, n, False)[0]


def peak_dists(cfg: ReadoutConfig) -> tuple[DistPair, DistPair]:
    """``(P(psi_p | -), P(psi_p | +))`` for the configuration's ``N`` and ``tau_b``."""
    hint = support_hint(cfg.sigma)
    minus = DistPair(lambda x: peak_pdf_minus(x, cfg), lambda x: peak_cdf_minus(x, cfg), hint)
    plus = DistPair(lambda x: peak_pdf_plus(x, cfg), lambda x: peak_cdf_plus(x, cfg), hint)
    return minus, plus


def peak_pdf_fixed_times(psi, state: QubitState, pulse: PulseTimes | None, cfg: ReadoutConfig):
    """Density of the maximum of ``N`` bins for a known pulse placement."""
    n = cfg.integral_bins()
    psi = np.asarray(psi, dtype=float)
    if state is QubitState.MINUS or pulse is None:
        means = -np.ones(n)
    else:
        means = interval_means(np.linspace(0.0, cfg.tau_m, n + 1), pulse.t_i, pulse.t_f)
    classes, counts = np.unique(np.round(means, 14), return_counts=True)
    sigma = cfg.sigma
    log_prod = np.zeros_like(psi)
    ratio_sum = np.zeros_like(psi)
    for phi, k in zip(classes, counts):
        log_prod = log_prod + k * sp.norm_logcdf(psi, phi, sigma)
        ratio_sum = ratio_sum + k * sp.mills_ratio(psi, phi, sigma)
    return np.exp(log_prod) * ratio_sum


def bin_class_counts(pulse: PulseTimes | None, cfg: ReadoutConfig) -> dict[float, int]:
    n = cfg.integral_bins()
    if pulse is None:
        return {-1.0: n}
    means = interval_means(np.linspace(0.0, cfg.tau_m, n + 1), pulse.t_i, pulse.t_f)
    classes, counts = np.unique(np.round(means, 14), return_counts=True)
    return {float(c): int(k) for c, k in zip(classes, counts)}


# --------------------------------------------------------------------------
# boxcar (single bin spanning the whole window)


def boxcar_dists(cfg: ReadoutConfig) -> tuple[DistPair, DistPair]:
    return peak_dists(cfg.with_(n_bins=1.0))


def boxcar_pdf_plus_mixture(psi, cfg: ReadoutConfig):
    """``D_if p_if + D_i e^{-tau_M} p_i + e^{-Gamma tau_M} p_-`` written out directly."""
    tau = cfg.tau_m
    c = _components(psi, cfg.gamma, tau, cfg.r)
    nc = norm_constants(cfg.gamma, tau)
    miss = 0.0 if cfg.deterministic else math.exp(-cfg.gamma * tau)
    return nc.D_if * c.p_if + nc.D_i * math.exp(-tau) * c.p_i + miss * c.p_m


def boxcar_weights(gamma: float, tau_m: float) -> tuple[float, float, float]:
    """Region probabilities ``(w1, w2, w3)`` of the single-bin decomposition."""
    nc = norm_constants(gamma, tau_m)
    w3 = 0.0 if math.isinf(gamma) else math.exp(-gamma * tau_m)
    return nc.D_if, nc.D_i * math.exp(-tau_m), w3


@dataclass(frozen=True)
class RegionWeights:
    w1: float
    w2: float
    w3: float


def region_weights(gamma: float, tau_m: float) -> RegionWeights:
    """Probabilities that the pulse ends inside / starts inside only / starts after the window."""
    if math.isinf(gamma):
        return RegionWeights(-math.expm1(-tau_m), math.exp(-tau_m), 0.0)
    w3 = math.exp(-gamma * tau_m)
    # P(t_i < T, t_f > T) = int_0^T Gamma e^{-Gamma t} e^{-(T - t)} dt
    x = (gamma - 1.0) * tau_m
    w2 = math.exp(-tau_m) * gamma * tau_m * float(sp.phi1(x))
    return RegionWeights(1.0 - w2 - w3, w2, w3)


# --------------------------------------------------------------------------
# deterministic turn-on limit


class LimitDispatchError(ValueError):
    pass


def limit_dists(cfg: ReadoutConfig):
    """``{"peak": (minus, plus), "boxcar": (minus, plus)}`` for ``gamma = inf``."""
    if not cfg.deterministic:
        raise LimitDispatchError("limit_dists requires gamma = inf; use peak_dists for finite gamma")
    return {"peak": peak_dists(cfg), "boxcar": boxcar_dists(cfg)}


def boxcar_pdf_plus_limit(psi, tau_m: float, r: float):
    """``(1 - e^{-tau_M}) p_f + e^{-tau_M} p_+`` at ``tau_b = tau_M``."""
    c = _components(psi, math.inf, tau_m, r)
    p_p = sp.norm_pdf(psi, 1.0, 1.0 / math.sqrt(r * tau_m))
    return -math.expm1(-tau_m) * c.p_f + math.exp(-tau_m) * p_p


def dists_for(cfg: ReadoutConfig, kind: str) -> tuple[DistPair, DistPair]:
    if kind == "boxcar":
        return boxcar_dists(cfg)
    if kind == "peak":
        return peak_dists(cfg)
    raise ValueError(f"unknown filter {kind!r}")
