"""Thresholds, error rates and their optimization over the filter parameters.

The decision rule for a scalar statistic ``O`` declares ``PLUS`` when
``O > nu``.  The optimal ``nu`` is a crossing of ``P(O|+)`` and
``lambda P(O|-)`` with ``lambda = P(-)/P(+)``; for the peak filter the
``PLUS`` density can have several humps, so every crossing on a grid is
refined and the one with the smallest error is kept.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize

from . import special as sp
from .distributions import DistPair, _components, dists_for, norm_constants
from .model import ParameterError, ReadoutConfig

BOXCAR = "boxcar"
PEAK = "peak"
FILTERS = (BOXCAR, PEAK)

DEFAULT_TAU_RANGE = (1e-4, 20.0)
DEFAULT_N_RANGE = (1.0, 500.0)


class DegenerateDistributionsError(RuntimeError):
    """No crossing of the two weighted densities inside the support."""


class AsymptoticRegimeError(ValueError):
    """Parameters violate the large-``r tau_M`` assumptions of the expansion."""


class OptimizationError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class ErrorRates:
    eps_plus: float
    eps_minus: float
    eps: float

    @property
    def fidelity(self) -> float:
        return 1.0 - self.eps


def _scalar(f, x: float) -> float:
    return float(f(np.array([x]))[0])


def threshold_crossings(minus: DistPair, plus: DistPair, prior_ratio=1.0, grid=512):
    """All roots of ``pdf_plus - prior_ratio * pdf_minus`` bracketed on ``grid`` points."""
    lo = min(minus.support[0], plus.support[0])
    hi = max(minus.support[1], plus.support[1])
    x = np.linspace(lo, hi, grid)
    d = plus.pdf(x) - prior_ratio * minus.pdf(x)
    # both densities underflow far in the tails; ignore exact zeros there
    keep = np.nonzero(d != 0.0)[0]
    s = np.sign(d[keep])
    flips = np.nonzero(s[:-1] != s[1:])[0]
    g = lambda v: _scalar(plus.pdf, v) - prior_ratio * _scalar(minus.pdf, v)
    roots = []
    for k in flips:
        a, b = x[keep[k]], x[keep[k + 1]]
        roots.append(brentq(g, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200))
    return roots


def _weighted_eps(minus, plus, nu, prior_ratio):
    """``P(+) eps_+ + P(-) eps_-`` up to the factor ``1 + prior_ratio``."""
    return (_scalar(plus.cdf, nu) + prior_ratio * (1.0 - _scalar(minus.cdf, nu))) / (1.0 + prior_ratio)


def solve_threshold(minus: DistPair, plus: DistPair, prior_ratio: float = 1.0, grid: int = 512) -> float:
    """Optimal threshold: the error-minimizing solution of ``P(nu|+) = lambda P(nu|-)``."""
    if not prior_ratio > 0:
        raise ParameterError("prior ratio must be positive")
    roots = threshold_crossings(minus, plus, prior_ratio, grid)
    if not roots:
        raise DegenerateDistributionsError("the weighted densities do not cross inside the support")
    errs = [_weighted_eps(minus, plus, v, prior_ratio) for v in roots]
    return float(roots[int(np.argmin(errs))])


def error_rates(minus: DistPair, plus: DistPair, nu: float, p_plus: float = 0.5, method: str = "cdf") -> ErrorRates:
    """Conditional and prior-averaged error rates of the rule ``O > nu``.

    ``method="quad"`` integrates the densities instead of using the CDFs and
    serves as an independent check of the closed forms.
    """
    if method == "cdf":
        e_p = _scalar(plus.cdf, nu)
        e_m = 1.0 - _scalar(minus.cdf, nu)
    elif method == "quad":
        e_p = _integrate(plus.pdf, plus.support[0], nu)
        e_m = _integrate(minus.pdf, nu, minus.support[1])
    else:
        raise ValueError(f"unknown method {method!r}")
    e_p = min(max(e_p, 0.0), 1.0)
    e_m = min(max(e_m, 0.0), 1.0)
    return ErrorRates(e_p, e_m, p_plus * e_p + (1.0 - p_plus) * e_m)


def _integrate(pdf, lo, hi):
    if hi <= lo:
        return 0.0
    f = lambda v: _scalar(pdf, v)
    val, _ = quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=500, points=[p for p in (-1.0, 1.0) if lo < p < hi] or None)
    return val


def filter_error(cfg: ReadoutConfig, kind: str) -> tuple[float, ErrorRates]:
    """Optimal threshold and error rates of one filter at fixed ``(tau_M, N)``."""
    minus, plus = dists_for(cfg, kind)
    nu = solve_threshold(minus, plus, cfg.prior_ratio)
    return nu, error_rates(minus, plus, nu, cfg.p_plus)


def boxcar_error_analytic(nu: float, cfg: ReadoutConfig) -> float:
    """Closed-form boxcar error rate at threshold ``nu`` (single bin of width ``tau_M``)."""
    tau = cfg.tau_m
    c = _components(np.array([nu]), cfg.gamma, tau, cfg.r)
    nc = norm_constants(cfg.gamma, tau)
    q_m = float(np.exp(c.lq_m[0]))
    seen = 1.0 if cfg.deterministic else -math.expm1(-cfg.gamma * tau)
    if cfg.p_plus == 0.5:
        return 0.5 * (nc.D_if * c.q_if[0] + nc.D_i * math.exp(-tau) * c.q_i[0] - seen * q_m + 1.0)
    e_p = nc.D_if * c.q_if[0] + nc.D_i * math.exp(-tau) * c.q_i[0] + (1.0 - seen) * q_m
    return cfg.p_plus * e_p + (1.0 - cfg.p_plus) * (1.0 - q_m)


def gamma_factor(gamma: float, tau_m: float) -> float:
    if math.isinf(gamma):
        return 1.0 / tau_m
    e = math.exp(-gamma * tau_m)
    return (1.0 - e) / (1.0 - (1.0 - gamma) * e) / tau_m


def asymptotic_threshold(cfg: ReadoutConfig) -> float:
    """Large-``r`` boxcar threshold, approaching ``-1`` from above."""
    rt = cfg.r * cfg.tau_m
    arg = math.sqrt(2.0 * rt / math.pi) * gamma_factor(cfg.gamma, cfg.tau_m)
    if arg <= 1.0:
        raise AsymptoticRegimeError(f"log argument {arg:.3g} <= 1; r tau_M too small")
    return math.sqrt(2.0 / rt) * math.sqrt(math.log(arg)) - 1.0


def asymptotic_error(cfg: ReadoutConfig) -> float:
    """Leading large-``r`` expansion of the boxcar error rate at fixed ``tau_M``."""
    rt = cfg.r * cfg.tau_m
    g = gamma_factor(cfg.gamma, cfg.tau_m)
    a1 = 2.0 * g * g * rt / math.pi
    a2 = 4.0 * rt
    if a1 <= 1.0 or a2 <= 1.0:
        raise AsymptoticRegimeError("log arguments must exceed 1; r tau_M too small")
    if cfg.deterministic:
        miss, spread = 0.0, 1.0
    else:
        e = math.exp(-cfg.gamma * cfg.tau_m)
        miss, spread = 0.5 * e, 1.0 - (1.0 - cfg.gamma) * e
    return miss + 0.25 * math.sqrt(cfg.tau_m / cfg.r) * spread * (math.sqrt(math.log(a1)) + 1.0 / math.sqrt(math.log(a2)))


def degeneracy_threshold(r: float) -> float:
    """Smallest level degeneracy ``g`` with ``4 g / r > 1``.

    Valid when the single-bin noise is below the signal (``sigma < 1``), so that
    ``max(1, sigma) = 1`` in the limit condition.
    """
    if not r > 0:
        raise ParameterError("r must be positive")
    return r / 4.0


# --------------------------------------------------------------------------
# optimization


@dataclass
class OptimizationResult:
    filter: str
    r: float
    gamma: float
    nu: float
    tau_m: float
    n_bins: float
    eps: float
    eps_plus: float
    eps_minus: float
    n_bins_int: int
    eps_int: float
    nu_int: float
    converged: bool
    trace: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "filter", "r", "nu", "tau_m", "n_bins", "eps", "eps_plus", "eps_minus",
            "n_bins_int", "eps_int", "nu_int", "converged")}
        d["gamma"] = "inf" if math.isinf(self.gamma) else self.gamma
        d["evaluations"] = len(self.trace)
        return d


class _Objective:
    """``eps(log tau_M, log N)`` with a record of every probed point."""

    def __init__(self, kind, r, gamma, p_plus, tau_range, n_range):
        self.kind, self.r, self.gamma, self.p_plus = kind, r, gamma, p_plus
        self.log_tau = (math.log(tau_range[0]), math.log(tau_range[1]))
        self.log_n = (math.log(n_range[0]), math.log(n_range[1]))
        self.trace = []
        self.best = None

    def point(self, z):
        lt = min(max(z[0], self.log_tau[0]), self.log_tau[1])
        if self.kind == BOXCAR:
            n = 1.0
        else:
            n = math.exp(min(max(z[1], self.log_n[0]), self.log_n[1]))
        return math.exp(lt), max(n, 1.0)

    def evaluate(self, tau, n):
        cfg = ReadoutConfig(r=self.r, gamma=self.gamma, tau_m=tau, n_bins=n, p_plus=self.p_plus)
        try:
            nu, er = filter_error(cfg, self.kind)
        except DegenerateDistributionsError:
            nu, er = math.nan, ErrorRates(math.nan, math.nan, min(self.p_plus, 1.0 - self.p_plus))
        rec = (tau, n, nu, er)
        self.trace.append((tau, n, er.eps))
        if self.best is None or er.eps < self.best[3].eps:
            self.best = rec
        return er.eps

    def __call__(self, z):
        return self.evaluate(*self.point(z))


def optimize_filter(
    kind: str,
    r: float,
    gamma: float,
    p_plus: float = 0.5,
    tau_range=DEFAULT_TAU_RANGE,
    n_range=DEFAULT_N_RANGE,
    grid: int = 6,
    refine: int = 3,
    maxiter: int = 400,
) -> OptimizationResult:
    """Minimize the error rate over threshold, ``tau_M`` and (peak only) ``N``.

    A ``grid x grid`` lattice in ``(log tau_M, log N)`` is evaluated first and a
    Nelder-Mead simplex is started from each of the ``refine`` best lattice
    points.  The returned point is the best one probed anywhere.
    """
    if kind not in FILTERS:
        raise ValueError(f"filter must be one of {FILTERS}, got {kind!r}")
    gamma = ReadoutConfig(r=r, gamma=gamma).gamma
    obj = _Objective(kind, r, gamma, p_plus, tau_range, n_range)
    lt = np.linspace(*obj.log_tau, grid + 2)[1:-1]
    ln = np.array([0.0]) if kind == BOXCAR else np.linspace(*obj.log_n, grid)
    starts = sorted(((obj([a, b]), a, b) for a in lt for b in ln))[:refine]

    converged = False
    bounds = [obj.log_tau, obj.log_n]
    for eps0, a, b in starts:
        x0 = [a] if kind == BOXCAR else [a, b]
        step = np.diff(lt[:2])[0] if len(lt) > 1 else 1.0
        simplex = [x0] + [list(np.add(x0, step * np.eye(len(x0))[k] / 2)) for k in range(len(x0))]
        res = minimize(
            lambda z: obj(list(z) + [0.0]) if kind == BOXCAR else obj(z),
            x0,
            method="Nelder-Mead",
            bounds=bounds[: len(x0)],
            options=dict(maxiter=maxiter, xatol=1e-4, fatol=1e-4 * max(eps0, 1e-12),
                         initial_simplex=np.clip(simplex, [b[0] for b in bounds[: len(x0)]], [b[1] for b in bounds[: len(x0)]])),
        )
        converged = converged or bool(res.success)

    tau, n, nu, er = obj.best
    if not np.isfinite(er.eps_plus):
        raise OptimizationError("no informative parameter point found", best=obj.best)

    # integral-N report: round both ways at fixed tau_M and keep the better
    cand = {max(1, math.floor(n)), max(1, math.ceil(n))} if kind == PEAK else {1}
    best_int = None
    for k in sorted(cand):
        cfg = ReadoutConfig(r=r, gamma=gamma, tau_m=tau, n_bins=float(k), p_plus=p_plus)
        try:
            nu_k, er_k = filter_error(cfg, kind)
        except DegenerateDistributionsError:
            continue
        if best_int is None or er_k.eps < best_int[2].eps:
            best_int = (k, nu_k, er_k)
    n_int, nu_int, er_int = best_int if best_int else (1, math.nan, er)
    result = OptimizationResult(
        kind, r, gamma, nu, tau, n, er.eps, er.eps_plus, er.eps_minus,
        n_int, er_int.eps, nu_int, converged, obj.trace,
    )
    if not converged:
        raise OptimizationError("Nelder-Mead did not converge from any start", best=result)
    return result


@dataclass(frozen=True)
class ScalingRow:
    r: float
    eps: float
    nu: float
    tau_m: float
    n_bins: float

    @property
    def eps_sqrt_r_over_ln_r(self) -> float:
        return self.eps * math.sqrt(self.r) / math.log(self.r)

    @property
    def eps_r_over_ln_r(self) -> float:
        return self.eps * self.r / math.log(self.r)


def _scaling_point(args):
    kind, gamma, r, kwargs = args
    res = optimize_filter(kind, r, gamma, **kwargs)
    return ScalingRow(r, res.eps, res.nu, res.tau_m, res.n_bins)


def scaling_study(kind: str, gamma: float, r_grid, workers: int = 1, **kwargs) -> list[ScalingRow]:
    """Optimized error rate along a grid of ``r`` with scaling columns."""
    r_grid = [float(r) for r in r_grid]
    if len(r_grid) < 2 or max(r_grid) / min(r_grid) < 100.0:
        raise ParameterError("r grid must span at least two decades")
    jobs = [(kind, gamma, r, kwargs) for r in r_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_scaling_point, jobs))
    return [_scaling_point(j) for j in jobs]
