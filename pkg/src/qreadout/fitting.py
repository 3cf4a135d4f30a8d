"""Fit the peak-signal mixture to a histogram of raw peak values.

A raw peak value ``x`` (for instance a current) maps to the reduced signal
``psi_p = (2 x - I) / I``.  Bin probabilities are differences of the closed
form mixture CDF, so the likelihood needs no quadrature.  ``Gamma`` and
``tau_M`` are held fixed; the free parameters are ``I, r, tau_b, P(+)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .distributions import peak_cdf_minus, peak_cdf_plus, peak_pdf_minus, peak_pdf_plus
from .model import ParameterError, QubitState, ReadoutConfig, simulate_binned

PARAM_NAMES = ("I", "r", "tau_b", "p_plus")
# P(+) is kept off the boundary so that logit stays finite
_P_EPS = 1e-9
# finite stand-in for an inadmissible point; keeps simplex differences defined
_BAD = 1e300
# admissible snr range for the fit; outside it the mixture degenerates
_LOG_R_MIN, _LOG_R_MAX = math.log(1e-2), math.log(1e6)


class HistogramError(ValueError):
    """Malformed histogram input."""


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    scale: float | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts)
        if self.edges.ndim != 1 or self.edges.size != self.counts.size + 1:
            raise HistogramError("need len(edges) == len(counts) + 1")
        if not np.all(np.isfinite(self.edges)) or np.any(np.diff(self.edges) <= 0):
            raise HistogramError("bin edges must be finite and strictly increasing")
        if np.any(self.counts < 0) or np.any(self.counts != np.round(self.counts)):
            raise HistogramError("counts must be nonnegative integers")
        self.counts = self.counts.astype(np.int64)
        if self.counts.sum() <= 0:
            raise HistogramError("histogram is empty")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @classmethod
    def from_samples(cls, x, bins="fd", scale=None) -> "Histogram":
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            raise HistogramError("no samples")
        counts, edges = np.histogram(x, bins=bins)
        return cls(edges, counts, scale)


def _rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _is_header(cells):
    try:
        [float(c) for c in cells]
        return False
    except ValueError:
        return True


def ingest_histogram(path, fmt: str = "edges", bins="fd", scale: float | None = None) -> Histogram:
    """Read a histogram CSV.

    ``fmt="edges"``: rows ``edge_lo,edge_hi,count`` with contiguous bins.
    ``fmt="raw"``: one value per row, binned with the Freedman-Diaconis rule
    unless ``bins`` says otherwise.  A non-numeric first row is a header.
    """
    path = Path(path)
    if not path.is_file():
        raise HistogramError(f"{path}: no such file")
    lo, hi, cnt, vals = [], [], [], []
    first = True
    for lineno, cells in _rows(path):
        if first and _is_header(cells):
            first = False
            continue
        first = False
        try:
            if fmt == "edges":
                if len(cells) != 3:
                    raise ValueError("expected 3 columns")
                a, b, c = float(cells[0]), float(cells[1]), float(cells[2])
                if c < 0 or c != int(c):
                    raise ValueError("count must be a nonnegative integer")
                if b <= a:
                    raise ValueError("edge_hi must exceed edge_lo")
                if hi and not math.isclose(a, hi[-1], rel_tol=1e-9, abs_tol=1e-12):
                    raise ValueError("bins are not contiguous and increasing")
                lo.append(a), hi.append(b), cnt.append(int(c))
            elif fmt == "raw":
                if len(cells) != 1:
                    raise ValueError("expected a single column")
                v = float(cells[0])
                if not math.isfinite(v):
                    raise ValueError("non-finite value")
                vals.append(v)
            else:
                raise HistogramError(f"unknown format {fmt!r}")
        except ValueError as exc:
            raise HistogramError(f"{path}:{lineno}: {exc}") from None
    if fmt == "edges":
        if not cnt:
            raise HistogramError(f"{path}: no data rows")
        return Histogram(np.array(lo + [hi[-1]]), np.array(cnt), scale)
    if not vals:
        raise HistogramError(f"{path}: no data rows")
    return Histogram.from_samples(vals, bins=bins, scale=scale)


def write_histogram(hist: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_lo", "edge_hi", "count"])
        for a, b, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class FitParams:
    I: float
    r: float
    tau_b: float
    p_plus: float

    def as_array(self):
        return np.array([self.I, self.r, self.tau_b, self.p_plus])


def bins_for(tau_m: float, tau_b: float) -> int:
    return max(1, int(round(tau_m / tau_b)))


def _config(params, gamma, tau_m):
    """Model with ``N = round(tau_M / tau_b)`` bins of width exactly ``tau_b``."""
    n = bins_for(tau_m, params.tau_b)
    p = min(max(params.p_plus, _P_EPS), 1.0 - _P_EPS)
    return ReadoutConfig(r=params.r, gamma=gamma, tau_m=n * params.tau_b, n_bins=float(n), p_plus=p)


def mixture_pdf(psi, params: FitParams, gamma: float, tau_m: float):
    """``P(-) P(psi|-) + P(+) P(psi|+)`` in reduced units."""
    cfg = _config(params, gamma, tau_m)
    p = params.p_plus
    out = (1.0 - p) * peak_pdf_minus(psi, cfg)
    if p > 0:
        out = out + p * peak_pdf_plus(psi, cfg)
    return out


def mixture_cdf(psi, params: FitParams, gamma: float, tau_m: float):
    cfg = _config(params, gamma, tau_m)
    p = params.p_plus
    out = (1.0 - p) * peak_cdf_minus(psi, cfg)
    if p > 0:
        out = out + p * peak_cdf_plus(psi, cfg)
    return out


def to_reduced(raw, scale: float):
    return (2.0 * np.asarray(raw, dtype=float) - scale) / scale


def to_raw(psi, scale: float):
    return scale * (np.asarray(psi, dtype=float) + 1.0) / 2.0


def bin_probabilities(hist: Histogram, params: FitParams, gamma: float, tau_m: float):
    """Probability of each bin, renormalized to the histogram range."""
    c = mixture_cdf(to_reduced(hist.edges, params.I), params, gamma, tau_m)
    p = np.diff(c)
    inside = c[-1] - c[0]
    if not inside > 0:
        return np.full(p.shape, np.nan)
    return np.clip(p, 0.0, None) / inside


def log_likelihood(hist: Histogram, params: FitParams, gamma: float, tau_m: float) -> float:
    """Multinomial log-likelihood of the counts (constant terms dropped)."""
    p = bin_probabilities(hist, params, gamma, tau_m)
    nz = hist.counts > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = float(np.sum(hist.counts[nz] * np.log(p[nz])))
    return ll if np.isfinite(ll) else -np.inf


def chi_square(hist: Histogram, params: FitParams, gamma: float, tau_m: float, min_expected=5.0, n_params=4):
    mu = hist.total * bin_probabilities(hist, params, gamma, tau_m)
    use = mu >= min_expected
    chi2 = float(np.sum((hist.counts[use] - mu[use]) ** 2 / mu[use]))
    return chi2, int(use.sum()) - n_params


# --------------------------------------------------------------------------
# fit


@dataclass
class FitResult:
    I: float
    r: float
    tau_b: float
    p_plus: float
    n_bins: int
    log_likelihood: float
    chi2: float
    dof: int
    covariance: np.ndarray
    gamma: float
    tau_m: float
    converged: bool
    message: str = ""
    starts: list = field(default_factory=list, repr=False)

    @property
    def params(self) -> FitParams:
        return FitParams(self.I, self.r, self.tau_b, self.p_plus)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def to_json(self) -> dict:
        return {
            "I": self.I, "r": self.r, "tau_b": self.tau_b, "p_plus": self.p_plus,
            "chi2": self.chi2, "dof": self.dof, "n_bins": self.n_bins,
            "log_likelihood": self.log_likelihood,
            "gamma": "inf" if math.isinf(self.gamma) else self.gamma, "tau_m": self.tau_m,
            "stderr": dict(zip(PARAM_NAMES, map(float, self.stderr))),
            "converged": self.converged, "message": self.message,
        }


def _pack(p: FitParams):
    q = min(max(p.p_plus, _P_EPS), 1.0 - _P_EPS)
    return np.array([math.log(p.I), math.log(p.r), math.log(p.tau_b), float(logit(q))])


def _unpack(z) -> FitParams:
    return FitParams(math.exp(z[0]), math.exp(z[1]), math.exp(z[2]), float(expit(z[3])))


def _jacobian(params: FitParams):
    """d(natural)/d(packed), diagonal."""
    p = params.p_plus
    return np.diag([params.I, params.r, params.tau_b, p * (1.0 - p)])


def _hessian(f, z, step=1e-3):
    k = z.size
    H = np.empty((k, k))
    f0 = f(z)
    for i in range(k):
        for j in range(i, k):
            ei = np.eye(k)[i] * step
            ej = np.eye(k)[j] * step
            if i == j:
                H[i, i] = (f(z + ei) - 2 * f0 + f(z - ei)) / step**2
            else:
                H[i, j] = H[j, i] = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (4 * step**2)
    return H


def initial_guess(hist: Histogram, tau_m: float) -> FitParams:
    """Rough starting point from the histogram shape alone."""
    cum = np.cumsum(hist.counts) / hist.total
    hi = float(np.interp(0.99, cum, hist.edges[1:]))
    lo = float(np.interp(0.01, cum, hist.edges[1:]))
    scale = hist.scale if hist.scale else max(hi - lo, 1e-12) / 1.2
    mid = lo + 0.5 * scale
    frac = float(hist.counts[hist.centers > mid].sum() / hist.total)
    return FitParams(scale, 100.0, tau_m / 30.0, min(max(frac, 0.05), 0.95))


def fit(
    hist: Histogram,
    gamma: float,
    tau_m: float,
    init: FitParams | None = None,
    fix_scale: bool = False,
    spread: float = 0.5,
    n_starts: int = 6,
    maxiter: int = 3000,
    seed: int = 0,
) -> FitResult:
    """Binned maximum-likelihood fit of ``(I, r, tau_b, P(+))``.

    Starts from ``init``, from the histogram-shape guess when ``init`` is given,
    and from ``n_starts - 1`` copies of ``init`` with each parameter scaled by
    a random factor in ``[1 - spread, 1 + spread]``.  With ``fix_scale`` the
    scale ``I`` is held at ``init.I`` (or ``hist.scale``).
    """
    if int(np.sum(hist.counts > 0)) < 10:
        raise HistogramError("need at least 10 nonempty bins")
    gamma = ReadoutConfig(r=1.0, gamma=gamma).gamma
    user_init = init is not None
    init = init or initial_guess(hist, tau_m)
    z_init = _pack(init)
    fixed = (0,) if fix_scale else ()
    free = [k for k in range(4) if k not in fixed]

    def full(zf):
        z = z_init.copy()
        z[free] = zf
        return z

    def nll(zf):
        z = full(zf)
        if not np.all(np.isfinite(z)) or abs(z[3]) > 40 or not _LOG_R_MIN < z[1] < _LOG_R_MAX:
            return _BAD
        try:
            v = -log_likelihood(hist, _unpack(z), gamma, tau_m)
        except ParameterError:
            return _BAD
        return v if np.isfinite(v) else _BAD

    rng = np.random.default_rng(seed)
    starts = [init]
    if user_init and not fix_scale:
        # a far-off scale can trap every nearby start in the r -> 0 corner
        data_guess = initial_guess(hist, tau_m)
        if data_guess != init:
            starts.append(data_guess)
    for _ in range(n_starts - 1):
        f = 1.0 + spread * rng.uniform(-1, 1, 4)
        a = init.as_array() * f
        starts.append(FitParams(a[0], a[1], a[2], min(max(a[3], 0.01), 0.99)))

    best, runs = None, []
    for s in starts:
        z0 = _pack(s)[free]
        res = minimize(nll, z0, method="Nelder-Mead",
                       options=dict(maxiter=maxiter, xatol=1e-6, fatol=1e-7, adaptive=True))
        # restart once from the end point; simplex methods can stall on the N steps
        res2 = minimize(nll, res.x, method="Nelder-Mead",
                        options=dict(maxiter=maxiter, xatol=1e-7, fatol=1e-8, adaptive=True))
        if res2.fun <= res.fun:
            res = res2
        runs.append((float(res.fun), bool(res.success), _unpack(full(res.x))))
        if best is None or res.fun < best.fun:
            best = res

    z = full(best.x)
    params = _unpack(z)
    H = _hessian(lambda zf: nll(zf), best.x)
    cov = np.full((4, 4), np.nan)
    try:
        cz = np.linalg.inv(H)
        if np.all(np.linalg.eigvalsh(0.5 * (cz + cz.T)) > 0):
            full_cov = np.zeros((4, 4))
            full_cov[np.ix_(free, free)] = cz
            J = _jacobian(params)
            cov = J @ full_cov @ J.T
            for k in fixed:
                cov[k, :] = cov[:, k] = 0.0
    except np.linalg.LinAlgError:
        pass

    chi2, dof = chi_square(hist, params, gamma, tau_m, n_params=len(free))
    msg = "" if best.success else f"Nelder-Mead stopped: {best.message}"
    return FitResult(
        params.I, params.r, params.tau_b, params.p_plus, bins_for(tau_m, params.tau_b),
        -float(best.fun), chi2, dof, cov, gamma, tau_m, bool(best.success), msg, runs,
    )


# --------------------------------------------------------------------------
# synthetic data


def synthetic_peaks(cfg: ReadoutConfig, shots: int, rng: np.random.Generator, scale: float | None = None):
    """Peak statistics of ``shots`` random shots with prior ``cfg.p_plus``.

    Returns raw values ``scale (psi_p + 1) / 2`` when ``scale`` is given,
    reduced values otherwise.
    """
    n_plus = int(rng.binomial(shots, cfg.p_plus))
    plus = simulate_binned(cfg, QubitState.PLUS, n_plus, rng).max(axis=1)
    minus = simulate_binned(cfg, QubitState.MINUS, shots - n_plus, rng).max(axis=1)
    psi = rng.permutation(np.concatenate([plus, minus]))
    return psi if scale is None else to_raw(psi, scale)
