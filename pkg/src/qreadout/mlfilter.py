"""Maximum-likelihood filter on a sampled record.

The record is piecewise constant: ``psi(t) = samples[k]`` on
``[k dt, (k+1) dt)``.  With ``S(t) = int_0^t 2 r psi``, the likelihood ratio
splits by where the pulse edges fall relative to the window::

    L1 = int_{0<t_i<t_f<T} Gamma e^{-(Gamma-1) t_i} e^{-t_f} e^{S(t_f) - S(t_i)}
    L2 = e^{-T} int_0^T Gamma e^{-(Gamma-1) t_i} e^{S(T) - S(t_i)}
    L3 = e^{-Gamma T}

``likelihood_direct`` evaluates these exactly for the piecewise-constant
record (every exponent is linear inside a step) and is kept as an oracle.
The production path integrates the equivalent nonlinear equations for
``P_i = L_i / (1 + L)`` with RK4, which never sees the huge ``L``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from . import special as sp
from .model import (
    ContinuousTrace,
    ParameterError,
    QubitState,
    ReadoutConfig,
    generate_continuous_trace,
    shot_rng,
)

BAND = 1e-6
# components below this are flushed to zero; subnormal arithmetic is ~100x slower
TINY = 1e-250
DEFAULT_MAX_PHASE = 0.25
# the unnormalized system carries log L ~ r*tau, so per-step RK4 error is
# not washed out by saturation the way it is for the estimator
LINEAR_MAX_PHASE = 0.0625
ML_TAU_M = 10.0
# estimates this close to 1/2 are rounding-level ties (e.g. a record with r -> 0)
TIE_TOL = 1e-12


class EstimatorStepError(RuntimeError):
    """RK4 left the admissible band even after repeated step halving."""


@dataclass(frozen=True)
class EstimatorState:
    p1: float
    p2: float
    p3: float = 0.0

    @property
    def p_plus(self) -> float:
        return self.p1 + self.p2 + self.p3


@dataclass(frozen=True)
class LikelihoodParts:
    """Region parts of the likelihood ratio, stored as logarithms."""

    log_l1: float
    log_l2: float
    log_l3: float

    @property
    def l1(self) -> float:
        return math.exp(self.log_l1)

    @property
    def l2(self) -> float:
        return math.exp(self.log_l2)

    @property
    def l3(self) -> float:
        return math.exp(self.log_l3)

    @property
    def log_total(self) -> float:
        return float(np.logaddexp.reduce([self.log_l1, self.log_l2, self.log_l3]))

    @property
    def posterior(self) -> float:
        """``L / (1 + L)`` without forming ``L``."""
        lt = self.log_total
        return 1.0 / (1.0 + math.exp(-lt)) if lt > -700 else math.exp(lt)


def _n_steps(trace: ContinuousTrace, tau_m: float | None) -> int:
    if tau_m is None:
        return trace.samples.size
    k = int(round(tau_m / trace.dt))
    if k > trace.samples.size or abs(k * trace.dt - tau_m) > 1e-9 * max(tau_m, 1.0):
        if tau_m > trace.duration * (1 + 1e-12):
            raise ParameterError(f"trace covers {trace.duration}, shorter than tau_m={tau_m}")
        raise ParameterError("tau_m must be a multiple of the trace step")
    return k


def _log_cum(log_terms):
    """``log`` of the running sums ``sum_{j<k}`` for ``k = 0..n``."""
    out = np.empty(log_terms.size + 1)
    out[0] = -np.inf
    out[1:] = np.logaddexp.accumulate(log_terms)
    return out


def likelihood_direct(trace: ContinuousTrace, cfg: ReadoutConfig, tau_m: float | None = None, cumulative=False):
    """Exact region parts of the likelihood ratio for the piecewise-constant record.

    With ``cumulative=True`` returns arrays ``(log_l1, log_l2, log_l3)`` at
    every step boundary ``T = k dt``, ``k = 0..n``.
    """
    n = _n_steps(trace, tau_m)
    dt = trace.dt
    a = 2.0 * cfg.r * trace.samples[:n]
    t0 = dt * np.arange(n)
    # S at the left edge of each step
    S = np.concatenate([[0.0], np.cumsum(a * dt)])
    T = dt * np.arange(n + 1)
    log_dt = math.log(dt)

    # g(t) = e^{-t + S(t)} integrated over each step
    bg = a - 1.0
    log_G = (-t0 + S[:-1]) + log_dt + sp.log_expm1_ratio(bg * dt)
    if cfg.deterministic:
        l1 = _log_cum(log_G)
        l2 = S - T
        l3 = np.full(n + 1, -np.inf)
    else:
        gam = cfg.gamma
        # f(t) = Gamma e^{-(Gamma-1) t - S(t)}
        bf = -(gam - 1.0) - a
        lf0 = math.log(gam) - (gam - 1.0) * t0 - S[:-1]
        log_F = lf0 + log_dt + sp.log_expm1_ratio(bf * dt)
        log_Fcum = _log_cum(log_F)  # int_0^{t_k} f
        # same-step triangle: t_i = t0 + v dt, t_f = t0 + u dt, v < u
        same = lf0 + (-t0 + S[:-1]) + 2 * log_dt + sp.log_exp_divdiff2(0.0, bg * dt, (bg + bf) * dt)
        cross = log_Fcum[:-1] + log_G
        l1 = _log_cum(np.logaddexp(cross, same))
        l2 = S - T + log_Fcum
        l3 = -gam * T
    if cumulative:
        return l1, l2, l3
    return LikelihoodParts(float(l1[-1]), float(l2[-1]), float(l3[-1]))


# --------------------------------------------------------------------------
# RK4 kernels


@numba.njit(cache=True, nogil=True)
def _substeps(a, dt, gamma_rate, max_phase):
    phase = (abs(a) + gamma_rate + 1.0) * dt
    m = int(math.ceil(phase / max_phase))
    return m if m > 1 else 1


@numba.njit(cache=True, nogil=True)
def _rhs_p(p1, p2, p3, a, g, fin):
    d1 = p2 - a * p1 * p2
    d2 = (a - 1.0) * p2 - a * p2 * p2
    d3 = 0.0
    if fin:
        d2 += g * p3
        d3 = -g * p3 - a * p2 * p3
    return d1, d2, d3


@numba.njit(cache=True, nogil=True)
def _rk4_estimator(samples, n, dt, r, gamma, fin, max_phase, band, traj):
    """Integrate the estimator over ``n`` samples.

    Returns ``(p1, p2, p3, ok)``.  ``traj`` has shape ``(n + 1, 3)`` to record
    the trajectory at every sample boundary, or ``(0, 3)`` to skip it.
    """
    p1, p2, p3 = 0.0, 0.5, 0.0
    if fin:
        p2, p3 = 0.0, 0.5
    rec = traj.shape[0] > 0
    if rec:
        traj[0, 0], traj[0, 1], traj[0, 2] = p1, p2, p3
    g = gamma if fin else 0.0
    lo, hi = -band, 1.0 + band
    for k in range(n):
        a = 2.0 * r * samples[k]
        m = _substeps(a, dt, g, max_phase)
        h = dt / m
        for _ in range(m):
            k11, k12, k13 = _rhs_p(p1, p2, p3, a, g, fin)
            k21, k22, k23 = _rhs_p(p1 + 0.5 * h * k11, p2 + 0.5 * h * k12, p3 + 0.5 * h * k13, a, g, fin)
            k31, k32, k33 = _rhs_p(p1 + 0.5 * h * k21, p2 + 0.5 * h * k22, p3 + 0.5 * h * k23, a, g, fin)
            k41, k42, k43 = _rhs_p(p1 + h * k31, p2 + h * k32, p3 + h * k33, a, g, fin)
            p1 += h / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
            p2 += h / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
            p3 += h / 6.0 * (k13 + 2.0 * k23 + 2.0 * k33 + k43)
        if abs(p1) < TINY:
            p1 = 0.0
        if abs(p2) < TINY:
            p2 = 0.0
        if abs(p3) < TINY:
            p3 = 0.0
        s = p1 + p2 + p3
        if not (lo <= p1 <= hi and lo <= p2 <= hi and lo <= p3 <= hi and lo <= s <= hi):
            return p1, p2, p3, False
        if rec:
            traj[k + 1, 0], traj[k + 1, 1], traj[k + 1, 2] = p1, p2, p3
    return p1, p2, p3, True


@numba.njit(cache=True, nogil=True)
def _rk4_linear(samples, n, dt, r, gamma, fin, max_phase, out_log):
    """RK4 on the linear system for ``(L1, L2, L3)`` with running log scale.

    Writes ``log L`` (total) after every sample into ``out_log[k + 1]`` and
    returns the final normalized vector and its log scale.
    """
    v1, v2, v3 = 0.0, 1.0, 0.0
    if fin:
        v2, v3 = 0.0, 1.0
    g = gamma if fin else 0.0
    log_scale = 0.0
    out_log[0] = 0.0
    for k in range(n):
        a = 2.0 * r * samples[k]
        m = _substeps(a, dt, g, max_phase)
        h = dt / m
        for _ in range(m):
            k11, k12, k13 = v2, g * v3 + (a - 1.0) * v2, -g * v3
            u1, u2, u3 = v1 + 0.5 * h * k11, v2 + 0.5 * h * k12, v3 + 0.5 * h * k13
            k21, k22, k23 = u2, g * u3 + (a - 1.0) * u2, -g * u3
            u1, u2, u3 = v1 + 0.5 * h * k21, v2 + 0.5 * h * k22, v3 + 0.5 * h * k23
            k31, k32, k33 = u2, g * u3 + (a - 1.0) * u2, -g * u3
            u1, u2, u3 = v1 + h * k31, v2 + h * k32, v3 + h * k33
            k41, k42, k43 = u2, g * u3 + (a - 1.0) * u2, -g * u3
            v1 += h / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
            v2 += h / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
            v3 += h / 6.0 * (k13 + 2.0 * k23 + 2.0 * k33 + k43)
        top = max(abs(v1), abs(v2), abs(v3))
        if top > 0.0:
            v1 /= top
            v2 /= top
            v3 /= top
            log_scale += math.log(top)
            if abs(v1) < TINY:
                v1 = 0.0
            if abs(v2) < TINY:
                v2 = 0.0
            if abs(v3) < TINY:
                v3 = 0.0
        out_log[k + 1] = log_scale + math.log(v1 + v2 + v3)
    return v1, v2, v3, log_scale


@dataclass(frozen=True)
class EstimatorTrajectory:
    """Estimator components at every sample boundary ``tau = k dt``."""

    times: np.ndarray
    p: np.ndarray  # shape (n + 1, 3)
    max_phase: float

    @property
    def p_plus(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def final(self) -> EstimatorState:
        return EstimatorState(*map(float, self.p[-1]))

    def __len__(self):
        return self.times.size

    def __getitem__(self, k) -> EstimatorState:
        return EstimatorState(*map(float, self.p[k]))

    def at(self, tau: float) -> float:
        k = int(round(tau / (self.times[1] - self.times[0])))
        return float(self.p_plus[k])


def _kernel_args(trace, cfg):
    fin = not cfg.deterministic
    return (np.ascontiguousarray(trace.samples, dtype=np.float64), trace.dt, float(cfg.r),
            float(cfg.gamma) if fin else 0.0, fin)


def integrate_estimator(
    trace: ContinuousTrace,
    cfg: ReadoutConfig,
    tau_m: float | None = None,
    max_phase: float = DEFAULT_MAX_PHASE,
    max_halvings: int = 8,
    band: float = BAND,
) -> EstimatorTrajectory:
    """RK4 trajectory of ``(P1, P2, P3)`` along the record.

    Each sample step is split into RK4 substeps so that ``(2 r |psi| + Gamma + 1) h``
    stays below ``max_phase``.  If the state leaves ``[-band, 1 + band]`` the
    substep is halved and the record is integrated again.
    """
    n = _n_steps(trace, tau_m)
    samples, dt, r, g, fin = _kernel_args(trace, cfg)
    phase = max_phase
    for _ in range(max_halvings + 1):
        traj = np.empty((n + 1, 3))
        *_, ok = _rk4_estimator(samples, n, dt, r, g, fin, phase, band, traj)
        if ok:
            return EstimatorTrajectory(dt * np.arange(n + 1), traj, phase)
        phase /= 2.0
    raise EstimatorStepError(f"estimator left [-{band}, 1+{band}] after {max_halvings} halvings")


def final_estimator(trace, cfg, tau_m=None, max_phase=DEFAULT_MAX_PHASE, max_halvings=8, band=BAND) -> EstimatorState:
    n = _n_steps(trace, tau_m)
    samples, dt, r, g, fin = _kernel_args(trace, cfg)
    empty = np.empty((0, 3))
    phase = max_phase
    for _ in range(max_halvings + 1):
        p1, p2, p3, ok = _rk4_estimator(samples, n, dt, r, g, fin, phase, band, empty)
        if ok:
            return EstimatorState(p1, p2, p3)
        phase /= 2.0
    raise EstimatorStepError(f"estimator left [-{band}, 1+{band}] after {max_halvings} halvings")


def likelihood_ode(trace, cfg, tau_m=None, max_phase=LINEAR_MAX_PHASE, cumulative=False):
    """``log L`` from RK4 on the linear equations (final value or per step)."""
    n = _n_steps(trace, tau_m)
    samples, dt, r, g, fin = _kernel_args(trace, cfg)
    out = np.empty(n + 1)
    _rk4_linear(samples, n, dt, r, g, fin, max_phase, out)
    return out if cumulative else float(out[-1])


def decide(p_plus: float, coin: float) -> QubitState:
    """``PLUS`` iff the estimator exceeds 1/2; a tie is settled by ``coin < 1/2``."""
    if p_plus > 0.5 + TIE_TOL:
        return QubitState.PLUS
    if p_plus < 0.5 - TIE_TOL:
        return QubitState.MINUS
    return QubitState.PLUS if coin < 0.5 else QubitState.MINUS


# --------------------------------------------------------------------------
# Monte-Carlo benchmark


def default_ml_dt(cfg: ReadoutConfig) -> float:
    """Record step for the benchmark: resolves ``1/Gamma`` and the ``1/r`` edge width."""
    scale = 1.0 / cfg.r if cfg.deterministic else min(1.0 / cfg.gamma, 1.0 / cfg.r)
    return max(scale / 4.0, 1e-4)


@dataclass(frozen=True)
class MLResult:
    eps: float
    stderr: float
    records: int
    errors: int
    eps_plus: float
    eps_minus: float
    dt: float
    tau_m: float


def _run_records(cfg, dt, seed, shots, max_phase):
    """Decisions for a block of shot indices; returns (truth_plus, decided_plus)."""
    truth = np.empty(len(shots), dtype=bool)
    called = np.empty(len(shots), dtype=bool)
    for j, shot in enumerate(shots):
        rng = shot_rng(seed, shot)
        state = QubitState.PLUS if rng.random() < cfg.p_plus else QubitState.MINUS
        trace = generate_continuous_trace(cfg, dt, state, rng, check=False)
        est = final_estimator(trace, cfg, max_phase=max_phase)
        coin = rng.random()
        truth[j] = state is QubitState.PLUS
        called[j] = decide(est.p_plus, coin) is QubitState.PLUS
    return truth, called


def ml_error_rate(
    cfg: ReadoutConfig,
    n_records: int,
    seed: int | None = None,
    dt: float | None = None,
    workers: int = 1,
    max_phase: float = DEFAULT_MAX_PHASE,
) -> MLResult:
    """Misidentification fraction of the ML filter over random records.

    Record ``k`` draws its state, pulse, noise and tie coin from
    ``shot_rng(seed, k)``, so results do not depend on ``workers``.
    """
    if n_records < 1:
        raise ParameterError("need at least one record")
    seed = cfg.seed if seed is None else seed
    dt = default_ml_dt(cfg) if dt is None else dt
    shots = np.arange(n_records)
    if workers > 1:
        blocks = np.array_split(shots, workers * 4)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda b: _run_records(cfg, dt, seed, b, max_phase), blocks))
        truth = np.concatenate([p[0] for p in parts])
        called = np.concatenate([p[1] for p in parts])
    else:
        truth, called = _run_records(cfg, dt, seed, shots, max_phase)
    wrong = truth != called
    errors = int(wrong.sum())
    eps = errors / n_records
    n_p = int(truth.sum())
    n_m = n_records - n_p
    eps_p = float(wrong[truth].mean()) if n_p else math.nan
    eps_m = float(wrong[~truth].mean()) if n_m else math.nan
    stderr = math.sqrt(eps * (1.0 - eps) / n_records)
    return MLResult(eps, stderr, n_records, errors, eps_p, eps_m, dt, cfg.tau_m)
