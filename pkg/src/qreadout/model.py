"""Dimensionless readout model and Monte-Carlo trace generation.

Time is measured in units of the mean pulse width.  A qubit in ``PLUS``
produces a single pulse starting at ``t_i ~ Exp(gamma)`` and lasting
``t_f - t_i ~ Exp(1)``; a qubit in ``MINUS`` never does.  The noise-free
signal is ``+1`` during the pulse and ``-1`` otherwise, and the record is
corrupted by white noise of spectral density ``1/r``.

``gamma = math.inf`` is the deterministic turn-on limit (``t_i = 0``); it is
never approximated by a large finite number.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

INF = math.inf


class ParameterError(ValueError):
    """Raised for model parameters outside their domain."""


class QubitState(enum.Enum):
    PLUS = "+"
    MINUS = "-"


def _parse_gamma(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in {"inf", "infinite", "infinity"}:
            return INF
        value = float(value)
    value = float(value)
    if not value > 0:
        raise ParameterError(f"gamma must be positive or 'inf', got {value!r}")
    return value


@dataclass(frozen=True)
class ReadoutConfig:
    """All model parameters in units of the mean pulse width.

    ``n_bins`` may be fractional when the analytic formulas are used as an
    interpolation (optimization); simulation requires an integer.
    """

    r: float
    gamma: float = 4.0
    tau_m: float = 2.5
    n_bins: float = 1.0
    p_plus: float = 0.5
    seed: int = 0
    # "Gamma/r >> max(1, sigma)" is read as "at least this factor larger".
    limit_factor: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", _parse_gamma(self.gamma))
        if not self.r > 0:
            raise ParameterError(f"snr r must be positive, got {self.r!r}")
        if not self.tau_m > 0:
            raise ParameterError(f"tau_m must be positive, got {self.tau_m!r}")
        if not self.n_bins >= 1:
            raise ParameterError(f"n_bins must be >= 1, got {self.n_bins!r}")
        if not 0.0 < self.p_plus < 1.0:
            raise ParameterError(f"p_plus must lie in (0, 1), got {self.p_plus!r}")

    @property
    def tau_b(self) -> float:
        return self.tau_m / self.n_bins

    @property
    def sigma(self) -> float:
        """Standard deviation of a single bin average."""
        return 1.0 / math.sqrt(self.r * self.tau_b)

    @property
    def deterministic(self) -> bool:
        return math.isinf(self.gamma)

    @property
    def prior_ratio(self) -> float:
        return (1.0 - self.p_plus) / self.p_plus

    def integral_bins(self) -> int:
        n = int(round(self.n_bins))
        if abs(n - self.n_bins) > 1e-9:
            raise ParameterError(f"simulation needs an integral bin count, got {self.n_bins}")
        return n

    def in_limit_regime(self) -> bool:
        """Whether ``gamma / r >> max(1, sigma)`` holds at ``limit_factor``."""
        return self.gamma / self.r > self.limit_factor * max(1.0, self.sigma)

    def with_(self, **changes) -> "ReadoutConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        d = asdict(self)
        d["gamma"] = "inf" if self.deterministic else self.gamma
        d["n_bins"] = self.n_bins
        d.pop("limit_factor")
        return d

    @classmethod
    def from_json(cls, data: dict) -> "ReadoutConfig":
        known = {"r", "gamma", "tau_m", "n_bins", "p_plus", "seed", "limit_factor"}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ReadoutConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PulseTimes:
    t_i: float
    t_f: float

    def __post_init__(self):
        if not 0.0 <= self.t_i <= self.t_f:
            raise ParameterError(f"need 0 <= t_i <= t_f, got {self.t_i}, {self.t_f}")

    @property
    def width(self) -> float:
        return self.t_f - self.t_i


@dataclass
class BinnedTrace:
    values: np.ndarray
    config: ReadoutConfig
    pulse: PulseTimes | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ParameterError("binned trace must be a nonempty 1-d array")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("binned trace contains non-finite values")


@dataclass
class ContinuousTrace:
    dt: float
    samples: np.ndarray
    pulse: PulseTimes | None = None
    state: QubitState | None = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)

    @property
    def times(self) -> np.ndarray:
        """Left edge of each sample interval."""
        return self.dt * np.arange(self.samples.size)

    @property
    def duration(self) -> float:
        return self.dt * self.samples.size

    def block_average(self, n_bins: int) -> np.ndarray:
        k = self.samples.size // n_bins
        if k * n_bins != self.samples.size:
            raise ParameterError("trace length is not a multiple of the bin count")
        return self.samples.reshape(n_bins, k).mean(axis=1)


def shot_rng(seed: int, shot: int = 0) -> np.random.Generator:
    """Independent stream for one shot, addressable by ``(seed, shot)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(shot)]))


def sample_pulse(gamma: float, rng: np.random.Generator) -> PulseTimes:
    gamma = _parse_gamma(gamma)
    t_i = 0.0 if math.isinf(gamma) else rng.exponential(1.0 / gamma)
    return PulseTimes(t_i, t_i + rng.exponential(1.0))


def sample_pulses(gamma: float, size: int, rng: np.random.Generator):
    """Vectorized ``sample_pulse``: returns arrays ``(t_i, t_f)``."""
    gamma = _parse_gamma(gamma)
    t_i = np.zeros(size) if math.isinf(gamma) else rng.exponential(1.0 / gamma, size)
    return t_i, t_i + rng.exponential(1.0, size)


def mean_signal(t, state: QubitState, pulse: PulseTimes | None):
    t = np.asarray(t, dtype=float)
    if state is QubitState.MINUS or pulse is None:
        return -np.ones_like(t)
    inside = (t >= pulse.t_i) & (t < pulse.t_f)
    return np.where(inside, 1.0, -1.0)


def interval_means(edges, t_i, t_f):
    """Exact average of the noise-free PLUS signal over ``[edges[l], edges[l+1])``.

    ``t_i`` and ``t_f`` may be arrays of shape ``(n,)``; the result then has
    shape ``(n, len(edges) - 1)``.
    """
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1], edges[1:]
    t_i = np.asarray(t_i, dtype=float)[..., None]
    t_f = np.asarray(t_f, dtype=float)[..., None]
    overlap = np.clip(np.minimum(hi, t_f) - np.maximum(lo, t_i), 0.0, None)
    return 2.0 * overlap / (hi - lo) - 1.0


def generate_binned_trace(cfg: ReadoutConfig, state: QubitState, rng: np.random.Generator) -> BinnedTrace:
    n = cfg.integral_bins()
    if state is QubitState.PLUS:
        pulse = sample_pulse(cfg.gamma, rng)
        means = interval_means(np.linspace(0.0, cfg.tau_m, n + 1), pulse.t_i, pulse.t_f)
    else:
        pulse = None
        means = -np.ones(n)
    values = means + cfg.sigma * rng.standard_normal(n)
    return BinnedTrace(values, cfg, pulse)


def simulate_binned(cfg: ReadoutConfig, state: QubitState, shots: int, rng: np.random.Generator):
    """``shots`` binned traces at once, shape ``(shots, N)``."""
    n = cfg.integral_bins()
    if state is QubitState.PLUS:
        t_i, t_f = sample_pulses(cfg.gamma, shots, rng)
        means = interval_means(np.linspace(0.0, cfg.tau_m, n + 1), t_i, t_f)
    else:
        means = -np.ones((shots, n))
    return means + cfg.sigma * rng.standard_normal((shots, n))


def default_dt(cfg: ReadoutConfig) -> float:
    scale = cfg.tau_b if cfg.deterministic else min(cfg.tau_b, 1.0 / cfg.gamma)
    return max(scale / 20.0, 1e-4)


def check_dt(cfg: ReadoutConfig, dt: float) -> None:
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if dt > cfg.tau_b / 10.0 * (1 + 1e-12):
        raise ParameterError(f"dt={dt} is coarser than tau_b/10={cfg.tau_b / 10}")
    if not cfg.deterministic and dt > 1.0 / (10.0 * cfg.gamma) * (1 + 1e-12):
        raise ParameterError(f"dt={dt} is coarser than <t_i>/10={1 / (10 * cfg.gamma)}")


def generate_continuous_trace(
    cfg: ReadoutConfig,
    dt: float | None,
    state: QubitState,
    rng: np.random.Generator,
    pulse: PulseTimes | None = None,
    check: bool = True,
) -> ContinuousTrace:
    """White-noise record sampled every ``dt`` on ``[0, tau_m)``.

    Each sample is the exact interval average of the noise-free signal plus
    ``Normal(0, 1/(r dt))`` noise, so block averages reproduce the binned
    statistics exactly.
    """
    if dt is None:
        dt = default_dt(cfg)
    if check:
        check_dt(cfg, dt)
    k = int(round(cfg.tau_m / dt))
    if abs(k * dt - cfg.tau_m) > 1e-9 * cfg.tau_m:
        dt = cfg.tau_m / k
    if state is QubitState.PLUS:
        if pulse is None:
            pulse = sample_pulse(cfg.gamma, rng)
        means = interval_means(dt * np.arange(k + 1), pulse.t_i, pulse.t_f)
    else:
        pulse = None
        means = -np.ones(k)
    samples = means + rng.standard_normal(k) / math.sqrt(cfg.r * dt)
    return ContinuousTrace(dt, samples, pulse, state)


def peak_statistic(trace) -> float:
    values = trace.values if isinstance(trace, BinnedTrace) else np.asarray(trace)
    return float(np.max(values))


def boxcar_statistic(trace) -> float:
    values = trace.values if isinstance(trace, BinnedTrace) else np.asarray(trace)
    return float(np.mean(values))
