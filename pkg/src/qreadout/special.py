"""Numerically stable special functions used by the closed-form distributions.

Everything here works on numpy arrays.  Products of Gaussian CDFs raised to
large powers, ratios ``pdf/cdf`` deep in the tails and sums of the form
``sum_j x**j * y**(M-1-j)`` are evaluated from logarithms so that nothing
overflows on the supports we care about (a few tens of sigma).
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_logpdf(psi, mean, sigma):
    z = (np.asarray(psi, dtype=float) - mean) / sigma
    return -0.5 * z * z - LOG_SQRT_2PI - np.log(sigma)


def norm_pdf(psi, mean, sigma):
    return np.exp(norm_logpdf(psi, mean, sigma))


def norm_logcdf(psi, mean, sigma):
    return log_ndtr((np.asarray(psi, dtype=float) - mean) / sigma)


def norm_cdf(psi, mean, sigma):
    return np.exp(norm_logcdf(psi, mean, sigma))


def mills_ratio(psi, mean, sigma):
    """Return ``pdf/cdf`` of ``Normal(mean, sigma)`` without dividing tiny numbers."""
    return np.exp(norm_logpdf(psi, mean, sigma) - norm_logcdf(psi, mean, sigma))


def log_diff_ndtr(a, b):
    """``log(Phi(a) - Phi(b))`` for ``a > b``, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    right = b > 0
    # right tail: Phi(a) - Phi(b) = Phi(-b) - Phi(-a)
    la, lb = log_ndtr(-b[right]), log_ndtr(-a[right])
    out[right] = la + np.log1p(-np.exp(lb - la))
    left = ~right
    la, lb = log_ndtr(a[left]), log_ndtr(b[left])
    out[left] = la + np.log1p(-np.exp(lb - la))
    return out


def _series(x, coeffs):
    acc = np.zeros_like(x)
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


def _factorial(n):
    out = 1.0
    for k in range(2, n + 1):
        out *= k
    return out


# (1 - e^-x)/x = sum_{n>=1} (-1)^(n-1) x^(n-1) / n!
_PHI1 = [(-1.0) ** (n - 1) / _factorial(n) for n in range(1, 20)]
# (1 - e^-x (1+x))/x^2 = sum_{n>=2} (-1)^n (n-1) x^(n-2) / n!
_PHI2 = [(-1.0) ** n * (n - 1) / _factorial(n) for n in range(2, 21)]


def phi1(x):
    """``(1 - exp(-x)) / x`` with the removable singularity at 0 filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, 0.0, -np.expm1(-x) / np.where(small, 1.0, x))
    return np.where(small, _series(x, _PHI1), out)


def phi2(x):
    """``(1 - exp(-x) (1 + x)) / x**2``, equal to 1/2 at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.1
    xs = np.where(small, 1.0, x)
    with np.errstate(over="ignore", invalid="ignore"):
        out = (-np.expm1(-xs) - xs * np.exp(-xs)) / (xs * xs)
    return np.where(small, _series(x, _PHI2), out)


def log_expm1_ratio(x):
    """``log((exp(x) - 1) / x)``; finite for every real ``x``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log(phi1(np.abs(x)))


def geom_sums(m, s):
    """Geometric sums at ``u = exp(-s)``, ``s >= 0`` (``s`` may be ``inf``).

    Returns ``(g, gp)`` with ``g = sum_{j<m} u**j`` and ``gp = sum_{j<m} j u**j``,
    both continued analytically to real ``m >= 0``.  Near ``u = 1`` the
    forms below avoid the ``(1 - u)**-2`` cancellation entirely.
    """
    m = float(m)
    s = np.asarray(s, dtype=float)
    near = s <= 1.0
    sn = np.where(near, s, 1.0)
    f1 = phi1(sn)
    f1m = phi1(m * sn)
    g_near = m * f1m / f1
    gp_near = m * (m * phi2(m * sn) * f1 - f1m * phi2(sn)) / (f1 * f1)

    sf = np.where(near, 2.0, s)
    u = np.exp(-sf)
    um = np.exp(-m * sf)
    one_u = -np.expm1(-sf)
    g_far = (1.0 - um) / one_u
    gp_far = (u * (1.0 - um) - m * um * one_u) / (one_u * one_u)
    if m == 0.0:
        return np.zeros_like(s), np.zeros_like(s)
    return np.where(near, g_near, g_far), np.where(near, gp_near, gp_far)


def pair_sums(lx, ly, m):
    """Homogeneous sums of two positive numbers given by their logs.

    Returns ``(E, Wx, Wy)`` where, for ``x = exp(lx)`` and ``y = exp(ly)``::

        E  = sum_{j<m} x**j y**(m-1-j)
        Wx = sum_{j<m} j x**j y**(m-1-j)
        Wy = sum_{j<m} (m-1-j) x**j y**(m-1-j)

    so that ``d E = (x'/x) Wx + (y'/y) Wy``.  The larger of ``x, y`` is
    factored out, which keeps the geometric ratio in ``[0, 1]``.
    """
    lx, ly = np.broadcast_arrays(np.asarray(lx, dtype=float), np.asarray(ly, dtype=float))
    if m == 0.0:
        z = np.zeros(lx.shape)
        return z, z, z
    lmax = np.maximum(lx, ly)
    with np.errstate(invalid="ignore"):
        s = np.abs(lx - ly)
    s = np.where(np.isnan(s), np.inf, s)
    g, gp = geom_sums(m, s)
    with np.errstate(over="ignore", invalid="ignore"):
        scale = np.where(np.isneginf(lmax), 0.0, np.exp((m - 1.0) * lmax))
    if m == 1.0:
        scale = np.ones(lx.shape)
    E = scale * g
    low = scale * gp  # weights the smaller argument's exponent
    high = scale * ((m - 1.0) * g - gp)
    x_small = lx <= ly
    Wx = np.where(x_small, low, high)
    Wy = np.where(x_small, high, low)
    return E, Wx, Wy


def _h_sym(y):
    """Complete homogeneous symmetric polynomials h2, h3 of centred points."""
    p2 = np.sum(y * y, axis=0)
    p3 = np.sum(y * y * y, axis=0)
    return p2 / 2.0, p3 / 3.0


def log_exp_divdiff2(x0, x1, x2):
    """``log exp[x0, x1, x2]`` (second divided difference of ``exp``).

    Equals ``log`` of the integral of ``exp(a u + b v)`` over the triangle
    ``0 <= v <= u <= 1`` when the points are ``0, a, a + b``.  Always positive.
    """
    pts = np.stack(np.broadcast_arrays(*(np.asarray(p, dtype=float) for p in (x0, x1, x2))))
    pts = np.sort(pts, axis=0)
    lo, mid, hi = pts
    spread = hi - lo
    close = spread < 1e-3

    c = pts.mean(axis=0)
    h2, h3 = _h_sym(np.where(close, pts - c, 0.0))
    taylor = c + np.log(0.5 + h2 / 24.0 + h3 / 120.0)

    # recursion with the widest pair as denominator; exponentials shifted by hi
    sp = np.where(close, 1.0, spread)
    d_hi = np.where(close, 1.0, hi - mid)
    d_lo = np.where(close, 1.0, mid - lo)
    # f[mid, hi] and f[lo, mid] scaled by exp(-hi)
    f_top = np.exp(mid - hi + log_expm1_ratio(d_hi))
    f_bot = np.exp(lo - hi + log_expm1_ratio(d_lo))
    with np.errstate(divide="ignore"):
        direct = hi + np.log((f_top - f_bot) / sp)
    return np.where(close, taylor, direct)
