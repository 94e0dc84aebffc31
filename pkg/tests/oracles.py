"""Independent reference implementations used only by the test suite.

These deliberately avoid the production code paths: closed forms via
scipy.special, arbitrary-precision summation via mpmath, and a composite
fixed-node Gauss-Legendre quadrature of the cut integral for arguments where
summation is infeasible.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
from scipy.special import erfcx, roots_legendre


def ml_reference(alpha: float, beta: float, x: float) -> float:
    """High-accuracy E_{alpha,beta}(-x) for x >= 0, 0 < alpha <= 1.

    Closed forms where available, arbitrary-precision summation for small x,
    composite Gauss-Legendre quadrature of the cut integral beyond (validated
    against mpmath in test_oracle_self_check).
    """
    if x == 0.0:
        return float(mp.rgamma(beta))
    if alpha == 1.0 and beta == 1.0:
        return math.exp(-x)
    if alpha == 0.5 and beta == 1.0:
        return float(erfcx(x))
    if x < 2.0:
        return mp_series(alpha, beta, -x)
    return _composite_gl(alpha, beta, x)


def mp_series(alpha: float, beta: float, z: float) -> float:
    x = abs(z)
    # the largest series term is ~exp(x^(1/alpha)); add guard digits
    log10_max = x ** (1.0 / alpha) / math.log(10.0)
    dps = int(max(35, min(log10_max, 3000) + 35))
    with mp.workdps(dps):
        # the Gamma argument must be formed in mp arithmetic: float rounding
        # in alpha*k is amplified by the cancellation ratio of the sum
        a = mp.mpf(alpha)
        b = mp.mpf(beta)
        zz = mp.mpf(z)
        s = mp.mpf(0)
        k = 0
        while True:
            t = zz**k / mp.gamma(a * k + b)
            s += t
            if k > 4 and abs(t) < mp.mpf(10) ** (-dps) * abs(s):
                break
            k += 1
            if k > 500000:
                raise RuntimeError("oracle series not converging")
        return float(s)


def _sinpi(y: float) -> float:
    m = round(y)
    return (-1.0) ** (m % 2) * math.sin(math.pi * (y - m))


def _composite_gl(alpha: float, beta: float, x: float) -> float:
    """Cut integral by composite 48-point Gauss-Legendre panels (float64).

    E_{a,b}(-x) = (1/(a pi)) int_0^inf r^((1-b)/a) e^{-r^(1/a)}
                  (r sin(pi(1-b)) + x sin(pi(1-b+a)))
                  / (r^2 + 2 r x cos(pi a) + x^2) dr
    """
    a, b = alpha, beta
    nodes, weights = roots_legendre(48)
    sin1 = _sinpi(1 - b)
    sin2 = _sinpi(1 - b + a)
    cosa = math.cos(math.pi * a)

    def kern(r):
        num = r * sin1 + x * sin2
        den = r * r + 2 * r * x * cosa + x * x
        return (r ** ((1 - b) / a)) * np.exp(-(r ** (1.0 / a))) * num / den

    upper = 46.0**a
    breaks = [0.0]
    if cosa < 0 and 0 < -x * cosa < upper:
        peak = -x * cosa
        width = x * math.sqrt(max(1 - cosa * cosa, 1e-30))
        for c in (peak - 3 * width, peak - width, peak + width, peak + 3 * width):
            if 0 < c < upper:
                breaks.append(c)
    breaks.append(upper)
    breaks = sorted(set(breaks))
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        # geometric refinement towards each panel's lower edge, where the
        # kernel's fractional powers have limited smoothness
        sub = np.unique(np.concatenate([[lo], lo + (hi - lo) * 0.5 ** np.arange(28, -1, -1.0), [hi]]))
        for p, q in zip(sub[:-1], sub[1:]):
            mid = 0.5 * (p + q)
            half = 0.5 * (q - p)
            total += half * float(np.dot(weights, kern(mid + half * nodes)))
    return total / (a * math.pi)
