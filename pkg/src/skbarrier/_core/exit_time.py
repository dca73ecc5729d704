"""Quantile table for the exit time of Brownian motion from the unit ball.

Started at the center of the unit ball in R^d, the exit time T has survival
function

    P(T > t) = sum_k  j_k^(nu-1) / (2^(nu-1) Gamma(nu+1) J_{nu+1}(j_k)) * exp(-j_k^2 t / 2)

with nu = d/2 - 1 and j_k the positive zeros of J_nu. Exit position and exit
time are independent, so a walk-on-spheres jump of radius rho can be given an
exact time rho^2 * T.
"""
from functools import lru_cache

import numpy as np
from scipy import optimize, special

N_QUANTILES = 4096


def bessel_zeros(nu, count):
    """First ``count`` positive zeros of J_nu (nu >= 0)."""
    if float(nu).is_integer():
        return special.jn_zeros(int(nu), count)
    # McMahon spacing is ~pi, so a 0.05 scan never skips a sign change
    hi = (count + nu / 2 + 2) * np.pi
    xs = np.arange(0.05, hi, 0.05)
    vals = special.jv(nu, xs)
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    zeros = [optimize.brentq(lambda z: special.jv(nu, z), xs[i], xs[i + 1], xtol=1e-14)
             for i in idx[:count]]
    return np.asarray(zeros)


def survival(t, d, terms=400):
    nu = d / 2.0 - 1.0
    j = bessel_zeros(nu, terms)
    coef = j ** (nu - 1.0) / (2.0 ** (nu - 1.0) * special.gamma(nu + 1.0) * special.jv(nu + 1.0, j))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.exp(-0.5 * np.outer(t, j * j)) @ coef


@lru_cache(maxsize=None)
def exit_time_table(d):
    """Return ``(quantiles, tail_coef, tail_rate)`` for dimension ``d``.

    ``quantiles[i]`` is the (i / N) quantile of T for i < N; above the last
    entry the survival function is one exponential term,
    ``tail_coef * exp(-tail_rate * t)``.
    """
    nu = d / 2.0 - 1.0
    j1 = bessel_zeros(nu, 1)[0]
    a1 = j1 ** (nu - 1.0) / (2.0 ** (nu - 1.0) * special.gamma(nu + 1.0) * special.jv(nu + 1.0, j1))
    lam = 0.5 * j1 * j1
    t = np.concatenate([np.linspace(0.0, 0.02, 400, endpoint=False),
                        np.geomspace(0.02, 40.0 / lam, 20000)])
    cdf = np.empty_like(t)
    cdf[0] = 0.0
    cdf[1:] = 1.0 - survival(t[1:], d)
    cdf = np.clip(np.maximum.accumulate(cdf), 0.0, 1.0)
    u = np.arange(N_QUANTILES) / N_QUANTILES
    q = np.interp(u, cdf, t)
    q[0] = 0.0
    q.setflags(write=False)
    return q, float(a1), float(lam)


def sample_exit_time(u, d):
    """Vectorised inverse-CDF draw of T from uniforms ``u``."""
    q, a1, lam = exit_time_table(d)
    u = np.asarray(u, dtype=float)
    m = q.shape[0]
    p = u * m
    i = np.floor(p).astype(np.int64)
    body = i < m - 1
    ib = np.where(body, i, 0)
    out = np.where(body, q[ib] + (p - ib) * (q[np.minimum(ib + 1, m - 1)] - q[ib]),
                   np.log(a1 / np.maximum(1.0 - u, 1e-300)) / lam)
    return out
