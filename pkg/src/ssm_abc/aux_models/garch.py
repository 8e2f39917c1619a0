"""GARCH(1,1) auxiliary likelihoods.

``garch_t_loglik`` is the absolute-value form on the conditional standard
deviation with standardized Student-t errors; ``garch_loglik`` is the usual
variance recursion with Gaussian errors. Both start the recursion at a sample
moment of the data (mean absolute return, mean squared return).
"""

from __future__ import annotations

import math

import numba
import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


@numba.njit(cache=True, nogil=True)
def _garch_t(r, b1, b2, b3, nu):
    T = r.shape[0]
    x = 0.0
    for t in range(T):
        x += abs(r[t])
    x /= T
    const = math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))
    ll = 0.0
    for t in range(T):
        if t > 0:
            x = b1 + b2 * abs(r[t - 1]) + b3 * x
        if not (x > 0.0):
            return math.nan
        e = r[t] / x
        ll += const - 0.5 * (nu + 1.0) * math.log1p(e * e / (nu - 2.0)) - math.log(x)
    if not math.isfinite(ll):
        return math.nan
    return ll


@numba.njit(cache=True, nogil=True)
def _garch(r, b1, b2, b3):
    T = r.shape[0]
    x = 0.0
    for t in range(T):
        x += r[t] * r[t]
    x /= T
    ll = 0.0
    for t in range(T):
        if t > 0:
            x = b1 + b2 * r[t - 1] * r[t - 1] + b3 * x
        if not (x > 0.0):
            return math.nan
        ll -= 0.5 * (_LOG_2PI + math.log(x) + r[t] * r[t] / x)
    if not math.isfinite(ll):
        return math.nan
    return ll


@numba.njit(cache=True, nogil=True)
def _garch_t_rows(R, b1, b2, b3, nu):
    out = np.empty(R.shape[0])
    for i in range(R.shape[0]):
        out[i] = _garch_t(R[i], b1, b2, b3, nu)
    return out


@numba.njit(cache=True, nogil=True)
def _garch_rows(R, b1, b2, b3):
    out = np.empty(R.shape[0])
    for i in range(R.shape[0]):
        out[i] = _garch(R[i], b1, b2, b3)
    return out


def _series(r) -> np.ndarray:
    r = np.ascontiguousarray(r, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("need a 1-d series with at least two observations")
    return r


def garch_t_loglik(r, beta) -> float:
    b1, b2, b3, nu = (float(v) for v in beta)
    if not (b1 > 0 and b2 >= 0 and b3 >= 0 and nu > 2):
        return math.nan
    return float(_garch_t(_series(r), b1, b2, b3, nu))


def garch_loglik(r, beta) -> float:
    b1, b2, b3 = (float(v) for v in beta)
    if not (b1 > 0 and b2 >= 0 and b3 >= 0):
        return math.nan
    return float(_garch(_series(r), b1, b2, b3))


def garch_t_loglik_rows(R, beta) -> np.ndarray:
    R = np.ascontiguousarray(np.atleast_2d(R), dtype=float)
    b1, b2, b3, nu = (float(v) for v in beta)
    return _garch_t_rows(R, b1, b2, b3, nu)


def garch_loglik_rows(R, beta) -> np.ndarray:
    R = np.ascontiguousarray(np.atleast_2d(R), dtype=float)
    b1, b2, b3 = (float(v) for v in beta)
    return _garch_rows(R, b1, b2, b3)
