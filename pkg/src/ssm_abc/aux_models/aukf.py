"""Augmented unscented Kalman filter for the discretised square-root model.

The auxiliary model is

    y_t = ln(x_t) + eps_t,                  eps_t ~ N(center, pi^2 / 2)
    x_t = b1 + b2 x_{t-1} + b3 sqrt(x_{t-1}) e_t,   e_t ~ N(0, 1) truncated below at -b1/b3

and the filter carries a 3 x 7 matrix of augmented sigma points
(state, state noise, measurement noise). Spread factors are sqrt(3) in every
direction, which for a three-dimensional augmented state gives outer weights
1/6 and a zero centre weight. The likelihood conditions on the first
observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ssm_abc.stochastic_kernels import LOG_CHISQ_VAR, TruncNormalSpec

SPREAD = math.sqrt(3.0)
SIGMA_WEIGHTS = np.array([0.0] + [1.0 / 6.0] * 6)
LOG_CHISQ_NOISE_CENTER = -1.27
STATE_FLOOR = 1e-10
NOISE_CENTERS = {"appendix_c": LOG_CHISQ_NOISE_CENTER, "zero": 0.0}

MODE_SQRT = 0
MODE_AFFINE = 1

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SigmaPointMatrix:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.points.shape != (3, 7) or self.weights.shape != (7,):
            raise ValueError("sigma point matrix is 3 x 7 with 7 weights")

    def weighted_mean(self) -> np.ndarray:
        return self.points @ self.weights


def sigma_point_matrix(x_mean, x_var, v_mean, v_var, e_mean, e_var,
                       a=(SPREAD, SPREAD, SPREAD), b=(SPREAD, SPREAD, SPREAD)) -> SigmaPointMatrix:
    """Columns: centre, +a_j sqrt(P_j) for j = 1..3, then -b_j sqrt(P_j)."""
    center = np.array([x_mean, v_mean, e_mean], dtype=float)
    sd = np.sqrt([x_var, v_var, e_var])
    pts = np.repeat(center[:, None], 7, axis=1)
    for j in range(3):
        pts[j, 1 + j] += a[j] * sd[j]
        pts[j, 4 + j] -= b[j] * sd[j]
    return SigmaPointMatrix(pts, SIGMA_WEIGHTS.copy())


def state_noise_moments(beta1: float, beta3: float) -> tuple[float, float, float]:
    """(mean, variance, lower bound) of the truncated state noise."""
    spec = TruncNormalSpec.for_aux(beta1, beta3)
    return spec.mean_lambda, spec.variance, spec.lower


def implied_stationary(beta1: float, beta2: float, beta3: float) -> tuple[float, float]:
    m = beta1 / (1.0 - beta2)
    return m, beta3**2 * m / (1.0 - beta2**2)


@numba.njit(cache=True, nogil=True)
def _run(y, mode, k0, k1, k2, h0, h1, v_mean, v_var, v_lower, e_mean, e_var,
         m0, p0, floor, moments):
    T = y.shape[0]
    w = 1.0 / 6.0
    s3 = math.sqrt(3.0)
    sv = s3 * math.sqrt(v_var)
    se = s3 * math.sqrt(e_var)
    vp = v_mean + sv
    vm = v_mean - sv
    if mode == 0 and vm < v_lower:
        vm = v_lower
    xs = np.empty(7)
    vs = np.empty(7)
    es = np.empty(7)
    kx = np.empty(7)
    yy = np.empty(7)
    store = moments.shape[0] == T
    m = m0
    p = p0
    ll = 0.0
    for t in range(T):
        # propagate the filtered sigma points through the transition
        sx = s3 * math.sqrt(p)
        for i in range(7):
            xs[i] = m
            vs[i] = v_mean
            es[i] = e_mean
        xs[1] = m + sx
        xs[4] = m - sx
        vs[2] = vp
        vs[5] = vm
        for i in range(1, 7):
            xi = xs[i]
            if mode == 0:
                if xi < floor:
                    xi = floor
                kx[i] = k0 + k1 * xi + k2 * math.sqrt(xi) * vs[i]
            else:
                kx[i] = k0 + k1 * xi + k2 * vs[i]
        mp = 0.0
        for i in range(1, 7):
            mp += w * kx[i]
        pp = 0.0
        for i in range(1, 7):
            d = kx[i] - mp
            pp += w * d * d
        # redraw sigma points from the predicted moments
        sx = s3 * math.sqrt(pp)
        for i in range(7):
            xs[i] = mp
        xs[1] = mp + sx
        xs[4] = mp - sx
        es[3] = e_mean + se
        es[6] = e_mean - se
        for i in range(1, 7):
            xi = xs[i]
            if mode == 0:
                if xi < floor:
                    xi = floor
                    xs[i] = xi
                yy[i] = math.log(xi) + es[i]
            else:
                yy[i] = h0 + h1 * xi + es[i]
        yp = 0.0
        for i in range(1, 7):
            yp += w * yy[i]
        py = 0.0
        cxy = 0.0
        for i in range(1, 7):
            dy = yy[i] - yp
            py += w * dy * dy
            cxy += w * (xs[i] - mp) * dy
        if not (py > 0.0) or not math.isfinite(py):
            return math.nan
        zeta = y[t] - yp
        if t > 0:
            ll -= 0.5 * (_LOG_2PI + math.log(py) + zeta * zeta / py)
        gain = cxy / py
        m = mp + gain * zeta
        p = pp - gain * gain * py
        if p < 0.0:
            p = 0.0
        if store:
            moments[t, 0] = mp
            moments[t, 1] = pp
            moments[t, 2] = yp
            moments[t, 3] = py
            moments[t, 4] = m
            moments[t, 5] = p
    if not math.isfinite(ll):
        return math.nan
    return ll


@numba.njit(cache=True, nogil=True)
def _run_rows(Y, mode, k0, k1, k2, h0, h1, v_mean, v_var, v_lower, e_mean, e_var, m0, p0, floor):
    n = Y.shape[0]
    out = np.empty(n)
    dummy = np.empty((0, 6))
    for r in range(n):
        out[r] = _run(Y[r], mode, k0, k1, k2, h0, h1, v_mean, v_var, v_lower,
                      e_mean, e_var, m0, p0, floor, dummy)
    return out


def _sqrt_model_args(beta, noise_center: float):
    b1, b2, b3 = (float(v) for v in beta)
    lam, v_var, lower = state_noise_moments(b1, b3)
    m0, p0 = implied_stationary(b1, b2, b3)
    return (MODE_SQRT, b1, b2, b3, 0.0, 1.0, lam, v_var, lower,
            noise_center, LOG_CHISQ_VAR, m0, p0, STATE_FLOOR)


def resolve_noise_center(noise_center) -> float:
    if isinstance(noise_center, str):
        try:
            return NOISE_CENTERS[noise_center]
        except KeyError:
            raise ValueError(f"unknown noise centre {noise_center!r}; choose from {sorted(NOISE_CENTERS)}") from None
    return float(noise_center)


def aukf_loglik(y, beta, noise_center="appendix_c") -> float:
    """AUKF auxiliary log-likelihood of the log-squared series ``y``.

    Returns NaN when the filter breaks down (non-positive or non-finite
    predictive variance); callers treat that as an evaluation failure.
    """
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1 or len(y) < 2:
        raise ValueError("need a 1-d series with at least two observations")
    args = _sqrt_model_args(beta, resolve_noise_center(noise_center))
    return float(_run(y, *args, np.empty((0, 6))))


def aukf_loglik_rows(Y, beta, noise_center="appendix_c") -> np.ndarray:
    """``aukf_loglik`` for every row of ``Y`` at a common ``beta``."""
    Y = np.ascontiguousarray(np.atleast_2d(Y), dtype=float)
    args = _sqrt_model_args(beta, resolve_noise_center(noise_center))
    return _run_rows(Y, *args)


def aukf_moments(y, beta, noise_center="appendix_c") -> tuple[float, np.ndarray]:
    """Log-likelihood plus per-step moments.

    Moment columns: predicted state mean and variance, predicted observation
    mean and variance, filtered state mean and variance.
    """
    y = np.ascontiguousarray(y, dtype=float)
    out = np.full((len(y), 6), np.nan)
    ll = _run(y, *_sqrt_model_args(beta, resolve_noise_center(noise_center)), out)
    return float(ll), out


def affine_aukf_moments(y, k, h, v_moments, e_moments, init) -> tuple[float, np.ndarray]:
    """Same recursion with affine maps, for checking against an exact Kalman filter.

    ``k = (k0, k1, k2)`` gives x_t = k0 + k1 x_{t-1} + k2 v_t and ``h = (h0, h1)``
    gives y_t = h0 + h1 x_t + e_t; no truncation is applied.
    """
    y = np.ascontiguousarray(y, dtype=float)
    out = np.full((len(y), 6), np.nan)
    ll = _run(y, MODE_AFFINE, float(k[0]), float(k[1]), float(k[2]), float(h[0]), float(h[1]),
              float(v_moments[0]), float(v_moments[1]), -np.inf,
              float(e_moments[0]), float(e_moments[1]), float(init[0]), float(init[1]), 0.0, out)
    return float(ll), out
