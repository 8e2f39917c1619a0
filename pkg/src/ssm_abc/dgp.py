"""Data-generating processes and AR(1) summary statistics.

Three latent-volatility models are simulated:

* ``SV_SQ`` -- square-root (CIR) variance observed through ``r_t = sqrt(x_t) eta_t``;
  the variance is propagated with the exact unit-step transition.
* ``STABLE_RETURN_SV`` -- Gaussian AR(1) log-variance, returns
  ``r_t = x_t**(1/alpha) w_t`` with totally skewed alpha-stable ``w_t``.
* ``SV_STABLE_VOL`` -- log-variance AR(1) driven by alpha-stable innovations,
  Gaussian returns ``r_t = sqrt(x_t) w_t``.

All simulators return raw returns ``r_t``; the observation actually fed to the
square-root auxiliary filter is ``ln(r_t^2)`` (see :meth:`SimPath.log_squared`).
Batch variants simulate many parameter draws at once, one row per draw.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ssm_abc.stochastic_kernels import (
    DomainError,
    RngLike,
    as_generator,
    check_cir_feasible,
    cms_standard,
)

ZERO_RETURN_FLOOR = 1e-300
BURN_IN = 100
_TINY = np.finfo(float).tiny


class ModelTag(str, enum.Enum):
    SV_SQ = "sv_sq"
    STABLE_RETURN_SV = "stable_return_sv"
    SV_STABLE_VOL = "sv_stable_vol"


class Transform(str, enum.Enum):
    LOG_SQUARED = "log_squared"
    RAW = "raw"


@dataclass(frozen=True)
class SvSqParams:
    phi1: float
    phi2: float
    phi3: float

    def __post_init__(self):
        if not 0.0 < self.phi2 < 1.0:
            raise DomainError(f"phi2 must lie in (0, 1), got {self.phi2}")
        check_cir_feasible(self.phi1, self.phi2, self.phi3)

    def as_array(self) -> np.ndarray:
        return np.array([self.phi1, self.phi2, self.phi3])

    @property
    def stationary_shape(self) -> float:
        return 2.0 * self.phi1 / self.phi3**2

    @property
    def stationary_rate(self) -> float:
        return 2.0 * self.phi2 / self.phi3**2

    @property
    def stationary_mean(self) -> float:
        return self.phi1 / self.phi2

    @property
    def stationary_var(self) -> float:
        return self.phi3**2 * self.phi1 / (2.0 * self.phi2**2)


@dataclass(frozen=True)
class StableSvParams:
    phi1: float
    phi2: float
    phi3: float
    phi4: float

    def __post_init__(self):
        if not 0.0 < self.phi2 < 1.0:
            raise DomainError(f"phi2 must lie in (0, 1), got {self.phi2}")
        # phi3 = 0 switches volatility off and is allowed
        if not self.phi3 >= 0.0:
            raise DomainError(f"phi3 must be non-negative, got {self.phi3}")
        if not 1.0 < self.phi4 <= 2.0:
            raise DomainError(f"phi4 (tail index) must lie in (1, 2], got {self.phi4}")

    def as_array(self) -> np.ndarray:
        return np.array([self.phi1, self.phi2, self.phi3, self.phi4])


@dataclass
class SimPath:
    returns: np.ndarray
    states: np.ndarray
    model_tag: ModelTag

    def __post_init__(self):
        if self.returns.shape != self.states.shape:
            raise ValueError("returns and states must have equal length")

    def log_squared(self) -> np.ndarray:
        return log_squared(self.returns)


@dataclass(frozen=True)
class SummaryVector:
    s: np.ndarray

    def __post_init__(self):
        if self.s.shape != (5,):
            raise ValueError("summary vector has five components")


def log_squared(r: np.ndarray) -> np.ndarray:
    """ln(r^2) with r^2 clamped away from zero."""
    r = np.asarray(r, dtype=float)
    return np.log(np.maximum(r * r, ZERO_RETURN_FLOOR))


def _check_T(T: int) -> None:
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")


def _rows(phis: np.ndarray, width: int) -> np.ndarray:
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    if phis.shape[1] != width:
        raise ValueError(f"expected parameter rows of width {width}, got {phis.shape}")
    return phis


def simulate_sv_sq_batch(phis, T: int, rng: RngLike) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``len(phis)`` SV-SQ paths; returns ``(returns, states)`` of shape (n, T).

    x_0 is a stationary gamma draw; each step uses the exact non-central
    chi-squared transition, ``2 c x_t ~ chi2(2q + 2, 2u)``.
    """
    _check_T(T)
    phis = _rows(phis, 3)
    for row in phis:
        if not 0.0 < row[1] < 1.0:
            raise DomainError(f"phi2 must lie in (0, 1), got {row[1]}")
        check_cir_feasible(*row)
    g = as_generator(rng)
    p1, p2, p3 = phis.T
    c = 2.0 * p2 / (p3**2 * (1.0 - np.exp(-p2)))
    df = 4.0 * p1 / p3**2
    decay = np.exp(-p2)
    x = g.gamma(2.0 * p1 / p3**2, p3**2 / (2.0 * p2))
    n = len(phis)
    states = np.empty((n, T))
    for t in range(T):
        x = g.noncentral_chisquare(df, 2.0 * c * x * decay) / (2.0 * c)
        x = np.maximum(x, _TINY)
        states[:, t] = x
    eta = g.standard_normal((n, T))
    return np.sqrt(states) * eta, states


def simulate_sv_sq(phi: SvSqParams, T: int, rng: RngLike) -> SimPath:
    r, x = simulate_sv_sq_batch(phi.as_array()[None, :], T, rng)
    return SimPath(returns=r[0], states=x[0], model_tag=ModelTag.SV_SQ)


def _check_stable_rows(phis: np.ndarray) -> None:
    for row in phis:
        StableSvParams(*row)


def _log_ar1(phis: np.ndarray, innov: np.ndarray) -> np.ndarray:
    """ln x_t = phi1 + phi2 ln x_{t-1} + phi3 v_t with ``BURN_IN`` leading steps dropped."""
    p1, p2, p3 = phis[:, 0], phis[:, 1], phis[:, 2]
    n, total = innov.shape
    h = p1 / (1.0 - p2)
    out = np.empty((n, total - BURN_IN))
    for t in range(total):
        h = p1 + p2 * h + p3 * innov[:, t]
        if t >= BURN_IN:
            out[:, t - BURN_IN] = h
    return out


def _stable_matrix(alpha: np.ndarray, skew: float, shape, g: np.random.Generator) -> np.ndarray:
    u = g.uniform(-math.pi / 2.0, math.pi / 2.0, size=shape)
    w = g.standard_exponential(size=shape)
    return cms_standard(alpha[:, None], skew, u, w)


def simulate_stable_return_sv_batch(phis, T: int, rng: RngLike) -> tuple[np.ndarray, np.ndarray]:
    _check_T(T)
    phis = _rows(phis, 4)
    _check_stable_rows(phis)
    g = as_generator(rng)
    n = len(phis)
    logx = _log_ar1(phis, g.standard_normal((n, T + BURN_IN)))
    w = _stable_matrix(phis[:, 3], -1.0, (n, T), g)
    states = np.maximum(np.exp(logx), _TINY)
    returns = np.exp(logx / phis[:, 3:4]) * w
    return returns, states


def simulate_stable_return_sv(phi: StableSvParams, T: int, rng: RngLike) -> SimPath:
    r, x = simulate_stable_return_sv_batch(phi.as_array()[None, :], T, rng)
    return SimPath(returns=r[0], states=x[0], model_tag=ModelTag.STABLE_RETURN_SV)


def simulate_sv_stable_vol_batch(phis, T: int, rng: RngLike) -> tuple[np.ndarray, np.ndarray]:
    _check_T(T)
    phis = _rows(phis, 4)
    _check_stable_rows(phis)
    g = as_generator(rng)
    n = len(phis)
    v = _stable_matrix(phis[:, 3], -1.0, (n, T + BURN_IN), g)
    logx = _log_ar1(phis, v)
    states = np.maximum(np.exp(logx), _TINY)
    returns = np.exp(0.5 * logx) * g.standard_normal((n, T))
    return returns, states


def simulate_sv_stable_vol(phi: StableSvParams, T: int, rng: RngLike) -> SimPath:
    r, x = simulate_sv_stable_vol_batch(phi.as_array()[None, :], T, rng)
    return SimPath(returns=r[0], states=x[0], model_tag=ModelTag.SV_STABLE_VOL)


SIMULATORS = {
    ModelTag.SV_SQ: simulate_sv_sq_batch,
    ModelTag.STABLE_RETURN_SV: simulate_stable_return_sv_batch,
    ModelTag.SV_STABLE_VOL: simulate_sv_stable_vol_batch,
}


def ar1_summary_stats_batch(returns, transform: Transform | str = Transform.LOG_SQUARED) -> np.ndarray:
    """Row-wise AR(1) sufficient statistics; returns an (n, 5) array."""
    y = np.atleast_2d(np.asarray(returns, dtype=float))
    if y.shape[1] < 3:
        raise ValueError("need at least three observations")
    if Transform(transform) is Transform.LOG_SQUARED:
        y = log_squared(y)
    inner = y[:, 1:-1]
    ends = y[:, [0, -1]]
    return np.column_stack([
        inner.sum(axis=1),
        (inner * inner).sum(axis=1),
        (y[:, 1:] * y[:, :-1]).sum(axis=1),
        ends.sum(axis=1),
        (ends * ends).sum(axis=1),
    ])


def ar1_summary_stats(y, transform: Transform | str = Transform.LOG_SQUARED) -> SummaryVector:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("expected a single series")
    return SummaryVector(ar1_summary_stats_batch(y[None, :], transform)[0])
