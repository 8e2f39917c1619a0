"""Seeded sampling primitives shared by the simulators.

Every sampler takes either an :class:`RngStream` or an already constructed
``numpy.random.Generator``. An ``RngStream`` is a (seed, stream_id) pair that
deterministically maps onto a counter-based Philox generator, so the same pair
always replays the same sequence and distinct stream ids give independent
sequences.

Alpha-stable draws use the Chambers-Mallows-Stuck construction in the
"1-parameterization" (Samorodnitsky-Taqqu): for alpha > 1 the location is the
mean, and the location shift is applied after the standard draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np
from scipy import special

if TYPE_CHECKING:
    from ssm_abc.dgp import SvSqParams

# E[ln(eta^2)] for standard normal eta: digamma(1/2) + ln 2
LOG_CHISQ_MEAN = float(special.digamma(0.5) + math.log(2.0))
LOG_CHISQ_VAR = math.pi**2 / 2.0

# above this lower bound the inverse-CDF route loses tail precision
_TRUNC_INVERSION_LIMIT = 5.0


class DomainError(ValueError):
    """Raised when sampler parameters fall outside their admissible domain."""


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise DomainError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class StableParams:
    alpha: float
    skew: float = 0.0
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (1.0 < self.alpha <= 2.0):
            raise DomainError(f"alpha must lie in (1, 2], got {self.alpha}")
        if abs(self.skew) > 1.0:
            raise DomainError(f"|skew| must be <= 1, got {self.skew}")
        if not self.scale > 0.0:
            raise DomainError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class LogChiSqNoise:
    omega: float = LOG_CHISQ_MEAN

    @property
    def variance(self) -> float:
        return LOG_CHISQ_VAR


@dataclass(frozen=True)
class TruncNormalSpec:
    """Standard normal conditioned on exceeding ``lower``."""

    lower: float = -math.inf

    @classmethod
    def for_aux(cls, beta1: float, beta3: float) -> "TruncNormalSpec":
        return cls(lower=-beta1 / beta3)

    @property
    def mean_lambda(self) -> float:
        return inverse_mills(self.lower)

    @property
    def variance(self) -> float:
        c = self.lower
        if math.isinf(c):
            return 1.0
        lam = inverse_mills(c)
        return 1.0 - lam * (lam - c)


def inverse_mills(c: float) -> float:
    """phi(c) / (1 - Phi(c)), stable for large positive c."""
    if c == -math.inf:
        return 0.0
    # erfcx keeps the ratio finite far into the upper tail
    return math.sqrt(2.0 / math.pi) / special.erfcx(c / math.sqrt(2.0))


def cms_standard(alpha, skew, u, w):
    """Chambers-Mallows-Stuck transform of V ~ U(-pi/2, pi/2), W ~ Exp(1).

    Returns a standard (location 0, scale 1) draw in the 1-parameterization;
    valid for alpha != 1. Broadcasts over arrays, including per-element
    ``alpha`` and ``skew``.
    """
    zeta = skew * np.tan(np.pi * alpha / 2.0)
    b = np.arctan(zeta) / alpha
    s = (1.0 + zeta * zeta) ** (1.0 / (2.0 * alpha))
    ab = alpha * (u + b)
    return s * np.sin(ab) / np.cos(u) ** (1.0 / alpha) * (np.cos(u - ab) / w) ** ((1.0 - alpha) / alpha)


def sample_alpha_stable(params: StableParams, rng: RngLike, size=None):
    """Draw from S(alpha, skew, location, scale)."""
    if not isinstance(params, StableParams):
        raise TypeError("params must be a StableParams")
    g = as_generator(rng)
    u = g.uniform(-math.pi / 2.0, math.pi / 2.0, size=size)
    w = g.standard_exponential(size=size)
    x = params.scale * cms_standard(params.alpha, params.skew, u, w) + params.location
    return float(x) if size is None else x


def sample_trunc_normal(spec: TruncNormalSpec, rng: RngLike, size=None):
    c = spec.lower
    if math.isnan(c):
        raise DomainError("lower bound is NaN")
    g = as_generator(rng)
    if c == -math.inf:
        out = g.standard_normal(size=size)
    elif c <= _TRUNC_INVERSION_LIMIT:
        # invert the survival function: x = Q^{-1}(U * Q(c))
        tail = special.ndtr(-c)
        # uniform on (0, 1] so the argument never reaches ndtri(0) = -inf
        u = 1.0 - g.uniform(size=size)
        out = -special.ndtri(u * tail)
        out = np.maximum(out, np.nextafter(c, np.inf))
    else:
        out = _robert_tail(c, g, size)
    return float(out) if size is None else out


def _robert_tail(c: float, g: np.random.Generator, size):
    """Exponential-proposal rejection for far upper tails (Robert 1995)."""
    n = 1 if size is None else int(np.prod(size))
    a = 0.5 * (c + math.sqrt(c * c + 4.0))
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, 2 * (n - filled))
        z = c + g.standard_exponential(m) / a
        keep = z[g.uniform(size=m) <= np.exp(-0.5 * (z - a) ** 2)]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out[0] if size is None else out.reshape(size)


def sample_log_chisq(noise: LogChiSqNoise, rng: RngLike, size=None):
    """ln(eta^2) - omega for standard normal eta."""
    g = as_generator(rng)
    eta = g.standard_normal(size=size)
    out = np.log(np.maximum(eta * eta, 1e-300)) - noise.omega
    return float(out) if size is None else out


def cir_constants(phi1: float, phi2: float, phi3: float) -> tuple[float, float]:
    """(c, q) of the exact square-root transition over a unit step."""
    c = 2.0 * phi2 / (phi3**2 * (1.0 - math.exp(-phi2)))
    q = 2.0 * phi1 / phi3**2 - 1.0
    return c, q


def check_cir_feasible(phi1: float, phi2: float, phi3: float) -> None:
    if not (phi1 > 0 and phi2 > 0 and phi3 > 0):
        raise DomainError(f"CIR parameters must be positive, got {(phi1, phi2, phi3)}")
    if 2.0 * phi1 < phi3**2 * (1.0 - 1e-12):
        raise DomainError(f"infeasible CIR parameters: 2*phi1 < phi3^2 for {(phi1, phi2, phi3)}")


def sample_cir_transition(x_prev, phi: "SvSqParams", rng: RngLike):
    """Exact draw of x_t | x_{t-1} via the Poisson-Gamma mixture.

    ``x_prev`` may be a scalar or an array; an array yields one independent
    transition per element.
    """
    check_cir_feasible(phi.phi1, phi.phi2, phi.phi3)
    xp = np.asarray(x_prev, dtype=float)
    if np.any(~(xp > 0)):
        raise DomainError("x_prev must be strictly positive")
    g = as_generator(rng)
    c, q = cir_constants(phi.phi1, phi.phi2, phi.phi3)
    u = c * xp * math.exp(-phi.phi2)
    j = g.poisson(u)
    x = g.gamma(q + 1.0 + j, 1.0 / c)
    # gamma draws with tiny shape can underflow to exactly zero
    x = np.maximum(x, np.finfo(float).tiny)
    return float(x) if xp.ndim == 0 else x
