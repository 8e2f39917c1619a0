"""Exact likelihood and posterior for the square-root volatility model.

The unit-step transition density is

    f(x | x_prev) = c exp(-u - v) (v / u)^(q/2) I_q(2 sqrt(u v)),
    c = 2 phi2 / (phi3^2 (1 - e^-phi2)),  u = c x_prev e^-phi2,  v = c x,
    q = 2 phi1 / phi3^2 - 1,

and the observation is y_t = ln r_t^2 = ln x_t + ln eta_t^2, so y_t - ln x_t
has the log-chi-squared(1) density exp(w/2 - e^w/2) / sqrt(2 pi). The grid
filter integrates the state out on a fixed quadrature grid; the bootstrap
particle filter gives an independent Monte Carlo check.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.special import logsumexp

from ssm_abc.dgp import SvSqParams
from ssm_abc.stochastic_kernels import DomainError, RngLike, as_generator, cir_constants, sample_cir_transition

GRID_NODES = 100
GRID_TAIL = 1e-6
POSTERIOR_NODES = 200
REFINE_DROP = 25.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class FilterError(ArithmeticError):
    """Filter breakdown: mass underflow or particle collapse at a given time."""

    def __init__(self, message: str, t: int):
        super().__init__(f"{message} at t={t}")
        self.t = t


def log_bessel_i(q, z) -> np.ndarray:
    """log I_q(z) for real q > -1 and z >= 0, without overflow.

    Uses the exponentially scaled library Bessel function and falls back to
    the small-argument series or the uniform large-order expansion where the
    scaled value under- or overflows.
    """
    q, z = np.broadcast_arrays(np.asarray(q, float), np.asarray(z, float))
    shape = q.shape
    q, z = q.ravel(), z.ravel()
    with np.errstate(divide="ignore"):
        out = np.log(special.ive(q, z)) + z
    bad = ~np.isfinite(out)
    if bad.any():
        qb, zb = q[bad], z[bad]
        small = zb * zb < 1e-6 * (qb + 1.0)
        res = np.empty_like(zb)
        with np.errstate(divide="ignore"):
            res[small] = (qb[small] * np.log(0.5 * zb[small]) - special.gammaln(qb[small] + 1.0)
                          + np.log1p(0.25 * zb[small] ** 2 / (qb[small] + 1.0)))
        lg = ~small
        if lg.any():
            nu, t = qb[lg], zb[lg] / qb[lg]
            s = np.sqrt(1.0 + t * t)
            eta = s + np.log(t / (1.0 + s))
            p = 1.0 / s
            u1 = (3.0 * p - 5.0 * p**3) / 24.0
            u2 = (81.0 * p**2 - 462.0 * p**4 + 385.0 * p**6) / 1152.0
            res[lg] = (nu * eta - 0.5 * np.log(2.0 * math.pi * nu) - 0.5 * np.log(s)
                       + np.log1p(u1 / nu + u2 / nu**2))
        out[bad] = res
    return out.reshape(shape)


def log_cir_transition_density(x, x_prev, phi: SvSqParams) -> np.ndarray:
    x, x_prev = np.broadcast_arrays(np.asarray(x, float), np.asarray(x_prev, float))
    if np.any(x <= 0) or np.any(x_prev <= 0):
        raise DomainError("transition density needs strictly positive states")
    c, q = cir_constants(phi.phi1, phi.phi2, phi.phi3)
    u = c * x_prev * math.exp(-phi.phi2)
    v = c * x
    z = 2.0 * np.sqrt(u * v)
    return math.log(c) - u - v + 0.5 * q * (np.log(v) - np.log(u)) + log_bessel_i(q, z)


def cir_transition_density(x, x_prev, phi: SvSqParams):
    out = np.exp(log_cir_transition_density(x, x_prev, phi))
    return float(out) if out.ndim == 0 else out


def log_measurement_density(y, log_x) -> np.ndarray:
    """log density of y = ln x + ln eta^2 given ln x."""
    w = np.asarray(y, float) - np.asarray(log_x, float)
    with np.errstate(over="ignore"):
        return -_HALF_LOG_2PI + 0.5 * w - 0.5 * np.exp(w)


@dataclass(frozen=True)
class StateGrid:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.nodes <= 0) or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must be positive and strictly increasing")
        if self.weights.shape != self.nodes.shape or np.any(self.weights <= 0):
            raise ValueError("grid weights must be positive, one per node")

    @classmethod
    def from_nodes(cls, nodes) -> "StateGrid":
        nodes = np.asarray(nodes, float)
        gaps = np.diff(nodes)
        w = np.zeros_like(nodes)
        w[:-1] += 0.5 * gaps
        w[1:] += 0.5 * gaps
        return cls(nodes=nodes, weights=w)


def stationary_grid(phi: SvSqParams, n_nodes: int = GRID_NODES, tail: float = GRID_TAIL) -> StateGrid:
    """Nodes equally spaced in sqrt(x) between the ``tail`` and ``1 - tail``
    quantiles of the stationary gamma law.

    Equal-probability spacing leaves wide gaps in both tails, where the
    transition kernel is narrow relative to the gaps; the square-root scale
    matches the kernel's spread (its variance is linear in x_prev).
    """
    lo, hi = stats.gamma.ppf([tail, 1.0 - tail], phi.stationary_shape, scale=1.0 / phi.stationary_rate)
    nodes = np.linspace(math.sqrt(lo), math.sqrt(hi), n_nodes) ** 2
    return StateGrid.from_nodes(nodes)


def transition_matrix(phi: SvSqParams, grid: StateGrid) -> np.ndarray:
    """K[i, k] = f(x_i | x_k) * w_k / m_k, so K @ density gives the predicted density.

    m_k is the quadrature mass of column k; dividing by it keeps the
    prediction step mass-preserving when the kernel is under-resolved
    (otherwise quadrature error compounds over time). On a well-resolved
    grid m_k = 1 to many digits.
    """
    logk = log_cir_transition_density(grid.nodes[:, None], grid.nodes[None, :], phi)
    dens = np.exp(logk)
    mass = grid.weights @ dens
    if np.any(~(mass > 0)):
        raise FilterError("transition kernel has no mass on the grid", 0)
    return dens * (grid.weights / mass)[None, :]


def grid_filter(y, phi: SvSqParams, grid: StateGrid | None = None, keep: bool = False):
    """Run the grid filter; returns (loglik, filtered densities or None)."""
    y = np.asarray(y, float)
    grid = stationary_grid(phi) if grid is None else grid
    K = transition_matrix(phi, grid)
    log_nodes = np.log(grid.nodes)
    dens = stats.gamma.pdf(grid.nodes, phi.stationary_shape, scale=1.0 / phi.stationary_rate)
    filtered = np.empty((len(y), len(grid.nodes))) if keep else None
    ll = 0.0
    for t in range(len(y)):
        if t > 0:
            dens = K @ dens
        lg = log_measurement_density(y[t], log_nodes)
        shift = lg.max()
        with np.errstate(invalid="ignore"):
            upd = dens * np.exp(lg - shift)
        mass = float(upd @ grid.weights)
        if not (mass > 0.0) or not math.isfinite(mass):
            raise FilterError("grid filter mass underflow", t)
        ll += shift + math.log(mass)
        dens = upd / mass
        if keep:
            filtered[t] = dens
    return ll, filtered


def grid_filter_loglik(y, phi: SvSqParams, grid: StateGrid | None = None) -> float:
    """Exact log-likelihood of ``y = ln r^2`` by deterministic grid integration."""
    return grid_filter(y, phi, grid)[0]


def particle_filter_loglik(y, phi: SvSqParams, n_particles: int, rng: RngLike) -> float:
    """Bootstrap particle filter with multinomial resampling at every step."""
    if n_particles < 1000:
        raise ValueError("use at least 1000 particles")
    y = np.asarray(y, float)
    g = as_generator(rng)
    x = g.gamma(phi.stationary_shape, 1.0 / phi.stationary_rate, size=n_particles)
    x = np.maximum(x, np.finfo(float).tiny)
    ll = 0.0
    for t in range(len(y)):
        if t > 0:
            x = sample_cir_transition(x, phi, g)
        lw = log_measurement_density(y[t], np.log(x))
        lse = logsumexp(lw)
        ll += lse - math.log(n_particles)
        w = np.exp(lw - lse)
        ess = 1.0 / float(w @ w)
        if ess < 2.0:
            raise FilterError("particle weights collapsed", t)
        x = x[g.choice(n_particles, size=n_particles, p=w)]
    return ll


# ---------------------------------------------------------------- posterior

@dataclass(frozen=True)
class SvSqPriorBox:
    """Flat prior: 0 < phi2 < 1, 0 < phi1 <= phi1_max, 0 < phi3 <= phi3_max, 2 phi1 >= phi3^2."""

    phi1_max: float = 0.025
    phi3_max: float = 0.089

    def bounds(self, coordinate: int) -> tuple[float, float]:
        return [(0.0, self.phi1_max), (0.0, 1.0), (0.0, self.phi3_max)][coordinate]

    def feasible(self, phi) -> bool:
        p1, p2, p3 = phi
        return (0 < p1 <= self.phi1_max and 0 < p2 < 1 and 0 < p3 <= self.phi3_max
                and 2.0 * p1 >= p3 * p3)


@dataclass
class PosteriorGrid:
    param_nodes: np.ndarray
    log_posterior: np.ndarray
    normalized: np.ndarray
    coordinate: int = 1

    def integral(self) -> float:
        return float(np.trapezoid(self.normalized, self.param_nodes))


def _normalize(nodes: np.ndarray, logp: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logp)
    dens = np.zeros_like(logp)
    if finite.sum() == 1:
        # a single feasible node: point mass, scaled so the trapezoid rule gives 1
        k = int(np.flatnonzero(finite)[0])
        e = np.zeros_like(logp)
        e[k] = 1.0
        area = np.trapezoid(e, nodes) if len(nodes) > 1 else 1.0
        dens[k] = 1.0 / area
        return dens
    dens[finite] = np.exp(logp[finite] - logp[finite].max())
    return dens / np.trapezoid(dens, nodes)


def _log_posterior_at(y, nodes, coordinate, fixed, prior, grid_nodes, threads):
    def one(v):
        phi = np.array(fixed, float)
        phi[coordinate] = v
        if not prior.feasible(phi):
            return -np.inf
        p = SvSqParams(*phi)
        try:
            return grid_filter_loglik(y, p, stationary_grid(p, grid_nodes))
        except FilterError:
            return -np.inf

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return np.array(list(ex.map(one, nodes)))
    return np.array([one(v) for v in nodes])


def exact_posterior(y, coordinate: int, fixed, prior: SvSqPriorBox | None = None,
                    n_nodes: int = POSTERIOR_NODES, grid_nodes: int = GRID_NODES,
                    refine: bool = True, threads: int | None = None) -> PosteriorGrid:
    """Posterior of one SV-SQ coordinate on a parameter grid, the others at ``fixed``.

    A first pass spans the prior interval; with ``refine`` a second pass of
    ``n_nodes`` nodes covers the region within ``REFINE_DROP`` log units of
    the maximum, which is where all but a negligible fraction of mass lies.
    """
    prior = SvSqPriorBox() if prior is None else prior
    lo, hi = prior.bounds(coordinate)
    # open interval: keep clear of the endpoints
    pad = 1e-6 * (hi - lo)
    nodes = np.linspace(lo + pad, hi - pad, n_nodes)
    logp = _log_posterior_at(y, nodes, coordinate, fixed, prior, grid_nodes, threads)
    if not np.isfinite(logp).any():
        raise DomainError("no feasible parameter node under the prior box")
    if refine and np.isfinite(logp).sum() > 1:
        keep = np.flatnonzero(logp > np.nanmax(logp[np.isfinite(logp)]) - REFINE_DROP)
        a = nodes[max(keep[0] - 1, 0)]
        b = nodes[min(keep[-1] + 1, len(nodes) - 1)]
        nodes = np.linspace(a, b, n_nodes)
        logp = _log_posterior_at(y, nodes, coordinate, fixed, prior, grid_nodes, threads)
    return PosteriorGrid(param_nodes=nodes, log_posterior=logp,
                         normalized=_normalize(nodes, logp), coordinate=coordinate)
