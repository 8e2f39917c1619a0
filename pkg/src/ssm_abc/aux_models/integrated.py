"""Integrated auxiliary likelihood: marginalise all coordinates but one.

    L_I(y; b_j) = log  integral exp(L_a(y; b)) p(b_{-j} | b_j) db_{-j}

The conditional prior is represented by a set of quadrature nodes with log
weights; the integral is a log-sum-exp over the nodes that are feasible and
whose likelihood evaluates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from ssm_abc.aux_models.estimation import score_steps
from ssm_abc.aux_models.models import AuxModel

DEFAULT_NODES = 15


@dataclass(frozen=True)
class UniformSlicePrior:
    """Uniform conditional prior on the feasible part of a box slice.

    ``lower``/``upper`` span the full auxiliary vector; the entry for the
    coordinate being integrated out is ignored.
    """

    lower: np.ndarray
    upper: np.ndarray
    n_nodes: int = DEFAULT_NODES

    def nodes(self, model: AuxModel, beta_j: float, j: int) -> tuple[np.ndarray, np.ndarray]:
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        d = len(lower)
        rest = [i for i in range(d) if i != j]
        x, w = np.polynomial.legendre.leggauss(self.n_nodes)
        axes, logw = [], []
        for i in rest:
            half = 0.5 * (upper[i] - lower[i])
            axes.append(lower[i] + half * (x + 1.0))
            logw.append(np.log(0.5 * w))
        pts = np.empty((self.n_nodes ** len(rest), d))
        pts[:, j] = beta_j
        lw = np.zeros(len(pts))
        for k, combo in enumerate(itertools.product(range(self.n_nodes), repeat=len(rest))):
            for axis, (i, n) in enumerate(zip(rest, combo)):
                pts[k, i] = axes[axis][n]
                lw[k] += logw[axis][n]
        ok = model.feasible_rows(pts)
        if not ok.any():
            return pts[:0], lw[:0]
        pts, lw = pts[ok], lw[ok]
        # renormalise so the prior is uniform on the feasible slice
        return pts, lw - logsumexp(lw)


@dataclass(frozen=True)
class PointMassPrior:
    """Degenerate conditional prior: the remaining coordinates are fixed."""

    beta: np.ndarray

    def nodes(self, model: AuxModel, beta_j: float, j: int) -> tuple[np.ndarray, np.ndarray]:
        pt = np.array(self.beta, dtype=float)
        pt[j] = beta_j
        if not model.feasible(pt):
            return np.empty((0, len(pt))), np.zeros(0)
        return pt[None, :], np.zeros(1)


def integrated_loglik(model: AuxModel, data, beta_j: float, j: int, prior) -> float:
    """Integrated log-likelihood of ``data`` at ``beta_j``; -inf if every node fails."""
    pts, lw = prior.nodes(model, beta_j, j)
    if len(pts) == 0:
        return -np.inf
    ll = np.array([model.loglik(data, b) for b in pts])
    ok = np.isfinite(ll)
    if not ok.any():
        return -np.inf
    return float(logsumexp(ll[ok] + lw[ok]))


def integrated_loglik_rows(model: AuxModel, data_rows, beta_j: float, j: int, prior) -> np.ndarray:
    data_rows = np.atleast_2d(data_rows)
    pts, lw = prior.nodes(model, beta_j, j)
    if len(pts) == 0:
        return np.full(data_rows.shape[0], -np.inf)
    ll = np.column_stack([model.loglik_rows(data_rows, b) for b in pts]) + lw
    ll = np.where(np.isfinite(ll), ll, -np.inf)
    return logsumexp(ll, axis=1)


def _stencil(model: AuxModel, beta_j: float, j: int, h: float, prior):
    """Central stencil in beta_j, one-sided where the slice beyond is empty."""
    up_ok = len(prior.nodes(model, beta_j + h, j)[0]) > 0
    dn_ok = len(prior.nodes(model, beta_j - h, j)[0]) > 0
    if up_ok and dn_ok:
        return beta_j + h, beta_j - h, 2.0 * h
    if up_ok:
        return beta_j + h, beta_j, h
    if dn_ok:
        return beta_j, beta_j - h, h
    raise ValueError(f"no feasible difference step around beta_{j} = {beta_j}")


def _step(beta_j: float) -> float:
    return float(score_steps([beta_j])[0])


def integrated_score(model: AuxModel, data, beta_j_hat: float, j: int, prior) -> float:
    """Central-difference derivative of T^-1 integrated_loglik at ``beta_j_hat``."""
    up, dn, div = _stencil(model, beta_j_hat, j, _step(beta_j_hat), prior)
    T = len(data)
    return (integrated_loglik(model, data, up, j, prior)
            - integrated_loglik(model, data, dn, j, prior)) / (div * T)


def integrated_score_rows(model: AuxModel, data_rows, beta_j_hat: float, j: int, prior) -> np.ndarray:
    data_rows = np.atleast_2d(data_rows)
    up, dn, div = _stencil(model, beta_j_hat, j, _step(beta_j_hat), prior)
    T = data_rows.shape[1]
    with np.errstate(invalid="ignore"):
        out = (integrated_loglik_rows(model, data_rows, up, j, prior)
               - integrated_loglik_rows(model, data_rows, dn, j, prior)) / (div * T)
    return np.where(np.isfinite(out), out, np.nan)


def fit_integrated(model: AuxModel, data, j: int, prior, bracket=None) -> tuple[float, float]:
    """Maximise the integrated likelihood over beta_j; returns (beta_j_hat, value)."""
    lo, hi = (model.lower[j], model.upper[j]) if bracket is None else bracket

    def neg(b):
        v = integrated_loglik(model, data, b, j, prior)
        return -v if np.isfinite(v) else 1e100

    # coarse scan first: the integrated likelihood inherits multimodality
    grid = np.linspace(lo, hi, 41)
    vals = np.array([neg(b) for b in grid])
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(neg, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-10 * max(1.0, abs(grid[k]))})
    best = (float(res.x), -float(res.fun)) if res.fun <= vals[k] else (float(grid[k]), -float(vals[k]))
    return best
