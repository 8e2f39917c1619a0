"""Auxiliary maximum likelihood, numerical scores and Hessian-based weights."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ssm_abc.aux_models.models import AuxModel

log = logging.getLogger(__name__)

SCORE_TOL = 1e-4
SCORE_STEP = 1e-5
# absolute floor of the difference step; parameters of order 1e-3 need far less than 1e-5
SCORE_STEP_FLOOR = 1e-8
HESSIAN_STEP = 1e-4
EVAL_BUDGET = 2000
_PENALTY = 1e100


@dataclass
class AuxFit:
    beta_hat: np.ndarray
    loglik: float
    weight: np.ndarray
    converged: bool
    evaluations: int
    score_norm: float = math.nan


def score_steps(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    return np.maximum(SCORE_STEP_FLOOR, SCORE_STEP * np.abs(beta))


def _step_pair(model: AuxModel, beta, i, h):
    """Return (up, down, divisor, one_sided) for a central difference in coordinate i."""
    up = beta.copy()
    dn = beta.copy()
    up[i] += h
    dn[i] -= h
    ok_up, ok_dn = model.feasible(up), model.feasible(dn)
    if ok_up and ok_dn:
        return up, dn, 2.0 * h, False
    if ok_up:
        return up, beta, h, True
    if ok_dn:
        return beta, dn, h, True
    raise ValueError(f"no feasible difference step for coordinate {i} at {beta}")


def numeric_score(model: AuxModel, data, beta_hat, return_flags: bool = False):
    """Central-difference gradient of the average log-likelihood.

    Coordinates whose symmetric step would leave the feasible set fall back to a
    one-sided difference; ``return_flags=True`` also returns which ones did.
    """
    beta = np.asarray(beta_hat, dtype=float)
    T = len(data)
    h = score_steps(beta)
    g = np.empty(len(beta))
    flags = np.zeros(len(beta), dtype=bool)
    base = None
    for i in range(len(beta)):
        up, dn, div, flags[i] = _step_pair(model, beta, i, h[i])
        if flags[i] and base is None:
            base = model.loglik(data, beta)
        fu = base if up is beta else model.loglik(data, up)
        fd = base if dn is beta else model.loglik(data, dn)
        g[i] = (fu - fd) / (div * T)
    return (g, flags) if return_flags else g


def score_rows(model: AuxModel, data_rows, beta, coords=None) -> np.ndarray:
    """Scores of many series at a common ``beta``; shape (n, len(coords)).

    Rows whose likelihood fails at any stencil point get NaN.
    """
    data_rows = np.atleast_2d(data_rows)
    beta = np.asarray(beta, dtype=float)
    coords = range(len(beta)) if coords is None else coords
    T = data_rows.shape[1]
    h = score_steps(beta)
    out = np.empty((data_rows.shape[0], len(coords)))
    base = None
    for k, i in enumerate(coords):
        up, dn, div, one_sided = _step_pair(model, beta, i, h[i])
        if one_sided and base is None:
            base = model.loglik_rows(data_rows, beta)
        fu = base if up is beta else model.loglik_rows(data_rows, up)
        fd = base if dn is beta else model.loglik_rows(data_rows, dn)
        out[:, k] = (fu - fd) / (div * T)
    return out


def numeric_hessian(f, x, rel_step: float = HESSIAN_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = len(x)
    h = rel_step * np.maximum(np.abs(x), 1e-8)
    f0 = f(x)
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def covariance_from_hessian(H: np.ndarray) -> np.ndarray:
    """Invert the negative Hessian, ridge-repairing until the result is PD.

    A Hessian with non-finite entries carries no curvature information; the
    identity is returned in that case.
    """
    info = -0.5 * (H + H.T)
    d = len(info)
    if not np.all(np.isfinite(info)):
        log.warning("non-finite Hessian; using the identity weight")
        return np.eye(d)
    scale = abs(np.trace(info)) / d
    scale = scale if scale > 0 else 1.0
    ridge = 0.0
    for _ in range(30):
        try:
            A = info + ridge * np.eye(d)
            np.linalg.cholesky(A)
            cov = np.linalg.inv(A)
            cov = 0.5 * (cov + cov.T)
            np.linalg.cholesky(cov)
            return cov
        except np.linalg.LinAlgError:
            ridge = 1e-8 * scale if ridge == 0.0 else ridge * 10.0
    return np.eye(d)


class _Counter:
    def __init__(self, model, data):
        self.model = model
        self.data = data
        self.T = len(data)
        self.n = 0

    def avg(self, beta) -> float:
        self.n += 1
        return self.model.loglik(self.data, beta) / self.T


def _nelder_mead(counter: _Counter, start, budget):
    scale = np.where(np.abs(start) > 0, np.abs(start), 1.0)
    model = counter.model
    lb, ub = model.lower / scale, model.upper / scale

    def obj(theta):
        beta = theta * scale
        if not model.feasible(beta):
            return _PENALTY
        v = counter.avg(beta)
        return -v if np.isfinite(v) else _PENALTY

    res = optimize.minimize(
        obj, start / scale, method="Nelder-Mead",
        bounds=list(zip(lb, ub)),
        options={"maxfev": budget, "xatol": 1e-10, "fatol": 1e-13, "adaptive": len(start) > 2},
    )
    return res.x * scale, -res.fun, bool(res.success)


def _newton_polish(counter: _Counter, beta, max_iter: int = 30):
    """Newton steps on the numerical score from a derivative-free optimum."""
    model, data = counter.model, counter.data
    fb = counter.avg(beta)
    for _ in range(max_iter):
        g, flags = numeric_score(model, data, beta, return_flags=True)
        counter.n += 2 * len(beta)
        if np.linalg.norm(g) < 1e-9 or flags.any():
            break
        H = numeric_hessian(counter.avg, beta)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or g @ step <= 0:
            break
        t = 1.0
        while t > 1e-8:
            cand = beta + t * step
            if model.feasible(cand):
                fc = counter.avg(cand)
                if np.isfinite(fc) and fc >= fb:
                    beta, fb = cand, fc
                    break
            t *= 0.5
        else:
            break
    return beta, fb


def _fit_from(counter: _Counter, start, budget: int, polish: bool):
    beta, _, _ = _nelder_mead(counter, start, budget)
    beta, f, ok = _nelder_mead(counter, beta, max(budget - counter.n, 200))
    if polish:
        beta, f = _newton_polish(counter, beta)
    return beta, f, ok


def fit_mle(model: AuxModel, data, start=None, budget: int = EVAL_BUDGET, polish: bool = True) -> AuxFit:
    """Maximise the auxiliary log-likelihood inside the model's feasible box.

    Bounded Nelder-Mead, restarted once from its best point, then Newton
    polishing on the numerical score. Without an explicit ``start`` every
    point of ``model.default_starts`` is tried and the best fit kept; the
    budget applies per start. Deterministic given (data, start).
    """
    data = np.asarray(data, dtype=float)
    starts = model.default_starts(data) if start is None else [np.asarray(start, dtype=float)]
    for s in starts:
        if not model.feasible(s):
            raise ValueError(f"start {s} violates the {model.name} parameter restrictions")
    best = None
    total = 0
    for s in starts:
        counter = _Counter(model, data)
        beta, f, ok2 = _fit_from(counter, s, budget, polish)
        total += counter.n
        if best is None or (np.isfinite(f) and not f <= best[1]):
            best = (beta, f, ok2)
    beta, _, ok2 = best
    loglik = model.loglik(data, beta)
    g = numeric_score(model, data, beta)
    # stencils may straddle non-box restrictions; the raw likelihood is defined there
    H = numeric_hessian(lambda b: model.raw_loglik(data, b), beta)
    weight = covariance_from_hessian(H)
    score_norm = float(np.linalg.norm(g))
    converged = bool(np.isfinite(loglik) and (ok2 or score_norm < SCORE_TOL))
    if not converged:
        log.debug("%s fit did not converge: score norm %.3g after %d evaluations",
                  model.name, score_norm, total)
    return AuxFit(beta_hat=beta, loglik=float(loglik), weight=weight, converged=converged,
                  evaluations=total, score_norm=score_norm)


def fit_coordinate(model: AuxModel, data, beta_ref, j: int, bracket=None) -> tuple[float, bool]:
    """One-dimensional MLE of coordinate ``j`` with the others held at ``beta_ref``."""
    beta_ref = np.asarray(beta_ref, dtype=float)
    lo, hi = (model.lower[j], model.upper[j]) if bracket is None else bracket

    def neg(b):
        beta = beta_ref.copy()
        beta[j] = b
        if not model.feasible(beta):
            return _PENALTY
        v = model.loglik(data, beta)
        return -v if np.isfinite(v) else _PENALTY

    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10 * max(1.0, abs(beta_ref[j]))})
    return float(res.x), bool(res.success and res.fun < _PENALTY)
