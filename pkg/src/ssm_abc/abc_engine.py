"""Rejection ABC with auxiliary-likelihood and summary-statistic criteria.

A run draws N parameter vectors from a box prior, simulates one series per
draw, reduces each series to a criterion statistic (auxiliary score,
auxiliary MLE, AR(1) summaries) and keeps the draws whose distance to the
observed statistic falls in the lowest quantile.

Draws are simulated in fixed-size chunks; chunk ``c`` uses
``RngStream(master_seed, c)`` and draw ``i`` carries ``stream_id = i``. The
chunking never depends on the thread count, so results are identical for any
number of workers. Statistics that need the whole pool (summary variances,
the Fearnhead-Prangle regression) are reduced after all chunks finish.

Criteria are either joint (one distance per draw) or marginal (one distance
per unknown coordinate, each giving its own retained set).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ssm_abc.aux_models.estimation import fit_coordinate, fit_mle, score_rows
from ssm_abc.aux_models.integrated import (
    PointMassPrior,
    UniformSlicePrior,
    fit_integrated,
    integrated_score_rows,
)
from ssm_abc.aux_models.models import AuxModel
from ssm_abc.dgp import SIMULATORS, ModelTag, Transform, ar1_summary_stats_batch
from ssm_abc.stochastic_kernels import RngStream

log = logging.getLogger(__name__)

CHUNK_SIZE = 250
OBSERVED_STREAM = 2**63
KDE_BANDWIDTH_FLOOR = 1e-8
FP_RIDGE = 1e-8
THREADS_ENV = "SSM_ABC_THREADS"


class AbcRunError(RuntimeError):
    """Raised when a run cannot produce any finite distance."""


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``SSM_ABC_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError(f"thread count must be positive, got {threads}")
    return threads


# ---------------------------------------------------------------- priors

def _cir_restriction(phis: np.ndarray) -> np.ndarray:
    return 2.0 * phis[:, 0] >= phis[:, 2] ** 2


RESTRICTIONS = {"cir": _cir_restriction}


@dataclass(frozen=True)
class BoxPrior:
    """Uniform prior on the free coordinates; the rest stay at ``fixed``.

    Draws on the closed lower edge and draws violating the named
    restriction are rejected and redrawn.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    fixed: tuple[float, ...]
    free: tuple[int, ...]
    restriction: str | None = None

    def __post_init__(self):
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if not (len(lo) == len(hi) == len(self.fixed)):
            raise ValueError("lower, upper and fixed must have equal length")
        if not self.free:
            raise ValueError("at least one coordinate must be free")
        if np.any(hi[list(self.free)] <= lo[list(self.free)]):
            raise ValueError("empty prior box")
        if self.restriction is not None and self.restriction not in RESTRICTIONS:
            raise ValueError(f"unknown restriction {self.restriction!r}")

    @property
    def dim(self) -> int:
        return len(self.fixed)

    def admissible(self, phis: np.ndarray) -> np.ndarray:
        phis = np.atleast_2d(phis)
        free = list(self.free)
        lo, hi = np.asarray(self.lower)[free], np.asarray(self.upper)[free]
        ok = np.all((phis[:, free] > lo) & (phis[:, free] <= hi), axis=1)
        if self.restriction is not None:
            ok &= RESTRICTIONS[self.restriction](phis)
        return ok

    def sample(self, g: np.random.Generator, n: int) -> np.ndarray:
        free = list(self.free)
        lo, hi = np.asarray(self.lower)[free], np.asarray(self.upper)[free]
        out = np.empty((0, self.dim))
        for _ in range(1000):
            cand = np.tile(np.asarray(self.fixed, dtype=float), (n, 1))
            cand[:, free] = g.uniform(lo, hi, size=(n, len(free)))
            out = np.vstack([out, cand[self.admissible(cand)]])
            if len(out) >= n:
                return out[:n]
        raise ValueError("prior restriction rejects almost every draw")


# ---------------------------------------------------------------- distances

def _check_pd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    try:
        np.linalg.cholesky(0.5 * (m + m.T))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return m


def _quad_form_rows(diff: np.ndarray, m: np.ndarray) -> np.ndarray:
    q = np.einsum("ij,jk,ik->i", diff, m, diff)
    return np.sqrt(np.maximum(q, 0.0))


def dist_mle(beta_y, beta_z, omega) -> float:
    """sqrt((b_y - b_z)' Omega (b_y - b_z))."""
    omega = _check_pd(omega, "omega")
    d = np.atleast_1d(np.asarray(beta_y, float) - np.asarray(beta_z, float))
    return float(_quad_form_rows(d[None, :], omega)[0])


def dist_score(score_z, sigma) -> float:
    """sqrt(S' Sigma S); |S| sqrt(Sigma) in the scalar case."""
    sigma = _check_pd(sigma, "sigma")
    s = np.atleast_1d(np.asarray(score_z, float))
    return float(_quad_form_rows(s[None, :], sigma)[0])


def dist_euclid_weighted(s_z, s_obs, var_across_draws) -> np.ndarray | float:
    """Variance-weighted Euclidean distance; coordinates with zero variance are dropped."""
    s_z = np.asarray(s_z, float)
    var = np.asarray(var_across_draws, float)
    keep = var > 0
    if not keep.all():
        log.warning("dropping %d summary coordinate(s) with zero variance", int((~keep).sum()))
    d = (np.atleast_2d(s_z) - np.asarray(s_obs, float))[:, keep]
    out = np.sqrt(np.sum(d * d / var[keep], axis=1))
    return float(out[0]) if s_z.ndim == 1 else out


@dataclass
class FpFit:
    gamma: np.ndarray
    distances: np.ndarray
    ridge: bool


def fp_pipeline(phi_j, summaries, s_obs) -> FpFit:
    """Regress phi_j on (1, s) over the pool; distance |s_i'g - s_obs'g|.

    Non-finite rows are left out of the regression and get +inf distance.
    """
    phi_j = np.asarray(phi_j, float)
    S = np.atleast_2d(np.asarray(summaries, float))
    ok = np.isfinite(S).all(axis=1) & np.isfinite(phi_j)
    X = np.column_stack([np.ones(ok.sum()), S[ok]])
    if X.shape[0] <= X.shape[1]:
        raise ValueError("need more draws than regressors for the projection")
    # centre and scale columns so the rank check is meaningful
    scale = np.ones(X.shape[1])
    scale[1:] = np.maximum(np.std(X[:, 1:], axis=0), 1e-300)
    Xs = X / scale
    ridge = np.linalg.matrix_rank(Xs) < X.shape[1]
    if ridge:
        A = Xs.T @ Xs + FP_RIDGE * np.eye(X.shape[1])
        gamma_s = np.linalg.solve(A, Xs.T @ phi_j[ok])
        log.warning("rank-deficient projection design; ridge fallback used")
    else:
        gamma_s = np.linalg.lstsq(Xs, phi_j[ok], rcond=None)[0]
    gamma = gamma_s / scale
    dist = np.full(len(S), np.inf)
    dist[ok] = np.abs((S[ok] - np.asarray(s_obs, float)) @ gamma[1:])
    return FpFit(gamma=gamma, distances=dist, ridge=bool(ridge))


# ---------------------------------------------------------------- criteria

class Criterion:
    """Maps simulated returns to per-draw statistics and statistics to distances.

    ``fit_observed`` must be called first. ``distances`` returns an array of
    shape (N, m): m = 1 for joint criteria, one column per unknown
    coordinate for marginal ones.
    """

    name = "criterion"
    marginal = False

    def fit_observed(self, returns_obs: np.ndarray) -> None:
        raise NotImplementedError

    def statistics(self, returns_rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distances(self, stats: np.ndarray, phis: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ScoreCriterion(Criterion):
    """Auxiliary score of the simulated data at the observed-data MLE."""

    name = "score"

    def __init__(self, model: AuxModel, coords=None):
        self.model = model
        self.coords = None if coords is None else tuple(coords)
        self.fit = None

    def fit_observed(self, returns_obs):
        self.fit = fit_mle(self.model, self.model.observe(returns_obs))
        coords = self.coords if self.coords is not None else tuple(range(self.model.dim))
        self.coords = coords
        self.sigma = _check_pd(self.fit.weight[np.ix_(coords, coords)], "score weight")

    def statistics(self, returns_rows):
        return score_rows(self.model, self.model.observe(returns_rows), self.fit.beta_hat, self.coords)

    def distances(self, stats, phis):
        ok = np.isfinite(stats).all(axis=1)
        out = np.full(len(stats), np.inf)
        out[ok] = _quad_form_rows(stats[ok], self.sigma)
        return out[:, None]


class MleCriterion(Criterion):
    """Distance between auxiliary MLEs of simulated and observed data.

    With a single auxiliary coordinate the others stay at the observed-data
    MLE and only that coordinate is refitted; otherwise the full vector is
    refitted, warm-started from the observed-data MLE.
    """

    name = "mle"

    def __init__(self, model: AuxModel, coords=None):
        self.model = model
        self.coords = None if coords is None else tuple(coords)

    def _estimate(self, data) -> np.ndarray:
        if len(self.coords) == 1:
            j = self.coords[0]
            b, ok = fit_coordinate(self.model, data, self.beta_ref, j)
            return np.array([b if ok else np.nan])
        fit = fit_mle(self.model, data, start=self.beta_ref)
        if not np.isfinite(fit.loglik):
            return np.full(len(self.coords), np.nan)
        return fit.beta_hat[list(self.coords)]

    def fit_observed(self, returns_obs):
        data = self.model.observe(returns_obs)
        full = fit_mle(self.model, data)
        self.beta_ref = full.beta_hat
        self.coords = self.coords if self.coords is not None else tuple(range(self.model.dim))
        sub = full.weight[np.ix_(self.coords, self.coords)]
        self.omega = _check_pd(np.linalg.inv(sub), "mle weight")
        self.beta_y = self._estimate(data)

    def statistics(self, returns_rows):
        rows = self.model.observe(returns_rows)
        return np.vstack([self._estimate(r) for r in rows])

    def distances(self, stats, phis):
        ok = np.isfinite(stats).all(axis=1)
        out = np.full(len(stats), np.inf)
        out[ok] = _quad_form_rows(stats[ok] - self.beta_y, self.omega)
        return out[:, None]


class SummaryCriterion(Criterion):
    """Variance-weighted Euclidean distance between AR(1) summaries."""

    name = "ss"

    def __init__(self, transform=Transform.LOG_SQUARED):
        self.transform = Transform(transform)
        self.name = "ss" if self.transform is Transform.LOG_SQUARED else "ss_raw"

    def fit_observed(self, returns_obs):
        self.s_obs = ar1_summary_stats_batch(returns_obs, self.transform)[0]

    def statistics(self, returns_rows):
        return ar1_summary_stats_batch(returns_rows, self.transform)

    def distances(self, stats, phis):
        ok = np.isfinite(stats).all(axis=1)
        out = np.full(len(stats), np.inf)
        if ok.sum() >= 2:
            var = np.var(stats[ok], axis=0, ddof=1)
            out[ok] = dist_euclid_weighted(stats[ok], self.s_obs, var)
        return out[:, None]


class FpCriterion(Criterion):
    """Fearnhead-Prangle projection of the AR(1) summaries, one column per unknown."""

    marginal = True

    def __init__(self, unknown, transform=Transform.LOG_SQUARED):
        self.unknown = tuple(unknown)
        self.transform = Transform(transform)
        self.name = "fp" if self.transform is Transform.LOG_SQUARED else "fp_raw"

    def fit_observed(self, returns_obs):
        self.s_obs = ar1_summary_stats_batch(returns_obs, self.transform)[0]

    def statistics(self, returns_rows):
        return ar1_summary_stats_batch(returns_rows, self.transform)

    def distances(self, stats, phis):
        return np.column_stack([fp_pipeline(phis[:, j], stats, self.s_obs).distances
                                for j in self.unknown])


class IntegratedScoreCriterion(Criterion):
    """Integrated-likelihood score, one scalar criterion per auxiliary coordinate.

    ``prior_box`` = (lower, upper) of the auxiliary vector defines the uniform
    conditional prior; with a single coordinate the conditional prior is a
    point mass at the observed-data MLE of the others.
    """

    name = "int_score"
    marginal = True

    def __init__(self, model: AuxModel, coords, prior_box=None, n_nodes: int = 15):
        self.model = model
        self.coords = tuple(coords)
        self.prior_box = prior_box
        self.n_nodes = n_nodes

    def fit_observed(self, returns_obs):
        data = self.model.observe(returns_obs)
        full = fit_mle(self.model, data)
        if len(self.coords) == 1 or self.prior_box is None:
            self.priors = [PointMassPrior(full.beta_hat) for _ in self.coords]
        else:
            lo, hi = self.prior_box
            self.priors = [UniformSlicePrior(np.asarray(lo), np.asarray(hi), self.n_nodes)
                           for _ in self.coords]
        self.beta_hat = []
        for j, prior in zip(self.coords, self.priors):
            if isinstance(prior, PointMassPrior):
                b, _ = fit_coordinate(self.model, data, full.beta_hat, j)
            else:
                b, _ = fit_integrated(self.model, data, j, prior)
            self.beta_hat.append(b)

    def statistics(self, returns_rows):
        rows = self.model.observe(returns_rows)
        return np.column_stack([integrated_score_rows(self.model, rows, b, j, p)
                                for j, b, p in zip(self.coords, self.beta_hat, self.priors)])

    def distances(self, stats, phis):
        return np.where(np.isfinite(stats), np.abs(stats), np.inf)


# ---------------------------------------------------------------- runs

@dataclass(frozen=True)
class AbcDraw:
    phi: np.ndarray
    summary: np.ndarray
    distance: float
    stream_id: int


@dataclass
class RetainedSet:
    draws: tuple[AbcDraw, ...]
    epsilon: float
    n_total: int
    quantile: float
    column: int = 0

    @property
    def phis(self) -> np.ndarray:
        return np.vstack([d.phi for d in self.draws])

    @property
    def stream_ids(self) -> np.ndarray:
        return np.array([d.stream_id for d in self.draws], dtype=np.uint64)

    @property
    def distances(self) -> np.ndarray:
        return np.array([d.distance for d in self.draws])


@dataclass
class Pool:
    """Prior draws of one run with the statistics of every requested criterion."""

    phis: np.ndarray
    stream_ids: np.ndarray
    stats: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.phis)


def retained_count(n_total: int, quantile: float) -> int:
    # the small slack keeps e.g. 0.01 * 50000 at exactly 500
    return max(1, math.ceil(quantile * n_total - 1e-9))


def observed_returns(model_tag, phi, T: int, master_seed: int) -> np.ndarray:
    """The run's pseudo-observed series, on a stream disjoint from every chunk."""
    sim = SIMULATORS[ModelTag(model_tag)]
    r, _ = sim(np.asarray(phi, float)[None, :], T, RngStream(master_seed, OBSERVED_STREAM))
    return r[0]


def _simulate_chunk(prior: BoxPrior, model_tag, T, master_seed, chunk, size, criteria):
    g = RngStream(master_seed, chunk).generator()
    phis = prior.sample(g, size)
    returns, _ = SIMULATORS[ModelTag(model_tag)](phis, T, g)
    return phis, {name: c.statistics(returns) for name, c in criteria.items()}


def simulate_pool(prior: BoxPrior, model_tag, T: int, n_draws: int, master_seed: int,
                  criteria: dict[str, Criterion], threads: int | None = None,
                  chunk_size: int = CHUNK_SIZE) -> Pool:
    """Simulate ``n_draws`` prior draws and their statistics for every criterion."""
    if n_draws < 1:
        raise ValueError("need at least one draw")
    n_chunks = -(-n_draws // chunk_size)
    sizes = [min(chunk_size, n_draws - c * chunk_size) for c in range(n_chunks)]

    def work(c):
        return _simulate_chunk(prior, model_tag, T, master_seed, c, sizes[c], criteria)

    workers = min(resolve_threads(threads), n_chunks)
    if workers == 1:
        parts = [work(c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, range(n_chunks)))
    phis = np.vstack([p[0] for p in parts])
    stats = {name: np.vstack([p[1][name] for p in parts]) for name in criteria}
    return Pool(phis=phis, stream_ids=np.arange(n_draws, dtype=np.uint64), stats=stats)


def retain(pool: Pool, distances: np.ndarray, quantile: float, stats=None, column: int = 0) -> RetainedSet:
    """Keep the ceil(quantile * N) smallest distances; ties go to the lower stream id."""
    if not 0.0 < quantile <= 1.0:
        raise ValueError(f"quantile must lie in (0, 1], got {quantile}")
    distances = np.asarray(distances, float)
    finite = np.isfinite(distances)
    if not finite.any():
        raise AbcRunError(f"all {len(distances)} distances are infinite; simulator or auxiliary fit failing systematically")
    k = retained_count(pool.n, quantile)
    if finite.sum() < k:
        log.warning("only %d finite distances for %d retained draws", int(finite.sum()), k)
    order = np.lexsort((pool.stream_ids, distances))[:k]
    stats = np.zeros((pool.n, 0)) if stats is None else stats
    draws = tuple(AbcDraw(phi=pool.phis[i].copy(), summary=np.atleast_1d(stats[i]).copy(),
                          distance=float(distances[i]), stream_id=int(pool.stream_ids[i]))
                  for i in order)
    return RetainedSet(draws=draws, epsilon=float(distances[order[-1]]), n_total=pool.n,
                       quantile=quantile, column=column)


def retain_all(pool: Pool, criterion: Criterion, quantile: float) -> list[RetainedSet]:
    """Retained sets of a fitted criterion on a pool: one per distance column."""
    stats = pool.stats[criterion.name]
    d = criterion.distances(stats, pool.phis)
    return [retain(pool, d[:, k], quantile, stats, column=k) for k in range(d.shape[1])]


def run_abc(prior: BoxPrior, model_tag, criterion: Criterion, returns_obs, n_draws: int,
            quantile: float, master_seed: int, threads: int | None = None) -> list[RetainedSet]:
    """Single-criterion ABC run; returns one retained set per distance column."""
    if n_draws < 100:
        raise ValueError("run_abc needs N >= 100")
    if not 0.0 < quantile <= 0.1:
        raise ValueError("quantile must lie in (0, 0.1]")
    criterion.fit_observed(returns_obs)
    T = len(returns_obs)
    pool = simulate_pool(prior, model_tag, T, n_draws, master_seed, {criterion.name: criterion}, threads)
    return retain_all(pool, criterion, quantile)


def score_mle_agreement(run_a: RetainedSet, run_b: RetainedSet) -> float:
    """Jaccard overlap of the retained stream ids of two runs on the same pool."""
    if run_a.n_total != run_b.n_total or run_a.quantile != run_b.quantile:
        raise ValueError("runs differ in pool size or quantile")
    a, b = set(run_a.stream_ids.tolist()), set(run_b.stream_ids.tolist())
    return len(a & b) / len(a | b)


# ---------------------------------------------------------------- density

@dataclass
class KdeEstimate:
    grid: np.ndarray
    ordinates: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.ordinates, self.grid))


def silverman_bandwidth(values) -> float:
    v = np.asarray(values, float)
    sd = np.std(v, ddof=1)
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * len(v) ** (-0.2)


def kde(values, grid) -> KdeEstimate:
    """Gaussian kernel density with Silverman's rule-of-thumb bandwidth."""
    v = np.asarray(values, float)
    grid = np.asarray(grid, float)
    if len(v) < 50:
        raise ValueError(f"need at least 50 values for a density estimate, got {len(v)}")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    h = silverman_bandwidth(v)
    if not h > KDE_BANDWIDTH_FLOOR:
        # degenerate sample: all mass on the node nearest the common value
        dens = np.zeros_like(grid)
        k = int(np.argmin(np.abs(grid - np.median(v))))
        w = np.zeros_like(grid)
        w[k] = 1.0
        dens[k] = 1.0 / np.trapezoid(w, grid) if len(grid) > 1 else 1.0
        return KdeEstimate(grid=grid, ordinates=dens, bandwidth=KDE_BANDWIDTH_FLOOR)
    z = (grid[:, None] - v[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(v) * h * math.sqrt(2.0 * math.pi))
    return KdeEstimate(grid=grid, ordinates=dens, bandwidth=float(h))


# ---------------------------------------------------------------- output

def write_retained_csv(path, retained: RetainedSet) -> None:
    d = retained.phis.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stream_id"] + [f"phi{i + 1}" for i in range(d)] + ["distance"])
        for draw in retained.draws:
            w.writerow([draw.stream_id] + [repr(float(x)) for x in draw.phi] + [repr(draw.distance)])


def write_kde_csv(path, est: KdeEstimate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid", "density"])
        for g, p in zip(est.grid, est.ordinates):
            w.writerow([repr(float(g)), repr(float(p))])
