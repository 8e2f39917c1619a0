"""Multi-run ABC experiments and their accuracy reports.

Run ``r`` uses seed ``master_seed + r`` for both the pseudo-observed series
and the prior draws. All criteria of a run share one simulated pool, so
their retained sets are directly comparable.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ssm_abc import abc_engine as abc
from ssm_abc.aux_models.models import AuxModel, make_aux_model
from ssm_abc.dgp import ModelTag, Transform, log_squared
from ssm_abc.exact_oracle import PosteriorGrid, SvSqPriorBox, exact_posterior
from ssm_abc.harness.config import ConfigError, ExperimentConfig, report_label
from ssm_abc.harness.metrics import interval_mass, rmse

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("criterion", "param", "T", "metric", "value", "n_runs")
RUN_COLUMNS = ("run", "criterion", "param", "T", "metric", "value")


@dataclass(frozen=True)
class RunValue:
    run: int
    criterion: str
    param: str
    T: int
    metric: str
    value: float


@dataclass
class AccuracyReport:
    per_run: list[RunValue]
    n_runs: int
    wall_time: float = 0.0
    rows: list[tuple] = field(init=False)

    def __post_init__(self):
        self.rows = summarize(self.per_run, self.n_runs)

    def value(self, criterion: str, param: str, T: int, metric: str) -> float:
        for row in self.rows:
            if row[:4] == (criterion, param, T, metric):
                return row[4]
        raise KeyError((criterion, param, T, metric))

    def run_values(self, criterion: str, param: str, T: int, metric: str) -> np.ndarray:
        vals = sorted((v.run, v.value) for v in self.per_run
                      if (v.criterion, v.param, v.T, v.metric) == (criterion, param, T, metric))
        return np.array([v for _, v in vals])

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(out / "report.csv", self.rows)
        with open(out / "runs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUN_COLUMNS)
            for v in sorted(self.per_run, key=lambda v: (v.T, v.criterion, v.param, v.metric, v.run)):
                w.writerow([v.run, v.criterion, v.param, v.T, v.metric, repr(float(v.value))])
        return out / "report.csv"


def summarize(per_run: list[RunValue], n_runs: int) -> list[tuple]:
    """Average per-run values by (criterion, param, T, metric); adds RMSE ratios.

    The ratio baseline is ``int_score`` when present, else ``score``.
    """
    groups: dict[tuple, list[float]] = {}
    for v in per_run:
        groups.setdefault((v.criterion, v.param, v.T, v.metric), []).append(v.value)
    rows = [(c, p, T, m, float(np.mean(vals)), len(vals))
            for (c, p, T, m), vals in groups.items()]
    crits = {r[0] for r in rows}
    base = "int_score" if "int_score" in crits else ("score" if "score" in crits else None)
    if base is not None:
        means = {(r[0], r[1], r[2]): r[4] for r in rows if r[3] == "rmse"}
        for (c, p, T), val in list(means.items()):
            ref = means.get((base, p, T))
            if ref is not None and ref > 0:
                rows.append((c, p, T, "rmse_ratio", val / ref, n_runs))
    rows.sort(key=lambda r: (r[2], r[1], r[3], r[0]))
    return rows


def write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for c, p, T, m, val, n in rows:
            w.writerow([c, p, T, m, repr(float(val)), n])


def read_report_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path} is not a report CSV")
        return [(d["criterion"], d["param"], int(d["T"]), d["metric"], float(d["value"]), int(d["n_runs"]))
                for d in r]


# ---------------------------------------------------------------- building blocks

def make_prior(cfg: ExperimentConfig) -> abc.BoxPrior:
    return abc.BoxPrior(lower=cfg.prior_lower, upper=cfg.prior_upper, fixed=cfg.true_phi,
                        free=tuple(sorted(cfg.unknown)),
                        restriction="cir" if cfg.model is ModelTag.SV_SQ else None)


def make_aux(cfg: ExperimentConfig) -> AuxModel:
    if cfg.aux_model == "aukf":
        return make_aux_model("aukf", cfg.noise_center)
    return make_aux_model(cfg.aux_model)


def _score_coords(cfg: ExperimentConfig, aux: AuxModel) -> tuple[int, ...]:
    if cfg.aux_coords is not None:
        return cfg.aux_coords
    if cfg.model is ModelTag.SV_SQ and len(cfg.unknown) == 1:
        # one unknown: the matching auxiliary coordinate (beta_j mirrors phi_j)
        return cfg.unknown
    return tuple(range(aux.dim))


def _marginal_coords(cfg: ExperimentConfig) -> tuple[int, ...]:
    if cfg.aux_coords is not None:
        if len(cfg.aux_coords) != len(cfg.unknown):
            raise ConfigError("int_score needs one auxiliary coordinate per unknown (aux.coords)")
        return cfg.aux_coords
    if cfg.model is not ModelTag.SV_SQ:
        raise ConfigError("int_score on this model needs an explicit aux.coords mapping")
    return cfg.unknown


def make_criteria(cfg: ExperimentConfig, aux: AuxModel) -> dict[str, abc.Criterion]:
    out: dict[str, abc.Criterion] = {}
    for name in cfg.criteria:
        if name == "score":
            out[name] = abc.ScoreCriterion(aux, _score_coords(cfg, aux))
        elif name == "mle":
            out[name] = abc.MleCriterion(aux, _score_coords(cfg, aux))
        elif name in ("ss", "ss_raw"):
            out[name] = abc.SummaryCriterion(Transform.LOG_SQUARED if name == "ss" else Transform.RAW)
        elif name in ("fp", "fp_raw"):
            out[name] = abc.FpCriterion(cfg.unknown, Transform.LOG_SQUARED if name == "fp" else Transform.RAW)
        elif name == "int_score":
            out[name] = abc.IntegratedScoreCriterion(aux, _marginal_coords(cfg),
                                                     prior_box=(aux.lower, aux.upper), n_nodes=cfg.int_nodes)
    return out


def reported_values(model: ModelTag, j: int, phis: np.ndarray) -> np.ndarray:
    v = phis[:, j]
    return 1.0 - v if report_label(model, j) == "one_minus_phi2" else v


def reported_posterior(model: ModelTag, post: PosteriorGrid) -> PosteriorGrid:
    if report_label(model, post.coordinate) != "one_minus_phi2":
        return post
    return PosteriorGrid(param_nodes=(1.0 - post.param_nodes)[::-1],
                         log_posterior=post.log_posterior[::-1],
                         normalized=post.normalized[::-1], coordinate=post.coordinate)


def posterior_quantiles(post: PosteriorGrid, probs) -> np.ndarray:
    x, p = post.param_nodes, post.normalized
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    return np.interp(probs, cdf, x)


def rmse_grid(values: np.ndarray, exact: PosteriorGrid, n_nodes: int) -> np.ndarray:
    """Equally spaced nodes over the retained range joined with the exact 0.001-0.999 range."""
    qlo, qhi = posterior_quantiles(exact, [0.001, 0.999])
    return np.linspace(min(values.min(), qlo), max(values.max(), qhi), n_nodes)


def mass_grid(values: np.ndarray, interval: tuple[float, float], n_nodes: int) -> np.ndarray:
    h = max(abc.silverman_bandwidth(values), abc.KDE_BANDWIDTH_FLOOR)
    lo = min(values.min() - 4.0 * h, interval[0])
    hi = max(values.max() + 4.0 * h, interval[1])
    return np.linspace(lo, hi, n_nodes)


def _retained_for(criterion: abc.Criterion, sets: list[abc.RetainedSet], k: int) -> abc.RetainedSet:
    return sets[k] if criterion.marginal else sets[0]


def run_single(cfg: ExperimentConfig, run: int, T: int, n_draws: int,
               threads: int | None = None, keep: dict | None = None) -> list[RunValue]:
    """One ABC run at sample size T for every configured criterion."""
    seed = cfg.master_seed + run
    y = abc.observed_returns(cfg.model, cfg.true_phi, T, seed)
    aux = make_aux(cfg)
    criteria = make_criteria(cfg, aux)
    for c in criteria.values():
        c.fit_observed(y)
    pool = abc.simulate_pool(make_prior(cfg), cfg.model, T, n_draws, seed, criteria, threads)
    q = cfg.quantile_for(n_draws)
    exact = {}
    if "rmse" in cfg.metrics:
        prior = SvSqPriorBox(phi1_max=cfg.prior_upper[0], phi3_max=cfg.prior_upper[2])
        for j in cfg.unknown:
            post = exact_posterior(log_squared(y), j, cfg.true_phi, prior, cfg.oracle_param_nodes,
                                   cfg.oracle_grid_nodes, threads=threads)
            exact[j] = reported_posterior(cfg.model, post)
    out = []
    for name, c in criteria.items():
        try:
            sets = abc.retain_all(pool, c, q)
        except abc.AbcRunError as exc:
            raise abc.AbcRunError(f"run {run} (T={T}, criterion {name}): {exc}") from None
        for k, j in enumerate(cfg.unknown):
            rs = _retained_for(c, sets, k)
            vals = reported_values(cfg.model, j, rs.phis)
            label = report_label(cfg.model, j)
            if keep is not None:
                keep[(run, T, name, label)] = rs
            if "rmse" in cfg.metrics:
                est = abc.kde(vals, rmse_grid(vals, exact[j], cfg.kde_nodes))
                out.append(RunValue(run, name, label, T, "rmse", rmse(est, exact[j])))
            if "interval_mass" in cfg.metrics:
                iv = cfg.intervals[label]
                est = abc.kde(vals, mass_grid(vals, iv, cfg.mass_kde_nodes))
                out.append(RunValue(run, name, label, T, "interval_mass", interval_mass(est, *iv)))
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> AccuracyReport:
    """Execute all runs for every sample size; optionally write report.csv and runs.csv."""
    t0 = time.perf_counter()
    values: list[RunValue] = []
    for T, N in zip(cfg.T, cfg.n_draws):
        for r in range(cfg.n_runs):
            log.info("T=%d run %d/%d (N=%d)", T, r + 1, cfg.n_runs, N)
            values.extend(run_single(cfg, r, T, N, threads))
    report = AccuracyReport(per_run=values, n_runs=cfg.n_runs, wall_time=time.perf_counter() - t0)
    if out_dir is not None:
        report.write(out_dir)
    return report
