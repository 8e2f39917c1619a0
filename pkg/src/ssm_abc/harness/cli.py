"""Command-line interface: ``ssm-abc <subcommand> [--config F] [--seed S] [--out D] [--threads N]``.

Exit status: 0 on success, 1 on configuration or usage errors, 2 on
numerical failures (filter breakdown, no finite ABC distance).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ssm_abc import abc_engine as abc
from ssm_abc.aux_models.estimation import fit_mle
from ssm_abc.dgp import SIMULATORS, ModelTag, log_squared
from ssm_abc.exact_oracle import FilterError, SvSqPriorBox, exact_posterior
from ssm_abc.harness.config import ConfigError, ExperimentConfig, load_config, report_label
from ssm_abc.harness.experiment import (
    make_aux,
    read_report_csv,
    reported_posterior,
    reported_values,
    run_experiment,
    run_single,
)
from ssm_abc.stochastic_kernels import DomainError, RngStream

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("ssm_abc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment config file (key = value)")
    p.add_argument("--seed", type=int, default=None, help="master seed, overrides runs.master_seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $SSM_ABC_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssm-abc", description="Auxiliary-likelihood ABC for stochastic volatility models")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate the pseudo-observed series of run 0")
    _common(p)
    p = sub.add_parser("fit-aux", help="fit the auxiliary model to observed data")
    _common(p)
    p.add_argument("--data", help="CSV with a 'return' column; default: simulated run-0 series")
    p = sub.add_parser("abc-run", help="one ABC run, writing retained draws and densities")
    _common(p)
    p = sub.add_parser("oracle-posterior", help="exact grid posterior of each unknown (SV-SQ)")
    _common(p)
    p = sub.add_parser("experiment", help="multi-run experiment, writing report.csv")
    _common(p)
    p = sub.add_parser("report", help="print a report.csv as a table")
    p.add_argument("path", nargs="?", default="report.csv", help="report CSV or a directory holding one")
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    return abc.resolve_threads(args.threads)


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    T = cfg.T[0]
    r, x = SIMULATORS[cfg.model](np.asarray(cfg.true_phi)[None, :], T,
                                 RngStream(cfg.master_seed, abc.OBSERVED_STREAM))
    with open(out / "simulated.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "return", "state"])
        for t in range(T):
            w.writerow([t + 1, repr(float(r[0, t])), repr(float(x[0, t]))])
    print(out / "simulated.csv")
    return EXIT_OK


def _read_returns(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "return" not in rows[0]:
        raise ConfigError(f"{path} needs a 'return' column")
    return np.array([float(row["return"]) for row in rows])


def cmd_fit_aux(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    if args.data:
        y = _read_returns(args.data)
    else:
        y = abc.observed_returns(cfg.model, cfg.true_phi, cfg.T[0], cfg.master_seed)
    aux = make_aux(cfg)
    fit = fit_mle(aux, aux.observe(y))
    header = ["model"] + list(aux.param_names) + ["loglik", "converged", "evals"]
    row = [aux.name] + [repr(float(b)) for b in fit.beta_hat] + [repr(fit.loglik), str(fit.converged).lower(), fit.evaluations]
    with open(out / "fit_aux.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(row)
    print(",".join(header))
    print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_abc_run(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    keep: dict = {}
    values = run_single(cfg, 0, cfg.T[0], cfg.n_draws[0], _threads(args), keep=keep)
    for (run, T, name, label), rs in sorted(keep.items()):
        abc.write_retained_csv(out / f"retained_{name}_{label}.csv", rs)
        j = next(j for j in cfg.unknown if report_label(cfg.model, j) == label)
        vals = reported_values(cfg.model, j, rs.phis)
        h = max(abc.silverman_bandwidth(vals), abc.KDE_BANDWIDTH_FLOOR)
        grid = np.linspace(vals.min() - 4 * h, vals.max() + 4 * h, cfg.kde_nodes)
        abc.write_kde_csv(out / f"kde_{name}_{label}.csv", abc.kde(vals, grid))
    for v in values:
        print(f"{v.criterion},{v.param},{v.T},{v.metric},{v.value!r}")
    return EXIT_OK


def cmd_oracle(args, cfg: ExperimentConfig) -> int:
    if cfg.model is not ModelTag.SV_SQ:
        raise ConfigError("the exact posterior is available for the sv_sq model only")
    out = _out_dir(args)
    y = log_squared(abc.observed_returns(cfg.model, cfg.true_phi, cfg.T[0], cfg.master_seed))
    prior = SvSqPriorBox(phi1_max=cfg.prior_upper[0], phi3_max=cfg.prior_upper[2])
    for j in cfg.unknown:
        post = reported_posterior(cfg.model, exact_posterior(
            y, j, cfg.true_phi, prior, cfg.oracle_param_nodes, cfg.oracle_grid_nodes, threads=_threads(args)))
        path = out / f"posterior_{report_label(cfg.model, j)}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param_value", "log_posterior", "density"])
            for x, lp, d in zip(post.param_nodes, post.log_posterior, post.normalized):
                w.writerow([repr(float(x)), repr(float(lp)), repr(float(d))])
        print(path)
    return EXIT_OK


def cmd_experiment(args, cfg: ExperimentConfig) -> int:
    report = run_experiment(cfg, _out_dir(args), threads=_threads(args))
    log.info("wall time %.1f s", report.wall_time)
    print(Path(args.out) / "report.csv")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.csv"
    if not path.is_file():
        raise ConfigError(f"report not found: {path}")
    try:
        rows = read_report_csv(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    width = max([len(r[0]) for r in rows] + [9])
    for T in sorted({r[2] for r in rows}):
        for metric in sorted({r[3] for r in rows if r[2] == T}):
            sel = [r for r in rows if r[2] == T and r[3] == metric]
            params = sorted({r[1] for r in sel})
            print(f"T={T}  {metric}")
            print(" " * width + "".join(f"{p:>16}" for p in params))
            for crit in sorted({r[0] for r in sel}):
                vals = {r[1]: r[4] for r in sel if r[0] == crit}
                cells = "".join(f"{vals[p]:>16.4f}" if p in vals else f"{'-':>16}" for p in params)
                print(f"{crit:<{width}}" + cells)
            print()
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-aux": cmd_fit_aux,
    "abc-run": cmd_abc_run,
    "oracle-posterior": cmd_oracle,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DomainError) as exc:
        print(f"ssm-abc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (abc.AbcRunError, FilterError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"ssm-abc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
