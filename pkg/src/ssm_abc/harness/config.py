"""Experiment configuration from flat ``key = value`` files.

Keys may carry a dotted section prefix (``abc.quantile = 0.01``); ``#``
starts a comment. Comma-separated values become lists. A ``profile`` key
selects budget defaults (``desk`` or ``paper``) that explicit keys override.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from ssm_abc.dgp import ModelTag, StableSvParams, SvSqParams

PARAM_NAMES = ("phi1", "phi2", "phi3", "phi4")
CRITERIA = ("score", "mle", "ss", "fp", "ss_raw", "fp_raw", "int_score")
METRICS = ("rmse", "interval_mass")

PROFILES = {
    "desk": {"abc.n_draws": 10_000, "runs.n_runs": 10},
    "paper": {"abc.n_draws": 50_000, "runs.n_runs": 50},
}

DEFAULT_AUX = {
    ModelTag.SV_SQ: "aukf",
    ModelTag.STABLE_RETURN_SV: "garch_t",
    ModelTag.SV_STABLE_VOL: "garch",
}

# uniform prior boxes; fixed coordinates ignore their entries
DEFAULT_PRIOR = {
    ModelTag.SV_SQ: ((0.0, 0.0, 0.0), (0.025, 1.0, 0.089)),
    ModelTag.STABLE_RETURN_SV: ((0.0, 0.0, 0.0, 1.2), (0.0, 1.0, 1.0, 2.0)),
    ModelTag.SV_STABLE_VOL: ((0.0, 0.0, 0.0, 1.2), (0.0, 1.0, 0.3, 2.0)),
}


class ConfigError(ValueError):
    """Invalid or missing configuration."""


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str, source: str = "<string>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key] = parse_value(value)
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def _as_list(v) -> list:
    return v if isinstance(v, list) else [v]


def param_index(name: str) -> int:
    try:
        return PARAM_NAMES.index(name)
    except ValueError:
        raise ConfigError(f"unknown parameter {name!r}; expected one of {PARAM_NAMES}") from None


def report_label(model: ModelTag, j: int) -> str:
    """Label of the reported quantity: SV-SQ persistence is reported as 1 - phi2."""
    if model is ModelTag.SV_SQ and j == 1:
        return "one_minus_phi2"
    return PARAM_NAMES[j]


@dataclass
class ExperimentConfig:
    model: ModelTag
    true_phi: tuple[float, ...]
    T: list[int]
    n_draws: list[int]
    criteria: list[str]
    unknown: tuple[int, ...]
    n_runs: int
    master_seed: int = 0
    quantile: float | None = None
    n_retained: int | None = None
    metrics: list[str] = field(default_factory=lambda: ["rmse"])
    aux_model: str = ""
    aux_coords: tuple[int, ...] | None = None
    noise_center: str | float = "appendix_c"
    prior_lower: tuple[float, ...] = ()
    prior_upper: tuple[float, ...] = ()
    intervals: dict[str, tuple[float, float]] = field(default_factory=dict)
    oracle_grid_nodes: int = 100
    oracle_param_nodes: int = 200
    kde_nodes: int = 200
    mass_kde_nodes: int = 1000
    int_nodes: int = 15
    profile: str = "desk"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.T) != len(self.n_draws):
            raise ConfigError("abc.n_draws must give one value per sample size T (or a single value)")
        for c in self.criteria:
            if c not in CRITERIA:
                raise ConfigError(f"unknown criterion {c!r}; expected one of {CRITERIA}")
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown metric {m!r}; expected one of {METRICS}")
        if (self.quantile is None) == (self.n_retained is None):
            raise ConfigError("set exactly one of abc.quantile and abc.n_retained")
        for T, N in zip(self.T, self.n_draws):
            if T < 3:
                raise ConfigError(f"T must be at least 3, got {T}")
            if self.retained(N) < 50:
                raise ConfigError(f"quantile * N must be at least 50 (N={N})")
            if self.quantile_for(N) > 0.1:
                raise ConfigError(f"retention fraction above 0.1 for N={N}")
        if self.n_runs < 1:
            raise ConfigError("runs.n_runs must be positive")
        try:
            (SvSqParams if self.model is ModelTag.SV_SQ else StableSvParams)(*self.true_phi)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid true parameters {self.true_phi}: {exc}") from None
        if "rmse" in self.metrics and (self.model is not ModelTag.SV_SQ or len(self.unknown) != 1):
            raise ConfigError("rmse needs the exact posterior: SV-SQ model with a single unknown")
        if "interval_mass" in self.metrics:
            for j in self.unknown:
                if report_label(self.model, j) not in self.intervals:
                    raise ConfigError(f"interval_mass needs interval.{report_label(self.model, j)}")

    def quantile_for(self, n_draws: int) -> float:
        return self.quantile if self.quantile is not None else self.n_retained / n_draws

    def retained(self, n_draws: int) -> int:
        return math.ceil(self.quantile_for(n_draws) * n_draws - 1e-9)


def build_config(values: dict, seed: int | None = None) -> ExperimentConfig:
    """ExperimentConfig from parsed key/values; ``seed`` overrides ``runs.master_seed``."""
    profile = str(values.get("profile", "desk"))
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    v = {**PROFILES[profile], **values}
    try:
        model = ModelTag(v.get("model", "sv_sq"))
    except ValueError:
        raise ConfigError(f"unknown model {v.get('model')!r}") from None
    if "true_phi" not in v:
        raise ConfigError("missing key true_phi")
    true_phi = tuple(float(x) for x in _as_list(v["true_phi"]))
    T = [int(x) for x in _as_list(v.get("T", 500))]
    n_draws = [int(x) for x in _as_list(v["abc.n_draws"])]
    if len(n_draws) == 1:
        n_draws = n_draws * len(T)
    unknown = tuple(param_index(str(x)) for x in _as_list(v.get("abc.unknown", "phi2")))
    for j in unknown:
        if j >= len(true_phi):
            raise ConfigError(f"unknown coordinate {PARAM_NAMES[j]} beyond the parameter vector")
    lower, upper = DEFAULT_PRIOR[model]
    lower = tuple(float(x) for x in _as_list(v.get("prior.lower", list(lower))))
    upper = tuple(float(x) for x in _as_list(v.get("prior.upper", list(upper))))
    if not len(lower) == len(upper) == len(true_phi):
        raise ConfigError("prior.lower / prior.upper must match the parameter dimension")
    intervals = {}
    for key, val in v.items():
        if key.startswith("interval."):
            pair = _as_list(val)
            if len(pair) != 2 or not float(pair[0]) < float(pair[1]):
                raise ConfigError(f"{key} must be 'lo, hi' with lo < hi")
            intervals[key.split(".", 1)[1]] = (float(pair[0]), float(pair[1]))
    coords = v.get("aux.coords")
    quantile = v.get("abc.quantile")
    n_retained = v.get("abc.n_retained")
    try:
        return ExperimentConfig(
            model=model,
            true_phi=true_phi,
            T=T,
            n_draws=n_draws,
            criteria=[str(c) for c in _as_list(v.get("abc.criteria", "score"))],
            unknown=unknown,
            n_runs=int(v["runs.n_runs"]),
            master_seed=int(seed if seed is not None else v.get("runs.master_seed", 0)),
            quantile=None if quantile is None else float(quantile),
            n_retained=None if n_retained is None else int(n_retained),
            metrics=[str(m) for m in _as_list(v.get("metrics", "rmse"))],
            aux_model=str(v.get("aux.model", DEFAULT_AUX[model])),
            aux_coords=None if coords is None else tuple(int(c) for c in _as_list(coords)),
            noise_center=v.get("aukf.noise_center", "appendix_c"),
            prior_lower=lower,
            prior_upper=upper,
            intervals=intervals,
            oracle_grid_nodes=int(v.get("oracle.grid_nodes", 100)),
            oracle_param_nodes=int(v.get("oracle.param_nodes", 200)),
            kde_nodes=int(v.get("kde.nodes", 200)),
            mass_kde_nodes=int(v.get("kde.mass_nodes", 1000)),
            int_nodes=int(v.get("int.nodes", 15)),
            profile=profile,
        )
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    return build_config(load_config_file(path), seed)
