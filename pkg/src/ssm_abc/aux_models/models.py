"""Auxiliary model handles: data mapping, parameter box, feasibility, likelihood."""

from __future__ import annotations

import math

import numpy as np

from ssm_abc.aux_models.aukf import aukf_loglik, aukf_loglik_rows, resolve_noise_center
from ssm_abc.aux_models.garch import (
    garch_loglik,
    garch_loglik_rows,
    garch_t_loglik,
    garch_t_loglik_rows,
)
from ssm_abc.dgp import log_squared

BETA_FLOOR = 1e-3


class AuxModel:
    """Base handle. Subclasses fill in the bounds and likelihood hooks."""

    name = "aux"
    param_names: tuple[str, ...] = ()
    lower = np.empty(0)
    upper = np.empty(0)

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def observe(self, returns) -> np.ndarray:
        """Map raw returns onto the series the likelihood is defined for."""
        return np.asarray(returns, dtype=float)

    def feasible(self, beta) -> bool:
        beta = np.asarray(beta, dtype=float)
        return bool(np.all(beta >= self.lower) and np.all(beta <= self.upper) and self._extra(beta))

    def feasible_rows(self, betas) -> np.ndarray:
        betas = np.atleast_2d(np.asarray(betas, dtype=float))
        inside = np.all((betas >= self.lower) & (betas <= self.upper), axis=1)
        return inside & self._extra_rows(betas)

    def _extra(self, beta) -> bool:
        return True

    def _extra_rows(self, betas) -> np.ndarray:
        return np.array([self._extra(b) for b in betas], dtype=bool)

    def loglik(self, data, beta) -> float:
        raise NotImplementedError

    def loglik_rows(self, data_rows, beta) -> np.ndarray:
        raise NotImplementedError

    def default_start(self, data) -> np.ndarray:
        raise NotImplementedError

    def default_starts(self, data) -> list[np.ndarray]:
        """Starting points tried by ``fit_mle`` when none is given."""
        return [self.default_start(data)]

    def raw_loglik(self, data, beta) -> float:
        """Likelihood without the extra (non-box) restrictions, for difference stencils."""
        return self.loglik(data, beta)

    def __repr__(self):
        return f"{type(self).__name__}()"


class AukfModel(AuxModel):
    """Discretised square-root volatility model, likelihood via the AUKF."""

    name = "aukf"
    param_names = ("beta1", "beta2", "beta3")
    lower = np.array([1e-6, BETA_FLOOR, 1e-4])
    upper = np.array([1.0, 1.0 - BETA_FLOOR, 1.0])

    def __init__(self, noise_center="appendix_c"):
        self.noise_center = noise_center
        self._center = resolve_noise_center(noise_center)

    def observe(self, returns) -> np.ndarray:
        return log_squared(returns)

    def _extra(self, beta) -> bool:
        return 2.0 * beta[0] >= beta[2] ** 2

    def _extra_rows(self, betas) -> np.ndarray:
        return 2.0 * betas[:, 0] >= betas[:, 2] ** 2

    def loglik(self, data, beta) -> float:
        if not self.feasible(beta):
            return math.nan
        return aukf_loglik(data, beta, self._center)

    def loglik_rows(self, data_rows, beta) -> np.ndarray:
        if not self.feasible(beta):
            return np.full(np.atleast_2d(data_rows).shape[0], np.nan)
        return aukf_loglik_rows(data_rows, beta, self._center)

    def default_start(self, data) -> np.ndarray:
        m = math.exp(float(np.mean(data)) - self._center)
        b2 = 0.9
        b1 = min(max(m * (1.0 - b2), 2e-6), 0.5)
        b3 = min(0.5 * math.sqrt(2.0 * b1), 0.9)
        return np.array([b1, b2, b3])

    def default_starts(self, data) -> list[np.ndarray]:
        # the likelihood is multimodal in beta2; spread the starts over persistence levels
        m = math.exp(float(np.mean(data)) - self._center)
        out = []
        for b2 in (0.5, 0.9, 0.98):
            b1 = min(max(m * (1.0 - b2), 2e-6), 0.5)
            out.append(np.array([b1, b2, min(0.5 * math.sqrt(2.0 * b1), 0.9)]))
        return out

    def raw_loglik(self, data, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        if not (beta[0] > 0 and beta[2] > 0 and 0 < beta[1] < 1):
            return math.nan
        return aukf_loglik(data, beta, self._center)

    def __repr__(self):
        return f"AukfModel(noise_center={self.noise_center!r})"


class GarchTModel(AuxModel):
    """GARCH(1,1) on the conditional standard deviation with standardized t errors."""

    name = "garch_t"
    param_names = ("beta1", "beta2", "beta3", "beta4")
    lower = np.array([1e-10, 0.0, 0.0, 2.05])
    upper = np.array([1e3, 1.0, 1.0, 200.0])

    def _extra(self, beta) -> bool:
        return beta[1] + beta[2] < 1.0

    def _extra_rows(self, betas) -> np.ndarray:
        return betas[:, 1] + betas[:, 2] < 1.0

    def loglik(self, data, beta) -> float:
        if not self.feasible(beta):
            return math.nan
        return garch_t_loglik(data, beta)

    def loglik_rows(self, data_rows, beta) -> np.ndarray:
        if not self.feasible(beta):
            return np.full(np.atleast_2d(data_rows).shape[0], np.nan)
        return garch_t_loglik_rows(data_rows, beta)

    def raw_loglik(self, data, beta) -> float:
        # the recursion stays defined past beta2 + beta3 = 1
        return garch_t_loglik(data, beta)

    def default_start(self, data) -> np.ndarray:
        mad = float(np.mean(np.abs(data)))
        return np.array([0.05 * mad, 0.1, 0.85, 8.0])


class GarchModel(AuxModel):
    """Conventional Gaussian GARCH(1,1) on the conditional variance."""

    name = "garch"
    param_names = ("beta1", "beta2", "beta3")
    lower = np.array([1e-12, 0.0, 0.0])
    upper = np.array([1e4, 1.0, 1.0])

    def _extra(self, beta) -> bool:
        return beta[1] + beta[2] < 1.0

    def _extra_rows(self, betas) -> np.ndarray:
        return betas[:, 1] + betas[:, 2] < 1.0

    def loglik(self, data, beta) -> float:
        if not self.feasible(beta):
            return math.nan
        return garch_loglik(data, beta)

    def loglik_rows(self, data_rows, beta) -> np.ndarray:
        if not self.feasible(beta):
            return np.full(np.atleast_2d(data_rows).shape[0], np.nan)
        return garch_loglik_rows(data_rows, beta)

    def raw_loglik(self, data, beta) -> float:
        return garch_loglik(data, beta)

    def default_start(self, data) -> np.ndarray:
        var = float(np.mean(np.square(data)))
        return np.array([0.05 * var, 0.1, 0.85])


def make_aux_model(name: str, noise_center="appendix_c") -> AuxModel:
    if name == "aukf":
        return AukfModel(noise_center)
    if name == "garch_t":
        return GarchTModel()
    if name == "garch":
        return GarchModel()
    raise ValueError(f"unknown auxiliary model {name!r}")
