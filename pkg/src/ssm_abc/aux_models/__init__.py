"""Auxiliary models used to build matching statistics for ABC."""

from ssm_abc.aux_models.aukf import aukf_loglik, aukf_loglik_rows, sigma_point_matrix
from ssm_abc.aux_models.estimation import (
    AuxFit,
    covariance_from_hessian,
    fit_coordinate,
    fit_mle,
    numeric_hessian,
    numeric_score,
    score_rows,
)
from ssm_abc.aux_models.garch import garch_loglik, garch_t_loglik
from ssm_abc.aux_models.integrated import (
    PointMassPrior,
    UniformSlicePrior,
    fit_integrated,
    integrated_loglik,
    integrated_score,
    integrated_score_rows,
)
from ssm_abc.aux_models.models import AukfModel, AuxModel, GarchModel, GarchTModel, make_aux_model

__all__ = [
    "AukfModel", "AuxFit", "AuxModel", "GarchModel", "GarchTModel", "PointMassPrior",
    "UniformSlicePrior", "aukf_loglik", "aukf_loglik_rows", "covariance_from_hessian",
    "fit_coordinate", "fit_integrated", "fit_mle", "garch_loglik", "garch_t_loglik",
    "integrated_loglik", "integrated_score", "integrated_score_rows", "make_aux_model",
    "numeric_hessian", "numeric_score", "score_rows", "sigma_point_matrix",
]
