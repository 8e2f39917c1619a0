import math

import numpy as np
import pytest
from scipy import stats

from ssm_abc.abc_engine import observed_returns
from ssm_abc.aux_models import (
    AukfModel,
    AuxModel,
    GarchModel,
    GarchTModel,
    PointMassPrior,
    UniformSlicePrior,
    aukf_loglik,
    covariance_from_hessian,
    fit_integrated,
    fit_mle,
    garch_loglik,
    garch_t_loglik,
    integrated_loglik,
    integrated_score,
    numeric_score,
    sigma_point_matrix,
)
from ssm_abc.aux_models.aukf import (
    LOG_CHISQ_NOISE_CENTER,
    SIGMA_WEIGHTS,
    affine_aukf_moments,
    aukf_moments,
    implied_stationary,
    state_noise_moments,
)
from ssm_abc.aux_models.estimation import fit_coordinate, score_steps
from ssm_abc.dgp import ModelTag, StableSvParams, log_squared
from ssm_abc.stochastic_kernels import LOG_CHISQ_VAR, RngStream, TruncNormalSpec, sample_trunc_normal

PHI = np.array([0.004, 0.1, 0.062])


class QuadModel(AuxModel):
    """Concave quadratic test likelihood with a known vertex; ignores the data values."""

    name = "quad"
    param_names = ("a", "b", "c")
    lower = np.array([-5.0, -5.0, -5.0])
    upper = np.array([5.0, 5.0, 5.0])
    vertex = np.array([0.3, -1.2, 2.0])
    curv = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]])

    def loglik(self, data, beta):
        d = np.asarray(beta) - self.vertex
        return -0.5 * len(data) * float(d @ self.curv @ d)

    def loglik_rows(self, data_rows, beta):
        return np.full(np.atleast_2d(data_rows).shape[0], self.loglik(data_rows[0], beta))

    def default_start(self, data):
        return np.zeros(3)


class SeparableModel(QuadModel):
    curv = np.diag([2.0, 1.0, 0.5])


def sv_sq_data(T=500, seed=0):
    return log_squared(observed_returns(ModelTag.SV_SQ, PHI, T, seed))


def garch_sim(beta, T, seed):
    g = RngStream(seed).generator()
    r = np.empty(T)
    x = beta[0] / (1 - beta[1] - beta[2])
    for t in range(T):
        r[t] = math.sqrt(x) * g.standard_normal()
        x = beta[0] + beta[1] * r[t] ** 2 + beta[2] * x
    return r


# --- AUKF ---

def hand_aukf_two_steps(y, beta):
    """Two AUKF steps with explicit 3 x 7 sigma-point matrices; returns the t = 2 log-density."""
    b1, b2, b3 = beta
    c = -b1 / b3
    lam = stats.norm.pdf(c) / stats.norm.sf(c)
    v_var = 1 - lam * (lam - c)
    w = np.array([0.0] + [1 / 6] * 6)
    s = math.sqrt(3)
    m = b1 / (1 - b2)
    p = b3**2 * m / (1 - b2**2)
    out = None
    for t in range(2):
        X = np.array([[m, m + s * math.sqrt(p), m, m, m - s * math.sqrt(p), m, m],
                      [lam, lam, lam + s * math.sqrt(v_var), lam, lam, max(lam - s * math.sqrt(v_var), c), lam]])
        xs = np.maximum(X[0], 1e-10)
        k = b1 + b2 * xs + b3 * np.sqrt(xs) * X[1]
        mp = w @ k
        pp = w @ (k - mp) ** 2
        se = s * math.sqrt(math.pi**2 / 2)
        g = LOG_CHISQ_NOISE_CENTER
        X2 = np.array([[mp, mp + s * math.sqrt(pp), mp, mp, mp - s * math.sqrt(pp), mp, mp],
                       [g, g, g, g + se, g, g, g - se]])
        x2 = np.maximum(X2[0], 1e-10)
        yy = np.log(x2) + X2[1]
        yp = w @ yy
        py = w @ (yy - yp) ** 2
        cxy = w @ ((x2 - mp) * (yy - yp))
        if t == 1:
            out = stats.norm.logpdf(y[1], yp, math.sqrt(py))
        gain = cxy / py
        m, p = mp + gain * (y[t] - yp), max(pp - gain**2 * py, 0.0)
    return out


def test_aukf_two_observation_hand_oracle():
    y = np.array([-7.5, -9.1])
    beta = (0.01, 0.5, 0.1)
    assert aukf_loglik(y, beta) == pytest.approx(hand_aukf_two_steps(y, beta), rel=1e-12, abs=1e-12)


def test_sigma_weights_and_centres():
    assert SIGMA_WEIGHTS[0] == 0.0 and np.allclose(SIGMA_WEIGHTS[1:], 1 / 6)
    assert SIGMA_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)
    lam, v_var, _ = state_noise_moments(0.01, 0.1)
    spm = sigma_point_matrix(0.04, 1e-4, lam, v_var, LOG_CHISQ_NOISE_CENTER, LOG_CHISQ_VAR)
    np.testing.assert_allclose(spm.weighted_mean(), [0.04, lam, -1.27], atol=1e-12)
    assert spm.points[1, 0] == lam and spm.points[2, 0] == -1.27
    # each row's weighted variance reproduces its input variance
    dev = spm.points - spm.points[:, :1]
    np.testing.assert_allclose((dev**2) @ spm.weights, [1e-4, v_var, LOG_CHISQ_VAR], rtol=1e-12)


def test_sigma_point_permutation_invariance():
    spm = sigma_point_matrix(0.04, 1e-4, 0.5, 0.7, -1.27, LOG_CHISQ_VAR)
    perm = np.array([0, 4, 6, 5, 1, 3, 2])
    P = spm.points[:, perm]
    np.testing.assert_allclose(P @ spm.weights, spm.weighted_mean(), atol=1e-12)


def exact_kalman(y, k, h, v, e, init):
    m, p = init
    ll, rows = 0.0, []
    for t, yt in enumerate(y):
        mp = k[0] + k[1] * m + k[2] * v[0]
        pp = k[1] ** 2 * p + k[2] ** 2 * v[1]
        yp = h[0] + h[1] * mp + e[0]
        py = h[1] ** 2 * pp + e[1]
        gain = h[1] * pp / py
        m, p = mp + gain * (yt - yp), pp - gain**2 * py
        if t > 0:
            ll += stats.norm.logpdf(yt, yp, math.sqrt(py))
        rows.append((mp, pp, yp, py, m, p))
    return ll, np.array(rows)


def test_aukf_affine_exactness():
    g = RngStream(1).generator()
    y = g.standard_normal(100)
    args = ((0.1, 0.8, 0.5), (0.2, 1.5), (0.3, 0.7), (-1.0, 2.0), (0.0, 1.0))
    ll, mom = affine_aukf_moments(y, *args)
    ll_k, mom_k = exact_kalman(y, *args)
    np.testing.assert_allclose(mom, mom_k, rtol=0, atol=1e-10)
    assert ll == pytest.approx(ll_k, abs=1e-10)


def test_aukf_moments_consistent_with_loglik():
    y = sv_sq_data(100)
    ll, mom = aukf_moments(y, (0.004, 0.9, 0.06))
    assert ll == pytest.approx(aukf_loglik(y, (0.004, 0.9, 0.06)), rel=1e-14)
    assert (mom[:, 3] > 0).all()
    assert implied_stationary(0.004, 0.9, 0.06)[0] == pytest.approx(0.04)


def test_aukf_noise_center_switch():
    y = sv_sq_data(100)
    a = AukfModel("appendix_c").loglik(y, (0.004, 0.9, 0.06))
    b = AukfModel("zero").loglik(y, (0.004, 0.9, 0.06))
    assert np.isfinite(a) and np.isfinite(b) and a != b
    with pytest.raises(ValueError):
        AukfModel("bogus")


def test_aukf_infeasible_is_nan():
    assert math.isnan(AukfModel().loglik(sv_sq_data(50), (0.001, 0.9, 0.08)))


# --- GARCH-t ---

def std_t_logpdf(e, nu):
    s = math.sqrt(nu / (nu - 2))
    return stats.t.logpdf(e * s, nu) + math.log(s)


def test_garch_t_constant_volatility():
    r = RngStream(2).generator().standard_t(5, 300) * 0.01
    beta = (0.012, 0.0, 0.0, 6.0)
    x = np.full(len(r), 0.012)
    x[0] = np.mean(np.abs(r))
    expected = np.sum(std_t_logpdf(r / x, 6.0) - np.log(x))
    assert garch_t_loglik(r, beta) == pytest.approx(expected, rel=1e-12)


def test_garch_t_gaussian_limit():
    r = RngStream(3).generator().standard_normal(400) * 0.01
    beta = (0.001, 0.05, 0.85, 200.0)
    x = np.empty(len(r))
    x[0] = np.mean(np.abs(r))
    for t in range(1, len(r)):
        x[t] = beta[0] + beta[1] * abs(r[t - 1]) + beta[2] * x[t - 1]
    gauss = np.sum(stats.norm.logpdf(r / x) - np.log(x))
    assert abs(garch_t_loglik(r, beta) - gauss) / len(r) < 1e-3


def test_garch_t_difference_self_consistency():
    r = RngStream(4).generator().standard_t(6, 200) * 0.01
    model = GarchTModel()
    beta = np.array([0.001, 0.1, 0.8, 7.0])
    d = 1e-6
    up, dn = beta.copy(), beta.copy()
    up[1] += d
    dn[1] -= d
    two_point = (garch_t_loglik(r, up) - garch_t_loglik(r, dn)) / (2 * d * len(r))
    assert numeric_score(model, r, beta)[1] == pytest.approx(two_point, rel=1e-4)


# --- GARCH ---

def test_garch_constant_variance():
    r = RngStream(5).generator().standard_normal(300) * 0.5
    x = np.full(len(r), 0.3)
    x[0] = np.mean(r**2)
    assert garch_loglik(r, (0.3, 0.0, 0.0)) == pytest.approx(np.sum(stats.norm.logpdf(r, 0, np.sqrt(x))), rel=1e-12)


def test_garch_hand_recursion():
    r = np.array([1.0, -1.0, 1.0])
    x = [1.0, 1.0 + 0.1 * 1.0 + 0.8 * 1.0]
    x.append(1.0 + 0.1 * 1.0 + 0.8 * x[1])
    assert x[1] == pytest.approx(1.9) and x[2] == pytest.approx(2.62)
    expected = sum(-0.5 * (math.log(2 * math.pi) + math.log(v) + 1.0 / v) for v in x)
    assert garch_loglik(r, (1.0, 0.1, 0.8)) == pytest.approx(expected, rel=1e-14)


def test_garch_mle_self_consistency():
    truth = np.array([0.05, 0.1, 0.85])
    r = garch_sim(truth, 10_000, 6)
    fit = fit_mle(GarchModel(), r)
    se = np.sqrt(np.diag(fit.weight))
    assert np.all(np.abs(fit.beta_hat - truth) < 3 * se)
    np.linalg.cholesky(fit.weight)


def richardson_derivative(f, x, i, h0, levels=10):
    """Richardson-extrapolated central difference (Neville table)."""
    D = np.empty((levels, levels))
    for a in range(levels):
        h = h0 / 2**a
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        D[a, 0] = (f(up) - f(dn)) / (2 * h)
        for b in range(1, a + 1):
            D[a, b] = D[a, b - 1] + (D[a, b - 1] - D[a - 1, b - 1]) / (4**b - 1)
    return D[levels - 1, levels - 1]


def test_garch_score_matches_richardson():
    r = garch_sim(np.array([0.05, 0.1, 0.85]), 1000, 7)
    beta = np.array([0.06, 0.12, 0.8])
    got = numeric_score(GarchModel(), r, beta)
    for i in range(3):
        ref = richardson_derivative(lambda b: garch_loglik(r, b) / len(r), beta, i, 0.01 * beta[i], levels=6)
        assert got[i] == pytest.approx(ref, rel=1e-5)


# --- estimation ---

def test_fit_quadratic_vertex():
    fit = fit_mle(QuadModel(), np.zeros(10))
    np.testing.assert_allclose(fit.beta_hat, QuadModel.vertex, atol=1e-6)
    assert fit.converged
    np.linalg.cholesky(fit.weight)


def test_quadratic_score_is_analytic():
    beta = np.array([1.0, 0.5, -0.3])
    analytic = -QuadModel.curv @ (beta - QuadModel.vertex)
    np.testing.assert_allclose(numeric_score(QuadModel(), np.zeros(7), beta), analytic, rtol=1e-8)


def test_one_sided_flag_at_boundary():
    g, flags = numeric_score(QuadModel(), np.zeros(7), np.array([5.0, 0.0, 0.0]), return_flags=True)
    assert flags.tolist() == [True, False, False]


def test_score_steps():
    np.testing.assert_allclose(score_steps([0.0, 2.0]), [1e-8, 2e-5])


def test_fit_deterministic():
    y = sv_sq_data(300, 1)
    a, b = fit_mle(AukfModel(), y), fit_mle(AukfModel(), y)
    assert np.array_equal(a.beta_hat, b.beta_hat) and a.loglik == b.loglik


def aukf_self_data(T=5000, seed=0):
    """Log-squared data simulated from the discretised auxiliary model itself."""
    b = np.array([0.0038, 0.905, 0.059])
    g = RngStream(seed).generator()
    v = sample_trunc_normal(TruncNormalSpec(-b[0] / b[2]), g, size=T)
    x, xs = b[0] / (1 - b[1]), np.empty(T)
    for t in range(T):
        x = b[0] + b[1] * x + b[2] * math.sqrt(x) * v[t]
        xs[t] = x
    return np.log(xs) + np.log(g.standard_normal(T) ** 2)


# datasets whose fitted MLE is interior (first-order conditions apply there)
@pytest.mark.parametrize("model, data", [
    (GarchModel(), lambda: observed_returns(ModelTag.SV_STABLE_VOL, [0.0, 0.9, 0.06, 1.8], 500, 0)),
    (GarchTModel(), lambda: observed_returns(ModelTag.STABLE_RETURN_SV, [0.0, 0.9, 0.36, 1.8], 500, 1)),
    (AukfModel(), lambda: np.exp(0.5 * aukf_self_data())),
])
def test_score_vanishes_at_interior_mle(model, data):
    y = model.observe(data())
    fit = fit_mle(model, y)
    assert fit.converged
    assert np.linalg.norm(numeric_score(model, y, fit.beta_hat)) < 1e-4


def test_covariance_ridge_repair():
    H = -np.array([[1.0, 1.0], [1.0, 1.0]])
    cov = covariance_from_hessian(H)
    np.linalg.cholesky(cov)
    assert np.array_equal(covariance_from_hessian(np.full((2, 2), np.nan)), np.eye(2))


def test_likelihoods_fall_along_rays():
    r = garch_sim(np.array([0.05, 0.1, 0.85]), 2000, 8)
    model = GarchModel()
    fit = fit_mle(model, r)
    rays = [np.array([1, 0, 0]), np.array([-0.5, 0, 0]), np.array([0, 1, -1]),
            np.array([0, -1, 0]), np.array([0, 0, -1])]
    for d in rays:
        pts = [fit.beta_hat + s * d * np.array([fit.beta_hat[0], 0.1, 0.1]) for s in np.linspace(0.5, 0.95, 6)]
        vals = [model.loglik(r, b) for b in pts if model.feasible(b)]
        assert len(vals) >= 3 and np.all(np.diff(vals) < 0)


# --- integrated likelihood ---

def test_integrated_separable():
    model = SeparableModel()
    prior = UniformSlicePrior(model.lower, model.upper)
    data = np.zeros(5)
    a = integrated_loglik(model, data, 0.0, 0, prior)
    b = integrated_loglik(model, data, 1.0, 0, prior)
    f = lambda v: -0.5 * 5 * 2.0 * (v - 0.3) ** 2
    assert b - a == pytest.approx(f(1.0) - f(0.0), rel=1e-12)


def test_integrated_point_mass_reduces_to_profile():
    y = sv_sq_data(300)
    model = AukfModel()
    beta = np.array([0.004, 0.9, 0.06])
    assert integrated_loglik(model, y, 0.9, 1, PointMassPrior(beta)) == pytest.approx(model.loglik(y, beta), rel=1e-14)
    s_int = integrated_score(model, y, 0.9, 1, PointMassPrior(beta))
    assert s_int == pytest.approx(numeric_score(model, y, beta)[1], rel=1e-10)


def test_integrated_node_refinement():
    y = sv_sq_data(500)
    model = AukfModel()
    lo, hi = np.array([1e-4, 0.0, 0.02]), np.array([0.01, 1.0, 0.1])
    a = integrated_loglik(model, y, 0.9, 1, UniformSlicePrior(lo, hi, 15))
    b = integrated_loglik(model, y, 0.9, 1, UniformSlicePrior(lo, hi, 30))
    assert abs(a - b) < 1e-3 * max(1.0, abs(a))


def test_integrated_score_zero_at_maximiser():
    y = sv_sq_data(500, 4)
    model = AukfModel()
    fit = fit_mle(model, y)
    prior = PointMassPrior(fit.beta_hat)
    b, _ = fit_integrated(model, y, 1, prior)
    assert abs(integrated_score(model, y, b, 1, prior)) < 1e-4


def test_integrated_score_sign_flip():
    y = sv_sq_data(500, 4)
    model = AukfModel()
    fit = fit_mle(model, y)
    b, _ = fit_coordinate(model, y, fit.beta_hat, 1)
    prior = PointMassPrior(fit.beta_hat)
    agree = 0
    for seed in range(10):
        hi_persist = log_squared(observed_returns(ModelTag.SV_SQ, [0.004, 0.02, 0.062], 500, 100 + seed))
        lo_persist = log_squared(observed_returns(ModelTag.SV_SQ, [0.004, 0.2, 0.062], 500, 200 + seed))
        agree += (integrated_score(model, hi_persist, b, 1, prior) > 0) and (integrated_score(model, lo_persist, b, 1, prior) < 0)
    assert agree >= 6
