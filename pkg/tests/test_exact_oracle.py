import math

import mpmath
import numpy as np
import pytest
from scipy import special, stats

from ssm_abc.abc_engine import observed_returns
from ssm_abc.dgp import ModelTag, SvSqParams, log_squared
from ssm_abc.exact_oracle import (
    FilterError,
    PosteriorGrid,
    StateGrid,
    SvSqPriorBox,
    cir_transition_density,
    exact_posterior,
    grid_filter,
    grid_filter_loglik,
    log_bessel_i,
    log_cir_transition_density,
    log_measurement_density,
    particle_filter_loglik,
    stationary_grid,
)
from ssm_abc.stochastic_kernels import DomainError, RngStream, cir_constants

PHI = SvSqParams(0.004, 0.1, 0.062)


def y_obs(T, seed=0, phi=PHI):
    return log_squared(observed_returns(ModelTag.SV_SQ, phi.as_array(), T, seed))


# --- Bessel and transition density ---

@pytest.mark.parametrize("q, z", [(1.08, 0.5), (1.08, 30.0), (0.3, 1e-6), (5.0, 800.0),
                                  (1e4, 50.0), (1e4, 2e4), (2.5, 1e5)])
def test_log_bessel_matches_arbitrary_precision(q, z):
    with mpmath.workdps(40):
        ref = float(mpmath.log(mpmath.besseli(q, z, maxterms=10**6)))
    assert float(log_bessel_i(q, z)) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_transition_density_normalises_on_default_grid():
    grid = stationary_grid(PHI)
    dens = cir_transition_density(grid.nodes, 0.04, PHI)
    total = float(grid.weights @ dens)
    assert 0.999 <= total <= 1.001
    mean = float(grid.weights @ (grid.nodes * dens)) / total
    identity = 0.04 * math.exp(-0.1) + 0.04 * (1 - math.exp(-0.1))
    assert f"{mean:.4g}" == f"{identity:.4g}"


def test_transition_density_non_negative_scan():
    x = np.linspace(1e-6, 0.3, 10_000)
    d = cir_transition_density(x, 0.04, PHI)
    assert np.all(d >= 0) and np.all(np.isfinite(d))
    assert cir_transition_density(50.0, 0.04, PHI) == 0.0


def test_log_density_matches_naive_form():
    g = RngStream(1).generator()
    c, q = cir_constants(PHI.phi1, PHI.phi2, PHI.phi3)
    for _ in range(200):
        x, xp = g.uniform(0.005, 0.12, 2)
        u, v = c * xp * math.exp(-PHI.phi2), c * x
        naive = c * math.exp(-u - v) * (v / u) ** (q / 2) * special.iv(q, 2 * math.sqrt(u * v))
        assert math.exp(log_cir_transition_density(x, xp, PHI)) == pytest.approx(naive, rel=1e-10)


def test_transition_density_matches_noncentral_chi2():
    # 2 c x ~ chi2(2q + 2, 2u)
    c, q = cir_constants(PHI.phi1, PHI.phi2, PHI.phi3)
    x = np.linspace(0.01, 0.1, 7)
    u = c * 0.03 * math.exp(-PHI.phi2)
    ref = 2 * c * stats.ncx2.pdf(2 * c * x, 2 * q + 2, 2 * u)
    np.testing.assert_allclose(cir_transition_density(x, 0.03, PHI), ref, rtol=1e-8)


def test_measurement_density_is_log_chi2():
    w = np.linspace(-8, 3, 50)
    ref = stats.chi2.logpdf(np.exp(w), 1) + w
    np.testing.assert_allclose(log_measurement_density(w, 0.0), ref, rtol=1e-12)


# --- grid filter ---

def test_grid_refinement_stability():
    y = y_obs(500)
    a = grid_filter_loglik(y, PHI, stationary_grid(PHI, 100))
    b = grid_filter_loglik(y, PHI, stationary_grid(PHI, 200))
    assert abs(a - b) < 0.1


def test_filtered_densities_normalised():
    grid = stationary_grid(PHI)
    _, filt = grid_filter(y_obs(200), PHI, grid, keep=True)
    np.testing.assert_allclose(filt @ grid.weights, 1.0, atol=1e-6)
    assert np.all(filt >= 0)


def test_grid_extension_into_empty_region():
    # the base grid already reaches a node where every density underflows to
    # zero; nodes appended beyond it lie in a region of zero mass
    y = y_obs(200)
    core = stationary_grid(PHI).nodes
    base_nodes = np.concatenate([core, core[-1] * np.array([40.0, 60.0])])
    base = grid_filter_loglik(y, PHI, StateGrid.from_nodes(base_nodes))
    ext = StateGrid.from_nodes(np.concatenate([base_nodes, core[-1] * np.array([80.0, 100.0, 150.0])]))
    assert abs(grid_filter_loglik(y, PHI, ext) - base) <= 1e-12 * abs(base)


def test_degenerate_state_reduces_to_iid():
    phi = SvSqParams(0.004, 0.1, 1e-4)
    y = y_obs(100, phi=phi)
    closed = float(np.sum(log_measurement_density(y, math.log(0.04))))
    assert grid_filter_loglik(y, phi) == pytest.approx(closed, abs=0.01)


def test_filter_mass_underflow_reports_time():
    y = y_obs(20)
    y[7] = 1e4
    with pytest.raises(FilterError) as info:
        grid_filter_loglik(y, PHI)
    assert info.value.t == 7


# --- particle filter ---

def test_particle_filter_replay_and_guard():
    y = y_obs(50)
    a = particle_filter_loglik(y, PHI, 2000, RngStream(3))
    assert a == particle_filter_loglik(y, PHI, 2000, RngStream(3))
    with pytest.raises(ValueError):
        particle_filter_loglik(y, PHI, 999, RngStream(3))


def test_particle_filter_collapse():
    y = y_obs(20)
    y[4] = 40.0
    with pytest.raises(FilterError) as info:
        particle_filter_loglik(y, PHI, 1000, RngStream(4))
    assert info.value.t == 4


@pytest.mark.slow
def test_particle_filter_variance_scaling():
    y = y_obs(100)
    v_small = np.var([particle_filter_loglik(y, PHI, 5_000, RngStream(10, s)) for s in range(20)], ddof=1)
    v_large = np.var([particle_filter_loglik(y, PHI, 50_000, RngStream(11, s)) for s in range(20)], ddof=1)
    assert 3.0 < v_small / v_large < 30.0


# --- posterior ---

def test_posterior_normalised():
    post = exact_posterior(y_obs(200), 1, PHI.as_array(), n_nodes=60, refine=True)
    assert post.integral() == pytest.approx(1.0, abs=1e-6)
    assert np.all(post.normalized >= 0)


class OneNodeBox(SvSqPriorBox):
    def feasible(self, phi):
        return super().feasible(phi) and abs(phi[1] - 0.5) < 1e-9


def test_single_feasible_node_is_point_mass():
    post = exact_posterior(y_obs(50), 1, [0.004, 0.5, 0.062], prior=OneNodeBox(), n_nodes=3)
    assert np.count_nonzero(post.normalized) == 1
    assert post.param_nodes[np.argmax(post.normalized)] == pytest.approx(0.5)
    assert post.integral() == pytest.approx(1.0)


class EmptyBox(SvSqPriorBox):
    def feasible(self, phi):
        return False


def test_all_infeasible_is_configuration_error():
    with pytest.raises(DomainError):
        exact_posterior(y_obs(50), 1, PHI.as_array(), prior=EmptyBox(), n_nodes=5)


@pytest.mark.slow
def test_posterior_mode_in_table_interval():
    hits = 0
    for seed in range(10):
        post = exact_posterior(y_obs(500, seed), 1, PHI.as_array(), n_nodes=200, refine=False)
        hits += 0.88 < 1 - post.param_nodes[np.argmax(post.normalized)] < 0.92
    assert hits >= 7
