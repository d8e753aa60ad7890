import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinlmc.errors import ConfigError, InsufficientDataError
from kinlmc.kernels import ChainConfig, GaussianMoments, PhaseState, run_chain, stationary_moments
from kinlmc.metrics import (empirical_w2_gaussian_proxy, fit_exponent, strong_error, ulmc_affine, ulmc_exact_law,
                            ulmc_kl_plateau, ulmc_kl_trajectory, ulmc_stationary_law, weak_error)
from kinlmc.potentials import make_gaussian, make_zero


def test_exact_ulmc_law_matches_simulation(gauss4):
    init = stationary_moments(gauss4.hessian_matrix)
    cfg = ChainConfig(gamma=1.0, h=0.3, n_steps=30, n_replicas=40000, seed=3, record_every=30)
    res = run_chain(gauss4, init, cfg)
    law = ulmc_exact_law(gauss4.hessian_matrix, 1.0, 0.3, 30, init)
    np.testing.assert_allclose(np.diag(res.ensemble_cov[-1]), np.diag(law.cov), rtol=0.04)


def test_stationary_law_is_fixed_point():
    H = np.diag([0.5, 2.0])
    F, Q = ulmc_affine(H, 1.5, 0.2)
    law = ulmc_stationary_law(H, 1.5, 0.2)
    np.testing.assert_allclose(F @ law.cov @ F.T + Q, law.cov, atol=1e-12)


def test_bias_floor_is_quadratic_in_step(gauss4):
    kl = [ulmc_kl_plateau(gauss4.hessian_matrix, 1.0, h) for h in (0.1, 0.05, 0.025)]
    assert 3.5 < kl[0] / kl[1] < 4.5 and 3.5 < kl[1] / kl[2] < 4.5


def test_kl_trajectory_decreases_to_floor(gauss4):
    H = gauss4.hessian_matrix
    init = GaussianMoments(np.ones(8), np.eye(8))
    rows = ulmc_kl_trajectory(H, 1.0, 0.1, 2000, init, every=500)
    assert rows[0, 1] > rows[-1, 1]
    assert rows[-1, 1] == pytest.approx(ulmc_kl_plateau(H, 1.0, 0.1), rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 4.0), st.floats(-3, 3))
def test_fit_recovers_power_law(order, log_c):
    hs = 0.2 / 2.0 ** np.arange(5)
    fit = fit_exponent(hs, np.exp(log_c) * hs**order)
    assert fit.exponent == pytest.approx(order, abs=1e-9)
    assert not fit.poor


def test_fit_input_checks():
    with pytest.raises(InsufficientDataError):
        fit_exponent([0.1, 0.05, 0.025], [1.0, 0.5, 0.25])
    with pytest.raises(ConfigError):
        fit_exponent([0.1, 0.09, 0.05, 0.02], [1.0, 0.9, 0.5, 0.2])
    with pytest.raises(ConfigError):
        fit_exponent([0.2, 0.1, 0.05, 0.025], [1.0, 0.0, 0.5, 0.2])


def test_strong_order_of_ulmc(gauss4):
    hs = [0.2, 0.1, 0.05, 0.025]
    est = [strong_error("ulmc", gauss4, None, 1.0, h, 128, 2000, 11) for h in hs]
    assert 1.7 < fit_exponent(hs, [e.mom for e in est]).exponent < 2.3
    assert 2.6 < fit_exponent(hs, [e.pos for e in est]).exponent < 3.4


def test_weak_error_vanishes_without_force():
    pot = make_zero(3)
    init = lambda n, r: PhaseState(r.normal(size=(n, 3)), r.normal(size=(n, 3)))
    est = weak_error("rm-ulmc", pot, init, 1.0, 0.1, 64, 500, 32, 0)
    assert est.mom < 1e-12 and est.pos < 1e-12


def test_local_errors_are_seed_deterministic(gauss4):
    a = strong_error("rm-ulmc", gauss4, None, 1.0, 0.1, 64, 300, 5)
    b = strong_error("rm-ulmc", gauss4, None, 1.0, 0.1, 64, 300, 5)
    assert a == b


def test_w2_proxy_on_exact_samples(rng):
    target = GaussianMoments(np.zeros(2), np.diag([4.0, 1.0]))
    X = rng.multivariate_normal(target.mean, target.cov, size=20000)
    prox = empirical_w2_gaussian_proxy(X, target, n_boot=50, rng=1)
    assert prox.value < 0.05
    shifted = empirical_w2_gaussian_proxy(X + [1.0, 0.0], target, n_boot=50, rng=1)
    assert shifted.ci_low <= 1.0 <= shifted.ci_high or abs(shifted.value - 1.0) < 0.03


def test_w2_proxy_needs_enough_samples():
    target = GaussianMoments(np.zeros(3), np.eye(3))
    with pytest.raises(InsufficientDataError):
        empirical_w2_gaussian_proxy(np.zeros((20, 3)), target)
    with pytest.raises(ConfigError):
        empirical_w2_gaussian_proxy(np.zeros((200, 2)), target)
