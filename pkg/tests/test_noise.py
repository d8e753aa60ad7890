import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from kinlmc.errors import ArgumentOrderError, ConfigError
from kinlmc.noise import (build_noise_cov, cov_xi1_xi1, cov_xi1_xi2, draw_joint_noise, draw_midpoint_noise,
                          noise_cov_matrix, var_xi1, var_xi2)

gammas = st.floats(0.05, 20.0)
fracs = st.floats(0.0, 1.0)
# quad loses relative accuracy on subnormal-scale integrands
quad_fracs = st.one_of(st.just(0.0), st.floats(1e-3, 1.0))


def quad_cov_xi1(gamma, s, t):
    f = lambda r: (1 - np.exp(-gamma * (s - r))) * (1 - np.exp(-gamma * (t - r)))
    return 2 / gamma * integrate.quad(f, 0, s, epsabs=0, epsrel=1e-12)[0]


def quad_cov_xi12(gamma, t, h):
    f = lambda r: (1 - np.exp(-gamma * (t - r))) * np.exp(-gamma * (h - r))
    return 2 * integrate.quad(f, 0, t, epsabs=0, epsrel=1e-12)[0]


@settings(max_examples=60, deadline=None)
@given(gammas, st.floats(0.01, 5.0), quad_fracs, quad_fracs)
def test_xi1_covariance_matches_quadrature(gamma, h, a, b):
    s, t = sorted((a * h, b * h))
    expect = quad_cov_xi1(gamma, s, t)
    assert cov_xi1_xi1(gamma, s, t) == pytest.approx(expect, rel=1e-9, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(gammas, st.floats(0.01, 5.0), quad_fracs)
def test_cross_covariance_matches_quadrature(gamma, h, a):
    t = a * h
    assert cov_xi1_xi2(gamma, t, h) == pytest.approx(quad_cov_xi12(gamma, t, h), rel=1e-9, abs=1e-300)


def test_variances_of_endpoint():
    assert var_xi2(2.0, 0.3) == pytest.approx(1 - np.exp(-1.2), rel=1e-14)
    assert var_xi1(2.0, 0.3) == pytest.approx(quad_cov_xi1(2.0, 0.3, 0.3), rel=1e-12)


@pytest.mark.parametrize("gamma", [1e-4, 1e-3])
def test_small_friction_limit_is_integrated_brownian_motion(gamma):
    s, t, h = 0.3, 0.8, 1.0
    # xi1 / sqrt(2 gamma) tends to the time integral of B, xi2 to sqrt(2 gamma) B
    ibm = s * s * (3 * t - s) / 6
    assert cov_xi1_xi1(gamma, s, t) / (2 * gamma) == pytest.approx(ibm, rel=5 * gamma)
    assert cov_xi1_xi2(gamma, t, h) / (2 * gamma) == pytest.approx(t * t / 2, rel=5 * gamma)


def test_tiny_arguments_do_not_cancel():
    # leading order for gamma t << 1 is (2 gamma / 3) t^3
    v = var_xi1(1e-3, 1e-6)
    assert v == pytest.approx(2e-3 / 3 * 1e-18, rel=1e-6)


def test_argument_order_is_checked():
    with pytest.raises(ArgumentOrderError):
        cov_xi1_xi1(1.0, 0.5, 0.2)
    with pytest.raises(ArgumentOrderError):
        cov_xi1_xi2(1.0, 0.5, 0.2)
    with pytest.raises(ConfigError):
        noise_cov_matrix(1.0, 0.5, 0.6, 0.1)
    with pytest.raises(ConfigError):
        noise_cov_matrix(0.0, 0.5, 0.1, 0.2)


@settings(max_examples=40, deadline=None)
@given(gammas, st.floats(1e-3, 3.0), fracs, fracs)
def test_joint_covariance_is_psd(gamma, h, a, b):
    C = noise_cov_matrix(gamma, h, a * h, b * h)
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C)[0] >= -1e-12 * np.trace(C)


def test_joint_draws_reproduce_covariance(rng):
    nc = build_noise_cov(1.5, 0.8, 0.2, 0.6)
    d = draw_joint_noise(nc, 200000, rng)
    Z = np.stack([d.xi1_t1, d.xi1_t2, d.xi1_h, d.xi2_h])
    emp = np.cov(Z)
    se = np.sqrt((nc.cov**2 + np.outer(np.diag(nc.cov), np.diag(nc.cov))) / Z.shape[1])
    assert np.all(np.abs(emp - nc.cov) < 5 * se)


def test_batched_draws_use_per_row_times(rng):
    t1 = np.array([0.1, 0.5])
    t2 = np.array([0.4, 0.05])
    a = draw_midpoint_noise(1.0, 0.6, t1, t2, 3, np.random.default_rng(3))
    b = draw_midpoint_noise(1.0, 0.6, t1, t2, 3, np.random.default_rng(3))
    for u, v in zip(a, b):
        assert u.shape == (2, 3)
        np.testing.assert_array_equal(u, v)


def test_draws_match_discretized_ito_integrals(rng):
    gamma, h, t1, t2, M, n = 2.0, 0.5, 0.15, 0.35, 500, 20000
    dt = h / M
    r = (np.arange(M) + 0.5) * dt
    dB = rng.standard_normal((n, M)) * np.sqrt(dt)

    def xi1(t):
        w = np.where(r < t, 1 - np.exp(-gamma * np.clip(t - r, 0, None)), 0.0)
        return np.sqrt(2 / gamma) * dB @ w

    xi2 = np.sqrt(2 * gamma) * dB @ np.exp(-gamma * (h - r))
    emp = np.cov(np.stack([xi1(t1), xi1(t2), xi1(h), xi2]))
    C = noise_cov_matrix(gamma, h, t1, t2)
    se = np.sqrt((C**2 + np.outer(np.diag(C), np.diag(C))) / n)
    assert np.all(np.abs(emp - C) < 5 * se + 2e-3 * np.abs(C))
