import numpy as np
import pytest
from scipy import integrate, stats

from kinlmc.errors import ConfigError, DivergenceError, StepSizeWarning
from kinlmc.kernels import (GRADS_PER_STEP, BrownianPath, ChainConfig, GaussianMoments, KernelKind, PhaseState,
                            exact_gaussian_moments, exact_gaussian_step, exact_path_noise, gaussian_transition,
                            reference_step, rm_ulmc_step, run_chain, sample_midpoint_u, sample_midpoint_v,
                            stationary_moments, u_cdf, u_pdf, u_quantile, ulmc_step, v_cdf, v_pdf)
from kinlmc.potentials import make_gaussian, make_trig_nonconvex, make_zero


@pytest.mark.parametrize("gh", [1e-3, 0.3, 2.0])
@pytest.mark.parametrize("pdf,cdf", [(u_pdf, u_cdf), (v_pdf, v_cdf)], ids=["u", "v"])
def test_midpoint_density_normalizes_and_matches_cdf(gh, pdf, cdf):
    gamma, h = 1.0, gh
    total = integrate.quad(lambda w: pdf(gamma, h, w), 0, 1)[0]
    assert total == pytest.approx(1.0, rel=1e-10)
    for w in (0.1, 0.5, 0.9):
        assert cdf(gamma, h, w) == pytest.approx(integrate.quad(lambda s: pdf(gamma, h, s), 0, w)[0], rel=1e-9)


def test_quantile_inverts_cdf():
    q = np.linspace(0.01, 0.99, 9)
    np.testing.assert_allclose(u_cdf(2.0, 0.4, u_quantile(2.0, 0.4, q)), q, atol=1e-11)


@pytest.mark.parametrize("gh", [0.01, 1.0])
def test_midpoint_samplers_pass_ks(gh, rng):
    u = sample_midpoint_u(1.0, gh, rng, 20000)
    v = sample_midpoint_v(1.0, gh, rng, 20000)
    assert stats.kstest(u, lambda w: u_cdf(1.0, gh, w)).pvalue > 1e-3
    assert stats.kstest(v, lambda w: v_cdf(1.0, gh, w)).pvalue > 1e-3


def test_small_step_u_density_is_linear():
    # gamma h -> 0: density 2 (1 - u)
    assert u_pdf(1.0, 1e-9, 0.25) == pytest.approx(1.5, rel=1e-6)
    assert v_pdf(1.0, 1e-9, 0.25) == pytest.approx(1.0, rel=1e-6)


def moments(s: PhaseState):
    z = s.stacked()
    return z.mean(axis=0), np.cov(z, rowvar=False)


def test_ulmc_is_exact_without_force(rng):
    pot = make_zero(2)
    n, gamma, h = 200000, 1.3, 0.7
    s0 = PhaseState(np.tile([1.0, -0.5], (n, 1)), np.tile([0.2, 0.4], (n, 1)))
    m, C = moments(ulmc_step(pot, s0, gamma, h, rng))
    exact = exact_gaussian_moments(np.zeros((2, 2)), GaussianMoments(s0.stacked()[0], np.zeros((4, 4))), gamma, h)
    np.testing.assert_allclose(m, exact.mean, atol=5 * np.sqrt(np.diag(exact.cov).max() / n))
    np.testing.assert_allclose(C, exact.cov, atol=0.02 * np.abs(exact.cov).max())


def test_rm_ulmc_matches_ulmc_without_force(rng):
    pot = make_zero(1)
    n = 200000
    s0 = PhaseState(np.ones((n, 1)), np.zeros((n, 1)))
    a = ulmc_step(pot, s0, 0.8, 0.5, rng).stacked()
    b = rm_ulmc_step(pot, s0, 0.8, 0.5, rng).stacked()
    for k in range(2):
        assert stats.ks_2samp(a[:, k], b[:, k]).pvalue > 1e-3


def test_exact_kernel_preserves_stationary_law():
    H = np.array([[2.0, 0.3], [0.3, 0.5]])
    pi = stationary_moments(H)
    out = exact_gaussian_moments(H, pi, 1.7, 0.9)
    np.testing.assert_allclose(out.cov, pi.cov, atol=1e-12)


def test_exact_kernel_semigroup():
    H = np.diag([0.2, 3.0])
    P1, Q1 = gaussian_transition(H, 0.7, 0.4)
    P2, Q2 = gaussian_transition(H, 0.7, 0.6)
    P, Q = gaussian_transition(H, 0.7, 1.0)
    np.testing.assert_allclose(P2 @ P1, P, atol=1e-13)
    np.testing.assert_allclose(P2 @ Q1 @ P2.T + Q2, Q, atol=1e-13)


def test_exact_step_sample_moments(rng):
    H = np.diag([0.5, 2.0])
    n = 100000
    s0 = PhaseState(np.zeros((n, 2)), np.zeros((n, 2)))
    _, C = moments(exact_gaussian_step(H, s0, 1.0, 0.5, rng))
    _, Q = gaussian_transition(H, 1.0, 0.5)
    np.testing.assert_allclose(C, Q, atol=0.02 * np.abs(Q).max())


def test_reference_converges_at_rate_h2_over_K(gauss4):
    # strong error of K substeps against the exact solution halves when K doubles
    g, h, n = 1.0, 0.1, 4000
    r = np.random.default_rng(7)
    s = stationary_moments(gauss4.hessian_matrix).sample(n, r)
    path = BrownianPath.sample(h, n, 4, 256, r)
    Phi, _ = gaussian_transition(gauss4.hessian_matrix, g, h)
    exact = s.stacked() @ Phi.T + exact_path_noise(gauss4.hessian_matrix, g, path)

    def err(K):
        z = reference_step(gauss4, s, g, h, K, path=path).stacked()
        return np.sqrt(np.mean(np.sum((z - exact) ** 2, axis=1)))

    ratios = [err(K) / err(2 * K) for K in (8, 16, 32)]
    assert all(1.75 < q < 2.25 for q in ratios), ratios


def test_step_size_warning():
    pot = make_gaussian([1.0])
    with pytest.warns(StepSizeWarning):
        ulmc_step(pot, PhaseState(np.zeros(1), np.zeros(1)), 4.0, 0.5, np.random.default_rng(0))


def test_invalid_step_arguments():
    pot = make_gaussian([1.0])
    s = PhaseState(np.zeros(1), np.zeros(1))
    with pytest.raises(ConfigError):
        ulmc_step(pot, s, 1.0, 0.0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        PhaseState(np.zeros(2), np.zeros(3))
    with pytest.raises(ConfigError):
        ChainConfig(gamma=1.0, h=0.1, n_steps=0)


@pytest.mark.parametrize("kernel", ["ulmc", "rm-ulmc"])
def test_gradient_counts(kernel, gauss4):
    cfg = ChainConfig(gamma=1.0, h=0.1, n_steps=10, kernel=kernel, n_replicas=3, record_every=5)
    res = run_chain(gauss4, stationary_moments(gauss4.hessian_matrix), cfg)
    per = GRADS_PER_STEP[KernelKind(kernel)]
    np.testing.assert_array_equal(res.grad_evals[:, 0], [5 * per, 10 * per])
    mixed = run_chain(gauss4, stationary_moments(gauss4.hessian_matrix),
                      ChainConfig(gamma=1.0, h=0.1, n_steps=10, kernel=kernel, last_step="ulmc"))
    assert mixed.grad_evals[-1, 0] == 9 * per + 1


def test_chain_is_independent_of_thread_count(gauss4, monkeypatch):
    cfg = ChainConfig(gamma=1.0, h=0.1, n_steps=20, kernel="rm-ulmc", n_replicas=3000, seed=4, record_every=10)
    init = stationary_moments(gauss4.hessian_matrix)
    monkeypatch.setenv("KINLMC_THREADS", "1")
    a = run_chain(gauss4, init, cfg)
    monkeypatch.setenv("KINLMC_THREADS", "4")
    b = run_chain(gauss4, init, cfg)
    np.testing.assert_array_equal(a.final.x, b.final.x)
    np.testing.assert_array_equal(a.cov_trace_x, b.cov_trace_x)


def test_chain_keeps_stationary_law_approximately(gauss4):
    init = stationary_moments(gauss4.hessian_matrix)
    cfg = ChainConfig(gamma=1.0, h=0.05, n_steps=40, kernel="exact", n_replicas=20000, seed=1, record_every=40)
    res = run_chain(gauss4, init, cfg)
    np.testing.assert_allclose(np.diag(res.ensemble_cov[-1])[:4], [10, 2.5, 1 / 0.7, 1], rtol=0.05)


def test_divergence_is_reported():
    pot = make_gaussian([1e4])
    cfg = ChainConfig(gamma=0.01, h=1.0, n_steps=500, seed=0)
    with pytest.raises(DivergenceError):
        run_chain(pot, PhaseState(np.ones(1), np.zeros(1)), cfg)


def test_exact_kernel_needs_quadratic():
    with pytest.raises(ConfigError):
        run_chain(make_trig_nonconvex(1, 1.0), PhaseState(np.zeros(1), np.zeros(1)),
                  ChainConfig(gamma=1.0, h=0.1, n_steps=1, kernel="exact"))
