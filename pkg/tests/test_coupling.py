import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinlmc.coupling import (CoupledPair, diffuse_then_shift_step, evolve_coupled, evolve_ibm,
                             fit_window_contraction, girsanov_kl_bound, girsanov_kl_ibm, integrated_hessian_apply,
                             kl_ibm_exact, kl_ibm_gaussian, optimal_shift_ibm, twisted_distance)
from kinlmc.errors import RangeError
from kinlmc.kernels import PhaseState
from kinlmc.potentials import make_gaussian, make_quadratic, make_trig_nonconvex
from kinlmc.shifts import ShiftSchedule, lambda_grid, twist, window_map

vec2 = st.lists(st.floats(-2, 2), min_size=2, max_size=2).map(np.array)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 5), vec2, vec2)
def test_ibm_kl_closed_form_matches_gaussian_kl(gamma, T, dx, dp):
    assert kl_ibm_exact(gamma, T, dx, dp) == pytest.approx(kl_ibm_gaussian(gamma, T, dx, dp), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("gamma,T", [(0.5, 1.0), (2.0, 0.3), (1.0, 3.0)])
def test_optimal_shift_energy_equals_kl(gamma, T):
    dx, dp = np.array([0.7, -0.2]), np.array([0.1, 0.9])
    assert girsanov_kl_ibm(gamma, T, dx, dp) == pytest.approx(kl_ibm_exact(gamma, T, dx, dp), rel=1e-6)


def test_optimal_shift_closes_the_gap():
    traj = evolve_ibm(1.0, 1.0, np.array([1.0]), np.array([-0.5]))
    assert traj.twisted_dist[-1] < 1e-5 * traj.twisted_dist[0]
    with pytest.raises(RangeError):
        optimal_shift_ibm(1.0, 1.0, [1.0], [0.0])


def test_integrated_hessian_is_gradient_difference(rng):
    for pot in (make_trig_nonconvex(3, 0.8), make_quadratic([[2.0, 0.4], [0.4, 1.0]])):
        x, dx = rng.normal(size=pot.dim), rng.normal(size=pot.dim)
        np.testing.assert_allclose(integrated_hessian_apply(pot, x, dx), pot.grad(x) - pot.grad(x - dx),
                                   atol=1e-12)


@pytest.mark.parametrize("regime,spectrum", [((0.0, 1.0, math.sqrt(32)), [0.0, 1.0]),
                                             ((-1.0, 1.0, 1.0), [-1.0, 1.0])])
def test_twisted_distance_stays_below_envelope(regime, spectrum):
    pot = make_quadratic(np.diag(spectrum), allow_indefinite=True)
    sched = ShiftSchedule.for_regime(*regime, T=0.5)
    traj = evolve_coupled(pot, sched, PhaseState([1.0, 0.5], [0.0, -1.0]), PhaseState([0.0, 0.0], [0.0, 0.0]),
                          T_stop=0.5 * (1 - 1e-3))
    envelope = traj.twisted_dist[0] * np.exp(-traj.envelope_integral / 48)
    assert np.all(traj.twisted_dist <= envelope * (1 + 1e-6))
    assert traj.twisted_dist[-1] < 1e-3 * traj.twisted_dist[0]


def test_continuous_run_must_stop_early():
    sched = ShiftSchedule.for_regime(0.0, 1.0, 2.0, T=1.0)
    with pytest.raises(RangeError):
        evolve_coupled(make_gaussian([1.0]), sched, PhaseState([1.0], [0.0]), PhaseState([0.0], [0.0]))


def test_unshifted_coupling_matches_free_dynamics():
    pot = make_gaussian([1.0])
    sched = ShiftSchedule.for_regime(1.0, 1.0, 2.0, T=1.0, c0=0.0)
    traj = evolve_coupled(pot, sched, PhaseState([1.0], [0.0]), PhaseState([0.0], [0.0]), T_stop=1.0 - 1e-9)
    # critically damped: dx(t) = (1 + t) e^{-t}
    fin = traj.final
    assert float(fin.main.x[0] - fin.aux.x[0]) == pytest.approx(2 * math.exp(-1), rel=1e-6)
    assert traj.energy[-1] == 0.0


def test_tempered_girsanov_energy_is_finite():
    sched = ShiftSchedule.for_regime(0.0, 1.0, math.sqrt(32), T=0.5, A=64 * 192, h=1e-3)
    val = girsanov_kl_bound(make_gaussian([0.5]), sched, PhaseState([1.0], [0.0]), PhaseState([0.0], [0.0]))
    assert np.isfinite(val) and val > 0


@pytest.mark.parametrize("lam", [-1.0, 0.0, 0.7])
def test_window_step_matches_exact_window_map(lam):
    sched = ShiftSchedule.for_regime(-1.0, 1.0, 1.0, T=1.0, A=64 * 192, h=0.005)
    pot = make_quadratic([[lam]], allow_indefinite=True)
    pair = CoupledPair(PhaseState([0.8], [0.1]), PhaseState([0.2], [-0.3]))
    t0 = 0.3
    new, dist = diffuse_then_shift_step(pot, sched, pair, t0)
    before = twist(sched.gamma_t(t0)) @ np.array([0.6, 0.4])
    after = window_map(sched, t0, lam) @ before
    assert dist == pytest.approx(np.linalg.norm(after), rel=1e-10)
    assert twisted_distance(sched, t0 + sched.h, new) == pytest.approx(dist, rel=1e-12)


@pytest.mark.parametrize("regime", [(1.0, 1.0, math.sqrt(32)), (0.0, 1.0, math.sqrt(32)), (-1.0, 1.0, 1.0)])
def test_windows_contract_at_positive_rate(regime):
    a, b, g = regime
    h = 0.01 * min(1 / g, g / b)
    sched = ShiftSchedule.for_regime(a, b, g, T=1.0, A=64 * 192, h=h)
    fit = fit_window_contraction(sched, lambda_grid(a, b, 17))
    assert fit.c_min >= 1 / 96
    assert np.all(fit.factor < 1)
