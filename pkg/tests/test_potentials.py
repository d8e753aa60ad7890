import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kinlmc.errors import ConfigError, InvalidSpectrumError
from kinlmc.potentials import (CountingPotential, Kind, check_curvature, make_gaussian, make_perturbed_quadratic,
                               make_quadratic, make_trig_nonconvex, make_zero, potential_from_config)

POTENTIALS = [
    make_gaussian([0.5, 2.0, 3.0]),
    make_perturbed_quadratic([1.0, 2.0, 4.0], 0.3, 1.5),
    make_trig_nonconvex(3, 0.7),
    make_quadratic([[2.0, 0.5, 0.0], [0.5, 1.0, 0.1], [0.0, 0.1, 3.0]]),
    make_zero(3),
]
points = arrays(np.float64, 3, elements=st.floats(-3, 3))


@pytest.mark.parametrize("pot", POTENTIALS, ids=lambda p: p.kind.value)
@settings(max_examples=25, deadline=None)
@given(x=points)
def test_gradient_matches_central_differences(pot, x):
    eps = 1e-6
    fd = np.array([(pot.value(x + eps * e) - pot.value(x - eps * e)) / (2 * eps) for e in np.eye(3)])
    np.testing.assert_allclose(pot.grad(x), fd, atol=1e-6)


@pytest.mark.parametrize("pot", POTENTIALS, ids=lambda p: p.kind.value)
@settings(max_examples=25, deadline=None)
@given(x=points)
def test_hessian_matches_gradient_differences(pot, x):
    eps = 1e-6
    fd = np.stack([(pot.grad(x + eps * e) - pot.grad(x - eps * e)) / (2 * eps) for e in np.eye(3)])
    np.testing.assert_allclose(pot.hessian(x), fd, atol=1e-5)


@pytest.mark.parametrize("pot", POTENTIALS, ids=lambda p: p.kind.value)
def test_declared_curvature_bounds_hold(pot):
    rep = check_curvature(pot, 500, 5.0, np.random.default_rng(0))
    assert not rep.violation


def test_batched_evaluation_matches_loop(rng):
    pot = POTENTIALS[1]
    X = rng.normal(size=(7, 3))
    np.testing.assert_allclose(pot.grad(X), np.stack([pot.grad(x) for x in X]))
    np.testing.assert_allclose(pot.value(X), [pot.value(x) for x in X])


def test_quadratic_validation():
    with pytest.raises(InvalidSpectrumError):
        make_gaussian([1.0, 0.0])
    with pytest.raises(InvalidSpectrumError):
        make_quadratic(np.diag([1.0, -1.0]))
    with pytest.raises(ConfigError):
        make_quadratic([[1.0, 2.0], [0.0, 1.0]])
    semi = make_quadratic(np.diag([-1.0, 1.0]), allow_indefinite=True)
    assert (semi.alpha, semi.beta) == (-1.0, 1.0)


def test_hessian_of_quadratic_is_read_only():
    pot = make_gaussian([1.0, 2.0])
    with pytest.raises(ValueError):
        pot.H[0, 0] = 5.0


def test_target_from_mapping():
    pot = potential_from_config({"kind": "gaussian", "spectrum": "0.1, 1.0"})
    assert pot.kind == Kind.QUADRATIC and pot.dim == 2
    assert potential_from_config({"kind": "trig", "dim": "2", "beta": "1"}).alpha == -1.0
    with pytest.raises(ConfigError, match="missing field"):
        potential_from_config({"kind": "perturbed", "spectrum": "1"})
    with pytest.raises(ConfigError, match="unknown target"):
        potential_from_config({"kind": "banana"})


def test_counting_potential_counts_points(rng):
    pot = CountingPotential(make_gaussian([1.0, 2.0]))
    pot.grad(rng.normal(size=(5, 2)))
    pot.grad(np.zeros(2))
    assert pot.count == 6
    assert pot.dim == 2
