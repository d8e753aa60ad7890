"""Cancellation-free special functions and a robust PSD factorization."""

from __future__ import annotations

import numpy as np

from .errors import NumericalDegeneracyError

_GL16_NODES, _GL16_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL24_NODES, _GL24_WEIGHTS = np.polynomial.legendre.leggauss(24)

JITTERS = (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10)


def one_minus_exp(x):
    """1 - exp(-x), accurate for small x."""
    return -np.expm1(-np.asarray(x, dtype=float))


def phi2(x):
    """x - 1 + exp(-x), accurate for small x (series below 1e-2)."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, x, 0.0)
    series = xs**2 / 2 - xs**3 / 6 + xs**4 / 24 - xs**5 / 120 + xs**6 / 720
    xl = np.where(small, 1.0, x)
    direct = xl + np.expm1(-xl)
    return np.where(small, series, direct)


def omega_over_expm1(omega, tau):
    """omega / (exp(omega * tau) - 1) with the omega -> 0 limit 1/tau."""
    omega = np.asarray(omega, dtype=float)
    tau = np.asarray(tau, dtype=float)
    z = omega * tau
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    exact = np.where(small, 0.0, omega) / np.expm1(safe)
    limit = 1.0 / tau * (1.0 - z / 2.0)
    return np.where(small, limit, exact)


def gauss_legendre(a, b, n: int = 16):
    """Nodes and weights on [a, b] (broadcast over array endpoints)."""
    if n == 16:
        nodes, weights = _GL16_NODES, _GL16_WEIGHTS
    elif n == 24:
        nodes, weights = _GL24_NODES, _GL24_WEIGHTS
    else:
        nodes, weights = np.polynomial.legendre.leggauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = (b - a) / 2
    return a + half * (nodes + 1), half * weights


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = cov up to a relative diagonal jitter.

    The matrix is scaled to unit diagonal first so the jitter is relative to
    each variance; zero-variance coordinates get zero rows. Jitter escalates
    through JITTERS until the Cholesky factorization succeeds.
    """
    cov = np.asarray(cov, dtype=float)
    scale = np.sqrt(np.clip(np.diagonal(cov), 0.0, None))
    live = scale > 0
    out = np.zeros_like(cov)
    if not live.any():
        return out
    idx = np.flatnonzero(live)
    s = scale[idx]
    corr = cov[np.ix_(idx, idx)] / np.outer(s, s)
    eye = np.eye(len(idx))
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(corr + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        out[np.ix_(idx, idx)] = s[:, None] * chol
        return out
    raise NumericalDegeneracyError(
        "covariance is not positive semidefinite even with jitter 1e-10"
    )


def psd_factor_batch(cov: np.ndarray) -> np.ndarray:
    """Stacked version of psd_factor for an array of shape (n, k, k)."""
    cov = np.asarray(cov, dtype=float)
    scale = np.sqrt(np.clip(np.diagonal(cov, axis1=-2, axis2=-1), 0.0, None))
    if np.all(scale > 0):
        corr = cov / (scale[..., :, None] * scale[..., None, :])
        try:
            return scale[..., :, None] * np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            pass
    return np.stack([psd_factor(c) for c in cov])
