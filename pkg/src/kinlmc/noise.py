"""Covariances and exact joint sampling of the Ito-integral noise terms.

With a standard Brownian motion B and friction gamma, the two noise processes
over one step are

    xi1_t = sqrt(2/gamma) * int_0^t (1 - exp(-gamma (t - s))) dB_s
    xi2_t = sqrt(2 gamma) * int_0^t exp(-gamma (t - s)) dB_s

They are independent across coordinates, so everything here is per
coordinate. A step needs xi1 at up to three times and xi2 at the step end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numerics import gauss_legendre, one_minus_exp, phi2, psd_factor, psd_factor_batch
from .errors import ArgumentOrderError, ConfigError


def _xi1_kernel_integral(x, y):
    """F(x, y) = int_0^x (1 - e^{-a})(1 - e^{-(y - x) - a}) da for 0 <= x <= y.

    Closed form for x >= 0.5, 24-point Gauss-Legendre below (no cancellation).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gap = y - x
    closed = phi2(x) - np.exp(-gap) * one_minus_exp(x) ** 2 / 2
    nodes, weights = gauss_legendre(np.zeros_like(x), np.minimum(x, 0.5), 24)
    vals = one_minus_exp(nodes) * one_minus_exp(gap[..., None] + nodes)
    quad = (weights * vals).sum(axis=-1)
    return np.where(x >= 0.5, closed, quad)


def cov_xi1_xi1(gamma, s, t):
    """Cov(xi1_s, xi1_t) for 0 <= s <= t.

    Equals (2/gamma) * (s - (1 - e^{-gamma s} + e^{-gamma(t-s)} - e^{-gamma t})/gamma
    + (e^{-gamma(t-s)} - e^{-gamma(t+s)})/(2 gamma)), evaluated in a
    cancellation-free rearrangement.
    """
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr > t_arr) or np.any(s_arr < 0):
        raise ArgumentOrderError("cov_xi1_xi1 needs 0 <= s <= t (sort the times first)")
    gamma = float(gamma)
    out = 2.0 / gamma**2 * _xi1_kernel_integral(gamma * s_arr, gamma * t_arr)
    return out if out.ndim else float(out)


def cov_xi1_xi2(gamma, t, h):
    """Cov(xi1_t, xi2_h) for 0 <= t <= h; equals (4/gamma) e^{-gamma h} sinh^2(gamma t / 2)."""
    t_arr = np.asarray(t, dtype=float)
    h_arr = np.asarray(h, dtype=float)
    if np.any(t_arr > h_arr) or np.any(t_arr < 0):
        raise ArgumentOrderError("cov_xi1_xi2 needs 0 <= t <= h")
    gamma = float(gamma)
    out = 4.0 / gamma * np.exp(-gamma * h_arr) * np.sinh(gamma * t_arr / 2) ** 2
    return out if out.ndim else float(out)


def var_xi2(gamma, h):
    """Var(xi2_h) = 1 - exp(-2 gamma h)."""
    out = one_minus_exp(2.0 * float(gamma) * np.asarray(h, dtype=float))
    return out if out.ndim else float(out)


def var_xi1(gamma, t):
    return cov_xi1_xi1(gamma, t, t)


@dataclass(frozen=True)
class NoiseCov:
    """Per-coordinate covariance of (xi1_t1, xi1_t2, xi1_h, xi2_h) and its factor."""

    gamma: float
    h: float
    times: tuple[float, float]
    cov: np.ndarray
    chol: np.ndarray


@dataclass(frozen=True)
class JointNoiseDraw:
    xi1_t1: np.ndarray
    xi1_t2: np.ndarray
    xi1_h: np.ndarray
    xi2_h: np.ndarray


def noise_cov_matrix(gamma: float, h, t1, t2) -> np.ndarray:
    """Covariance matrices of shape (..., 4, 4) for broadcastable t1, t2."""
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    h = np.asarray(h, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if np.any(h < 0) or np.any(t1 < 0) or np.any(t2 < 0) or np.any(t1 > h) or np.any(t2 > h):
        raise ConfigError("need 0 <= t1, t2 <= h")
    h, t1, t2 = np.broadcast_arrays(h, t1, t2)
    times = [t1, t2, h]
    cov = np.zeros(h.shape + (4, 4))
    for i in range(3):
        for j in range(i, 3):
            lo = np.minimum(times[i], times[j])
            hi = np.maximum(times[i], times[j])
            c = cov_xi1_xi1(gamma, lo, hi)
            cov[..., i, j] = c
            cov[..., j, i] = c
        c = cov_xi1_xi2(gamma, times[i], h)
        cov[..., i, 3] = c
        cov[..., 3, i] = c
    cov[..., 3, 3] = var_xi2(gamma, h)
    return cov


def build_noise_cov(gamma: float, h: float, t1: float, t2: float) -> NoiseCov:
    """Covariance of (xi1_t1, xi1_t2, xi1_h, xi2_h) with a jittered Cholesky factor."""
    cov = noise_cov_matrix(gamma, h, t1, t2)
    return NoiseCov(float(gamma), float(h), (float(t1), float(t2)), cov, psd_factor(cov))


def draw_joint_noise(nc: NoiseCov, dim: int, rng: np.random.Generator) -> JointNoiseDraw:
    """One joint draw; coordinates are i.i.d. with covariance nc.cov."""
    z = rng.standard_normal((dim, 4))
    v = z @ nc.chol.T
    return JointNoiseDraw(v[:, 0], v[:, 1], v[:, 2], v[:, 3])


def ulmc_noise_factor(gamma: float, h: float) -> np.ndarray:
    """Factor of the 2x2 covariance of (xi1_h, xi2_h)."""
    cov = noise_cov_matrix(gamma, h, h, h)[2:, 2:]
    return psd_factor(cov)


def draw_ulmc_noise(gamma: float, h: float, shape: tuple[int, ...], rng: np.random.Generator):
    """Draw (xi1_h, xi2_h), each of the given shape."""
    chol = ulmc_noise_factor(gamma, h)
    z = rng.standard_normal(shape + (2,))
    v = z @ chol.T
    return v[..., 0], v[..., 1]


def draw_midpoint_noise(gamma: float, h: float, t1: np.ndarray, t2: np.ndarray, dim: int,
                        rng: np.random.Generator):
    """Per-replica joint draws for replica-specific times t1, t2 of shape (n,).

    Returns four arrays of shape (n, dim).
    """
    cov = noise_cov_matrix(gamma, h, t1, t2)
    chol = psd_factor_batch(cov)
    z = rng.standard_normal((len(t1), dim, 4))
    v = np.einsum("nij,ndj->ndi", chol, z)
    return v[..., 0], v[..., 1], v[..., 2], v[..., 3]
