"""Exact laws of linear kernels, one-step error estimators and exponent fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from . import rng as rngmod
from .bounds import gaussian_kl, gaussian_w2
from .errors import ConfigError, InsufficientDataError, NumericalError, PrecisionWarning
from .kernels import (BrownianPath, GaussianMoments, KernelKind, PhaseState, _drift_coeffs, exact_path_noise,
                      gaussian_transition, reference_step, stationary_moments, u_pdf, v_pdf)
from .noise import noise_cov_matrix
from .potentials import Potential

InitLaw = GaussianMoments | Callable[[int, np.random.Generator], PhaseState]


# ---------------------------------------------------------------- exact ULMC law on quadratics

def ulmc_affine(H, gamma: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """One ULMC step on V = x^T H x / 2 as z -> F z + N(0, Q) with z = (x, p)."""
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    w, c = (float(v) for v in _drift_coeffs(gamma, h))
    I = np.eye(d)
    F = np.block([[I - c * H, w * I], [-w * H, np.exp(-gamma * h) * I]])
    Q = np.kron(noise_cov_matrix(gamma, h, h, h)[2:, 2:], I)
    return F, Q


def ulmc_exact_law(H, gamma: float, h: float, n: int, init: GaussianMoments) -> GaussianMoments:
    """Law of the ULMC iterate after n steps from a Gaussian initialization."""
    F, Q = ulmc_affine(H, gamma, h)
    m, C = np.asarray(init.mean, dtype=float), np.asarray(init.cov, dtype=float)
    for _ in range(int(n)):
        m = F @ m
        C = F @ C @ F.T + Q
    return GaussianMoments(m, (C + C.T) / 2)


def ulmc_stationary_law(H, gamma: float, h: float) -> GaussianMoments:
    F, Q = ulmc_affine(H, gamma, h)
    if np.max(np.abs(np.linalg.eigvals(F))) >= 1:
        raise NumericalError("ULMC recursion is unstable at this step size")
    C = solve_discrete_lyapunov(F, Q)
    return GaussianMoments(np.zeros(F.shape[0]), (C + C.T) / 2)


def ulmc_kl_plateau(H, gamma: float, h: float) -> float:
    """KL from the ULMC stationary law to the target (the bias floor)."""
    target = stationary_moments(H)
    law = ulmc_stationary_law(H, gamma, h)
    return gaussian_kl(law.mean, law.cov, target.mean, target.cov)


def ulmc_kl_trajectory(H, gamma: float, h: float, n: int, init: GaussianMoments, every: int = 1) -> np.ndarray:
    """Rows (step, KL to target) along the exact ULMC law."""
    F, Q = ulmc_affine(H, gamma, h)
    target = stationary_moments(H)
    m, C = np.asarray(init.mean, dtype=float), np.asarray(init.cov, dtype=float)
    rows = [(0, gaussian_kl(m, C, target.mean, target.cov))]
    for k in range(1, int(n) + 1):
        m = F @ m
        C = F @ C @ F.T + Q
        if k % every == 0 or k == n:
            rows.append((k, gaussian_kl(m, (C + C.T) / 2, target.mean, target.cov)))
    return np.array(rows)


# ---------------------------------------------------------------- local errors

@dataclass(frozen=True)
class ErrorEstimate:
    """Position and momentum errors of one step, with standard errors.

    Position errors are not divided by h.
    """

    pos: float
    mom: float
    pos_se: float
    mom_se: float


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def _init_sampler(pot: Potential, mu0: InitLaw | None):
    if mu0 is None:
        if not pot.is_quadratic:
            raise ConfigError("non-quadratic targets need an explicit initial law")
        mu0 = stationary_moments(pot.hessian_matrix)
    if isinstance(mu0, GaussianMoments):
        return mu0.sample
    return mu0


def _sqrt_jackknife(y: np.ndarray) -> tuple[float, float]:
    """sqrt(max(mean(y), 0)) and its delete-one jackknife standard error."""
    n = y.size
    if n < 2:
        raise InsufficientDataError("need at least two samples")
    total = y.sum()
    est = float(np.sqrt(max(total / n, 0.0)))
    loo = np.sqrt(np.clip((total - y) / (n - 1), 0.0, None))
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return est, se


def _kernel_kind(kernel) -> KernelKind:
    return kernel if isinstance(kernel, KernelKind) else KernelKind(kernel)


def _reference(pot: Potential, s: PhaseState, gamma: float, h: float, path: BrownianPath,
               richardson: bool) -> PhaseState:
    if pot.is_quadratic:
        H = pot.hessian_matrix
        Phi, _ = gaussian_transition(H, gamma, h)
        return PhaseState.from_stacked(s.stacked() @ Phi.T + exact_path_noise(H, gamma, path))
    K = path.cells
    fine = reference_step(pot, s, gamma, h, K, path=path)
    if not richardson:
        return fine
    coarse = reference_step(pot, s, gamma, h, K // 2, path=path)
    return PhaseState(2 * fine.x - coarse.x, 2 * fine.p - coarse.p)


def _algorithm_strong(kind: KernelKind, pot: Potential, s: PhaseState, gamma: float, h: float,
                      path: BrownianPath, rng: np.random.Generator) -> PhaseState:
    from .kernels import MidpointDraws, exact_gaussian_step, rm_ulmc_step, sample_midpoint_u, sample_midpoint_v, ulmc_step

    xi1, xi2 = path.xi_end(gamma)
    if kind is KernelKind.ULMC:
        return ulmc_step(pot, s, gamma, h, noise=(xi1, xi2))
    if kind is KernelKind.RMULMC:
        n = s.x.shape[0]
        u = sample_midpoint_u(gamma, h, rng, size=n)
        v = sample_midpoint_v(gamma, h, rng, size=n)
        xu, xv = path.xi1_at(gamma, [u * h, v * h], rng)
        return rm_ulmc_step(pot, s, gamma, h, draws=MidpointDraws(u, v, xu, xv, xi1, xi2))
    if kind is KernelKind.EXACT:
        if not pot.is_quadratic:
            raise ConfigError("the exact kernel needs a quadratic target")
        return exact_gaussian_step(pot.hessian_matrix, s, gamma, h, noise=exact_path_noise(pot.hessian_matrix, gamma, path))
    raise ConfigError(f"kernel {kind.value} has no one-step error")


def strong_error(kernel, pot: Potential, mu0: InitLaw | None, gamma: float, h: float, K_ref: int,
                 n_paths: int, rng, threads: int | None = None) -> ErrorEstimate:
    """L2 distance between one algorithm step and the shared-path reference step."""
    kind = _kernel_kind(kernel)
    if K_ref < 64:
        raise ConfigError("K_ref must be at least 64")
    seed = _seed_of(rng)
    sample = _init_sampler(pot, mu0)

    def block(bounds):
        lo, hi = bounds
        g = rngmod.stream(seed, "strong-error", lo)
        s = sample(hi - lo, g)
        path = BrownianPath.sample(h, hi - lo, pot.dim, K_ref, g)
        alg = _algorithm_strong(kind, pot, s, gamma, h, path, g)
        ref = _reference(pot, s, gamma, h, path, richardson=False)
        return np.sum((alg.x - ref.x) ** 2, axis=1), np.sum((alg.p - ref.p) ** 2, axis=1)

    parts = rngmod.parallel_map(block, rngmod.blocks(n_paths), threads)
    pos, pos_se = _sqrt_jackknife(np.concatenate([p[0] for p in parts]))
    mom, mom_se = _sqrt_jackknife(np.concatenate([p[1] for p in parts]))
    return ErrorEstimate(pos, mom, pos_se, mom_se)


def _simpson_weights(n: int) -> np.ndarray:
    if n % 2:
        raise ConfigError("Simpson quadrature needs an even number of intervals")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3 * n)


def _conditional_mean(kind: KernelKind, pot: Potential, s: PhaseState, gamma: float, h: float,
                      path: BrownianPath, n_resample: int) -> PhaseState:
    """Expectation of one step over the midpoint times, with the Brownian path fixed."""
    from .kernels import exact_gaussian_step, ulmc_step

    xi1, xi2 = path.xi_end(gamma)
    if kind is KernelKind.ULMC:
        return ulmc_step(pot, s, gamma, h, noise=(xi1, xi2))
    if kind is KernelKind.EXACT:
        return exact_gaussian_step(pot.hessian_matrix, s, gamma, h, noise=exact_path_noise(pot.hessian_matrix, gamma, path))
    if kind is not KernelKind.RMULMC:
        raise ConfigError(f"kernel {kind.value} has no one-step error")
    K = path.cells
    if K % n_resample:
        raise ConfigError(f"K_ref={K} must be a multiple of n_resample={n_resample}")
    knots = np.arange(n_resample + 1) * (K // n_resample)
    nodes = knots / K
    base = _simpson_weights(n_resample)
    wu = base * u_pdf(gamma, h, nodes)
    wv = base * v_pdf(gamma, h, nodes)
    wu, wv = wu / wu.sum(), wv / wv.sum()
    wt, ct = _drift_coeffs(gamma, nodes * h)
    g0 = pot.grad(s.x)
    X = s.x[:, :, None] + wt * s.p[:, :, None] - ct * g0[:, :, None] + path.xi1_grid(gamma, knots)
    G = np.moveaxis(pot.grad(np.moveaxis(X, -1, 1)), 1, -1)
    w, c = _drift_coeffs(gamma, h)
    x = s.x + w * s.p - c * (G @ wu) + xi1
    p = np.exp(-gamma * h) * s.p - w * (G @ wv) + xi2
    return PhaseState(x, p)


def weak_error(kernel, pot: Potential, mu0: InitLaw | None, gamma: float, h: float, K_ref: int,
               n_paths: int, n_resample: int, rng, threads: int | None = None,
               richardson: bool = True) -> ErrorEstimate:
    """Root-mean-square (over the initial law) of the conditional mean error of one step.

    Each initial point gets two independent Brownian paths; the inner product
    of the two conditional differences is an unbiased estimate of the squared
    conditional mean error. The average over midpoint times uses Simpson
    quadrature on the path grid with ``n_resample`` intervals.
    """
    kind = _kernel_kind(kernel)
    if n_resample < 32:
        raise ConfigError("n_resample must be at least 32")
    if K_ref < 64:
        raise ConfigError("K_ref must be at least 64")
    seed = _seed_of(rng)
    sample = _init_sampler(pot, mu0)

    def block(bounds):
        lo, hi = bounds
        g = rngmod.stream(seed, "weak-error", lo)
        s = sample(hi - lo, g)
        diffs = []
        for _ in range(2):
            path = BrownianPath.sample(h, hi - lo, pot.dim, K_ref, g)
            alg = _conditional_mean(kind, pot, s, gamma, h, path, n_resample)
            ref = _reference(pot, s, gamma, h, path, richardson)
            diffs.append((alg.x - ref.x, alg.p - ref.p))
        (dx1, dp1), (dx2, dp2) = diffs
        return np.sum(dx1 * dx2, axis=1), np.sum(dp1 * dp2, axis=1)

    parts = rngmod.parallel_map(block, rngmod.blocks(n_paths), threads)
    pos, pos_se = _sqrt_jackknife(np.concatenate([p[0] for p in parts]))
    mom, mom_se = _sqrt_jackknife(np.concatenate([p[1] for p in parts]))
    for name, est, se in (("position", pos, pos_se), ("momentum", mom, mom_se)):
        if se > 0.25 * est and est > 1e-12:
            warnings.warn(f"{name} weak error {est:.3e} has standard error {se:.3e}; increase n_paths",
                          PrecisionWarning, stacklevel=2)
    return ErrorEstimate(pos, mom, pos_se, mom_se)


# ---------------------------------------------------------------- empirical W2 and fits

@dataclass(frozen=True)
class W2Proxy:
    value: float
    ci_low: float
    ci_high: float
    n_samples: int


def empirical_w2_gaussian_proxy(samples, target: GaussianMoments, n_boot: int = 200, rng=0,
                                level: float = 0.95) -> W2Proxy:
    """Bures W2 from the moment-matched Gaussian of the samples to the target, with a basic bootstrap CI.

    For mixtures (RM-ULMC iterates) this is a proxy, not the W2 of the law.
    """
    X = np.asarray(samples, dtype=float)
    n, k = X.shape
    if k != target.mean.size:
        raise ConfigError("sample dimension does not match the target")
    if n < 10 * k * k:
        raise InsufficientDataError(f"need at least {10 * k * k} samples, got {n}")

    def w2_of(Z):
        C = np.cov(Z, rowvar=False)
        if np.linalg.eigvalsh(C)[0] <= 1e-14 * np.trace(C) / k:
            raise InsufficientDataError("fitted covariance is degenerate")
        return gaussian_w2(Z.mean(axis=0), C, target.mean, target.cov)

    value = w2_of(X)
    g = rng if isinstance(rng, np.random.Generator) else rngmod.stream(int(rng), "bootstrap")
    boots = np.array([w2_of(X[g.integers(0, n, n)]) for _ in range(n_boot)])
    q_lo, q_hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    # basic bootstrap: the plug-in estimate is biased upward by sampling noise
    return W2Proxy(value, max(0.0, float(2 * value - q_hi)), float(2 * value - q_lo), n)


@dataclass(frozen=True)
class ErrorFit:
    hs: np.ndarray
    errors: np.ndarray
    exponent: float
    intercept: float
    r_squared: float

    @property
    def poor(self) -> bool:
        return self.r_squared < 0.9


def fit_exponent(hs, errors) -> ErrorFit:
    """Least-squares slope of log(error) against log(h)."""
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or hs.ndim != 1:
        raise ConfigError("hs and errors must be matching vectors")
    if hs.size < 4:
        raise InsufficientDataError("an exponent fit needs at least 4 points")
    order = np.argsort(-hs)
    hs, errors = hs[order], errors[order]
    if np.any(hs[:-1] / hs[1:] < 1.5 - 1e-12):
        raise ConfigError("step sizes must be spaced by a factor of at least 1.5")
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise ConfigError("errors must be positive and finite")
    lx, ly = np.log(hs), np.log(errors)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return ErrorFit(hs, errors, float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)))
