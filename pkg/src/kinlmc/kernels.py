"""Markov kernels for the underdamped Langevin diffusion

    dX = P dt,    dP = -grad V(X) dt - gamma P dt + sqrt(2 gamma) dB,

whose stationary law is proportional to exp(-V(x) - |p|^2 / 2).

States are batched: ``PhaseState.x`` has shape ``(d,)`` or ``(n, d)``.
Every stochastic kernel accepts an explicit noise argument so that steps can
be driven by externally supplied noise (common random numbers, test hooks).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.linalg import expm

from . import rng as rngmod
from ._numerics import one_minus_exp, phi2, psd_factor
from .errors import ConfigError, DivergenceError, NumericalError, StepSizeWarning
from .noise import draw_midpoint_noise, draw_ulmc_noise
from .potentials import Potential


@dataclass
class PhaseState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.x.shape != self.p.shape:
            raise ConfigError(f"position shape {self.x.shape} != momentum shape {self.p.shape}")

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.p], axis=-1)

    @classmethod
    def from_stacked(cls, z: np.ndarray) -> "PhaseState":
        d = z.shape[-1] // 2
        return cls(z[..., :d], z[..., d:])

    def copy(self) -> "PhaseState":
        return PhaseState(self.x.copy(), self.p.copy())


@dataclass
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def sample(self, n: int, rng: np.random.Generator) -> PhaseState:
        z = rng.standard_normal((n, self.mean.size))
        return PhaseState.from_stacked(self.mean + z @ psd_factor(self.cov).T)


def stationary_moments(H) -> GaussianMoments:
    """Stationary law N(0, blockdiag(H^{-1}, I)) of the diffusion on a quadratic target."""
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    cov = np.zeros((2 * d, 2 * d))
    cov[:d, :d] = np.linalg.inv(H)
    cov[d:, d:] = np.eye(d)
    return GaussianMoments(np.zeros(2 * d), cov)


def _warn_step(gamma: float, h: float) -> None:
    if gamma * h > 1:
        warnings.warn(f"gamma*h = {gamma * h:.3g} > 1; outside the regime h <~ 1/gamma",
                      StepSizeWarning, stacklevel=3)


def _drift_coeffs(gamma, t):
    """(1 - e^{-gamma t})/gamma and (t - (1 - e^{-gamma t})/gamma)/gamma."""
    t = np.asarray(t, dtype=float)
    return one_minus_exp(gamma * t) / gamma, phi2(gamma * t) / gamma**2


# ---------------------------------------------------------------- ULMC

def ulmc_step(pot: Potential, s: PhaseState, gamma: float, h: float,
              rng: np.random.Generator | None = None, noise=None) -> PhaseState:
    """One stochastic exponential Euler step (gradient frozen at the start).

    Args:
        noise: optional pair (xi1_h, xi2_h) shaped like the state; drawn from
            the exact joint law when omitted.
    """
    if gamma <= 0 or h <= 0:
        raise ConfigError("gamma and h must be positive")
    _warn_step(gamma, h)
    if noise is None:
        noise = draw_ulmc_noise(gamma, h, s.x.shape, rng)
    xi1, xi2 = noise
    w, c = _drift_coeffs(gamma, h)
    g = pot.grad(s.x)
    x = s.x + w * s.p - c * g + xi1
    p = np.exp(-gamma * h) * s.p - w * g + xi2
    return PhaseState(x, p)


# ---------------------------------------------------------------- midpoint times

def u_pdf(gamma: float, h: float, u):
    x = gamma * h
    return x * one_minus_exp(x * (1 - np.asarray(u, dtype=float))) / phi2(x)


def u_cdf(gamma: float, h: float, u):
    x = gamma * h
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return 1.0 - phi2(x * (1 - u)) / phi2(x)


def u_quantile(gamma: float, h: float, q, tol: float = 1e-12, max_iter: int = 200):
    """Invert the u-CDF by Newton's method with a bisection safeguard."""
    q = np.asarray(q, dtype=float)
    w = q.copy()
    lo = np.zeros_like(q)
    hi = np.ones_like(q)
    for _ in range(max_iter):
        f = u_cdf(gamma, h, w) - q
        lo = np.where(f < 0, w, lo)
        hi = np.where(f > 0, w, hi)
        dens = u_pdf(gamma, h, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dens > 0, w - f / dens, np.nan)
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        new = np.where(bad, (lo + hi) / 2, step)
        new = np.where(f == 0, w, new)
        done = np.abs(new - w) <= tol
        w = new
        if np.all(done):
            break
    return w


def sample_midpoint_u(gamma: float, h: float, rng: np.random.Generator, size=None):
    """Draw u in [0, 1] with density proportional to 1 - exp(-gamma (1 - u) h)."""
    q = rng.random(size)
    out = u_quantile(gamma, h, q)
    return float(out) if size is None else out


def v_pdf(gamma: float, h: float, v):
    x = gamma * h
    return x * np.exp(-x * (1 - np.asarray(v, dtype=float))) / one_minus_exp(x)


def v_cdf(gamma: float, h: float, v):
    x = gamma * h
    v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    return (np.expm1(-x * (1 - v)) - np.expm1(-x)) / one_minus_exp(x)


def v_quantile(gamma: float, h: float, q):
    x = gamma * h
    q = np.asarray(q, dtype=float)
    return np.clip(1.0 + np.log1p((1.0 - q) * np.expm1(-x)) / x, 0.0, 1.0)


def sample_midpoint_v(gamma: float, h: float, rng: np.random.Generator, size=None):
    """Draw v in [0, 1] with density proportional to exp(-gamma (1 - v) h)."""
    q = rng.random(size)
    out = v_quantile(gamma, h, q)
    return float(out) if size is None else out


# ---------------------------------------------------------------- RM-ULMC

@dataclass
class MidpointDraws:
    """Randomness of one RM-ULMC step; u, v have shape (n,) or are scalars."""

    u: np.ndarray
    v: np.ndarray
    xi1_u: np.ndarray
    xi1_v: np.ndarray
    xi1_h: np.ndarray
    xi2_h: np.ndarray


def draw_midpoints(gamma: float, h: float, shape: tuple[int, ...], rng: np.random.Generator) -> MidpointDraws:
    """Independent u, v per replica and the exact joint noise at (u h, v h, h)."""
    single = len(shape) == 1
    n = 1 if single else shape[0]
    d = shape[-1]
    u = sample_midpoint_u(gamma, h, rng, size=n)
    v = sample_midpoint_v(gamma, h, rng, size=n)
    a, b, c, e = draw_midpoint_noise(gamma, h, u * h, v * h, d, rng)
    if single:
        return MidpointDraws(u[0], v[0], a[0], b[0], c[0], e[0])
    return MidpointDraws(u, v, a, b, c, e)


def rm_ulmc_step(pot: Potential, s: PhaseState, gamma: float, h: float,
                 rng: np.random.Generator | None = None, draws: MidpointDraws | None = None) -> PhaseState:
    """One double-midpoint randomized step; three gradient evaluations."""
    if gamma <= 0 or h <= 0:
        raise ConfigError("gamma and h must be positive")
    _warn_step(gamma, h)
    if draws is None:
        draws = draw_midpoints(gamma, h, s.x.shape, rng)
    u = np.asarray(draws.u, dtype=float)[..., None]
    v = np.asarray(draws.v, dtype=float)[..., None]
    g = pot.grad(s.x)
    wu, cu = _drift_coeffs(gamma, u * h)
    wv, cv = _drift_coeffs(gamma, v * h)
    x_u = s.x + wu * s.p - cu * g + draws.xi1_u
    x_v = s.x + wv * s.p - cv * g + draws.xi1_v
    w, c = _drift_coeffs(gamma, h)
    x = s.x + w * s.p - c * pot.grad(x_u) + draws.xi1_h
    p = np.exp(-gamma * h) * s.p - w * pot.grad(x_v) + draws.xi2_h
    return PhaseState(x, p)


# ---------------------------------------------------------------- exact Gaussian kernel

def drift_matrix(H, gamma: float) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    A = np.zeros((2 * d, 2 * d))
    A[:d, d:] = np.eye(d)
    A[d:, :d] = -H
    A[d:, d:] = -gamma * np.eye(d)
    return A


def gaussian_transition(H, gamma: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix e^{At} and covariance int_0^t e^{As} S e^{A^T s} ds.

    S = blockdiag(0, 2 gamma I). The covariance uses Van Loan's augmented
    matrix exponential.
    """
    A = drift_matrix(H, gamma)
    n = A.shape[0]
    if t == 0:
        return np.eye(n), np.zeros((n, n))
    S = np.zeros((n, n))
    S[n // 2:, n // 2:] = 2 * gamma * np.eye(n // 2)
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = -A
    aug[:n, n:] = S
    aug[n:, n:] = A.T
    E = expm(aug * t)
    if not np.all(np.isfinite(E)):
        raise NumericalError("matrix exponential overflowed")
    Phi = E[n:, n:].T
    Q = Phi @ E[:n, n:]
    return Phi, (Q + Q.T) / 2


def propagate_moments(m: GaussianMoments, Phi: np.ndarray, Q: np.ndarray) -> GaussianMoments:
    return GaussianMoments(Phi @ m.mean, Phi @ m.cov @ Phi.T + Q)


def exact_gaussian_moments(H, m: GaussianMoments, gamma: float, t: float) -> GaussianMoments:
    Phi, Q = gaussian_transition(H, gamma, t)
    return propagate_moments(m, Phi, Q)


def exact_gaussian_step(H, s: PhaseState, gamma: float, t: float,
                        rng: np.random.Generator | None = None, noise=None) -> PhaseState:
    """Exact transition of the diffusion with V(x) = x^T H x / 2 over time t.

    Args:
        noise: optional array shaped like the stacked state (x, p), added to
            the propagated mean instead of a fresh Gaussian draw.
    """
    Phi, Q = gaussian_transition(H, gamma, t)
    z = s.stacked()
    mean = z @ Phi.T
    if noise is None:
        noise = rng.standard_normal(z.shape) @ psd_factor(Q).T
    return PhaseState.from_stacked(mean + noise)


# ---------------------------------------------------------------- shared Brownian paths

@dataclass
class BrownianPath:
    """Brownian increments on a uniform grid of M cells over [0, h].

    ``increments`` has shape (n, d, M). Ito integrals of deterministic
    kernels are evaluated as sums with the kernel taken at cell midpoints.
    """

    h: float
    increments: np.ndarray

    @classmethod
    def sample(cls, h: float, n: int, d: int, cells: int, rng: np.random.Generator) -> "BrownianPath":
        return cls(h, rng.standard_normal((n, d, cells)) * np.sqrt(h / cells))

    @property
    def cells(self) -> int:
        return self.increments.shape[-1]

    @property
    def dt(self) -> float:
        return self.h / self.cells

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.dt

    def ito(self, weights: np.ndarray) -> np.ndarray:
        """Sum of weights * increments; weights of shape (M,), (n, M) or (M, k)."""
        weights = np.asarray(weights, dtype=float)
        if weights.ndim == 1:
            return self.increments @ weights
        if weights.shape[0] == self.increments.shape[0] and weights.ndim == 2:
            return np.einsum("nm,ndm->nd", weights, self.increments)
        return np.einsum("ndm,mk->ndk", self.increments, weights)

    def xi_end(self, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        """(xi1_h, xi2_h) over the whole path."""
        r = self.h - self.midpoints
        w1 = np.sqrt(2 / gamma) * one_minus_exp(gamma * r)
        w2 = np.sqrt(2 * gamma) * np.exp(-gamma * r)
        return self.ito(w1), self.ito(w2)

    def xi1_grid(self, gamma: float, knots: np.ndarray) -> np.ndarray:
        """xi1 at grid times knots * dt; returns shape (n, d, len(knots))."""
        knots = np.asarray(knots)
        t = knots * self.dt
        r = t[None, :] - self.midpoints[:, None]
        w = np.where(r > 0, np.sqrt(2 / gamma) * one_minus_exp(gamma * np.clip(r, 0, None)), 0.0)
        return self.ito(w)

    def xi1_at(self, gamma: float, times: list[np.ndarray], rng: np.random.Generator) -> list[np.ndarray]:
        """xi1 at one or two per-path times (each of shape (n,)).

        The partial cell containing each time is filled in with a Brownian
        bridge consistent with the cell increment; two times falling in the
        same cell share one bridge.
        """
        if not 1 <= len(times) <= 2:
            raise ConfigError("xi1_at supports one or two times per path")
        n, d, M = self.increments.shape
        dt = self.dt
        cells_of, theta_of = [], []
        for t in times:
            t = np.clip(np.asarray(t, dtype=float), 0.0, self.h)
            k = np.minimum(np.floor(t / dt).astype(int), M - 1)
            cells_of.append(k)
            theta_of.append(np.clip(t / dt - k, 0.0, 1.0))
        rows = np.arange(n)
        cell_inc = [self.increments[rows, :, k] for k in cells_of]
        partial = []
        z = rng.standard_normal((len(times), n, d))
        th0 = theta_of[0][:, None]
        b0 = th0 * cell_inc[0] + np.sqrt(th0 * (1 - th0) * dt) * z[0]
        partial.append(b0)
        if len(times) == 2:
            th1 = theta_of[1][:, None]
            indep = th1 * cell_inc[1] + np.sqrt(th1 * (1 - th1) * dt) * z[1]
            same = (cells_of[0] == cells_of[1])[:, None]
            first = th0 <= th1
            lo_th = np.where(first, th0, th1)
            hi_th = np.where(first, th1, th0)
            # B at the later time given B at the earlier one and the cell end
            rem = np.where(lo_th < 1, 1 - lo_th, 1.0)
            frac = (hi_th - lo_th) / rem
            var = np.clip((hi_th - lo_th) * (1 - hi_th) / rem * dt, 0.0, None)
            later = b0 + frac * (cell_inc[0] - b0) + np.sqrt(var) * z[1]
            # when the second time is earlier, reverse roles: bridge from 0 to b0
            earlier = (th1 / np.where(th0 > 0, th0, 1.0)) * b0 + np.sqrt(
                np.clip(th1 * (th0 - th1) / np.where(th0 > 0, th0, 1.0) * dt, 0.0, None)) * z[1]
            joint = np.where(first, later, earlier)
            partial.append(np.where(same, joint, indep))
        out = []
        mids = self.midpoints
        for t, k, th, part in zip(times, cells_of, theta_of, partial):
            t = np.clip(np.asarray(t, dtype=float), 0.0, self.h)
            r = t[:, None] - mids[None, :]
            full = np.arange(M)[None, :] < k[:, None]
            w = np.where(full, one_minus_exp(gamma * np.clip(r, 0, None)), 0.0)
            head = np.einsum("nm,ndm->nd", w, self.increments)
            tail = one_minus_exp(gamma * th * dt / 2)[:, None] * part
            out.append(np.sqrt(2 / gamma) * (head + tail))
        return out

    def substep_noise(self, gamma: float, K: int) -> tuple[np.ndarray, np.ndarray]:
        """(xi1, xi2) for each of K equal substeps; arrays of shape (n, d, K)."""
        n, d, M = self.increments.shape
        if M % K:
            raise ConfigError(f"path with {M} cells cannot be split into {K} substeps")
        m = M // K
        r = (m - np.arange(m) - 0.5) * self.dt
        inc = self.increments.reshape(n, d, K, m)
        xi1 = inc @ (np.sqrt(2 / gamma) * one_minus_exp(gamma * r))
        xi2 = inc @ (np.sqrt(2 * gamma) * np.exp(-gamma * r))
        return xi1, xi2


def exact_path_noise(H, gamma: float, path: BrownianPath) -> np.ndarray:
    """int_0^h e^{A(h-s)} (0, sqrt(2 gamma) dB_s) as a midpoint sum; shape (n, 2d)."""
    A = drift_matrix(H, gamma)
    d = A.shape[0] // 2
    M = path.cells
    step = expm(A * path.dt)
    mats = np.empty((M, 2 * d, d))
    cur = expm(A * path.dt / 2)
    for j in range(M - 1, -1, -1):
        mats[j] = cur[:, d:]
        cur = step @ cur
    return np.sqrt(2 * gamma) * np.einsum("mab,nbm->na", mats, path.increments)


def reference_step(pot: Potential, s: PhaseState, gamma: float, h: float, K: int,
                   rng: np.random.Generator | None = None, path: BrownianPath | None = None) -> PhaseState:
    """K ULMC substeps of size h/K.

    With ``path`` the substep noises are Ito sums over the path cells (the
    number of cells must be a multiple of K); otherwise each substep draws
    exact noise from ``rng``.
    """
    if K < 1:
        raise ConfigError("substeps must be at least 1")
    dt = h / K
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        if path is None:
            for _ in range(K):
                s = ulmc_step(pot, s, gamma, dt, rng)
            return s
        xi1, xi2 = path.substep_noise(gamma, K)
        for i in range(K):
            s = ulmc_step(pot, s, gamma, dt, noise=(xi1[..., i], xi2[..., i]))
    return s


# ---------------------------------------------------------------- chains

class KernelKind(str, Enum):
    ULMC = "ulmc"
    RMULMC = "rm-ulmc"
    EXACT = "exact"
    REFERENCE = "reference"


class LastStep(str, Enum):
    SAME = "same"
    ULMC = "ulmc"


GRADS_PER_STEP = {KernelKind.ULMC: 1, KernelKind.RMULMC: 3, KernelKind.EXACT: 0}


@dataclass
class ChainConfig:
    gamma: float
    h: float
    n_steps: int
    last_step: LastStep = LastStep.SAME
    seed: int = 0
    kernel: KernelKind = KernelKind.ULMC
    substeps: int = 1
    n_replicas: int = 1
    record_every: int = 1

    def __post_init__(self):
        self.kernel = KernelKind(self.kernel)
        self.last_step = LastStep(self.last_step)
        if self.h <= 0 or self.gamma <= 0:
            raise ConfigError("gamma and h must be positive")
        if self.n_steps < 1 or self.substeps < 1 or self.n_replicas < 1 or self.record_every < 1:
            raise ConfigError("n_steps, substeps, n_replicas and record_every must be positive")


@dataclass
class ChainResult:
    """Trajectory summary.

    ``steps`` are the recorded step indices. Per-replica arrays have shape
    (len(steps), n_replicas) and hold running time averages along each
    chain; ``ensemble_*`` hold moments across replicas at each recorded step.
    """

    steps: np.ndarray
    mean_x_norm: np.ndarray
    cov_trace_x: np.ndarray
    cov_trace_p: np.ndarray
    grad_evals: np.ndarray
    ensemble_mean: np.ndarray
    ensemble_cov: np.ndarray
    final: PhaseState
    extra: dict = field(default_factory=dict)


def _one_step(kind: KernelKind, pot, s, cfg: ChainConfig, rng):
    if kind == KernelKind.ULMC:
        return ulmc_step(pot, s, cfg.gamma, cfg.h, rng)
    if kind == KernelKind.RMULMC:
        return rm_ulmc_step(pot, s, cfg.gamma, cfg.h, rng)
    if kind == KernelKind.EXACT:
        return exact_gaussian_step(pot.hessian_matrix, s, cfg.gamma, cfg.h, rng)
    return reference_step(pot, s, cfg.gamma, cfg.h, cfg.substeps, rng)


def _grads(kind: KernelKind, cfg: ChainConfig) -> int:
    return cfg.substeps if kind == KernelKind.REFERENCE else GRADS_PER_STEP[kind]


def _run_block(pot, init, cfg: ChainConfig, lo: int, hi: int):
    # overflow is reported through DivergenceError instead
    with np.errstate(over="ignore", invalid="ignore"):
        return _advance_block(pot, init, cfg, lo, hi)


def _advance_block(pot, init, cfg: ChainConfig, lo: int, hi: int):
    n = hi - lo
    d = pot.dim
    gen = rngmod.stream(cfg.seed, "chain", lo)
    if isinstance(init, GaussianMoments):
        s = init.sample(n, rngmod.stream(cfg.seed, "init", lo))
    else:
        x = np.broadcast_to(init.x, (hi,) + init.x.shape[-1:])[lo:hi]
        p = np.broadcast_to(init.p, (hi,) + init.p.shape[-1:])[lo:hi]
        s = PhaseState(x.copy(), p.copy())
    rec = list(range(cfg.record_every, cfg.n_steps + 1, cfg.record_every))
    if not rec or rec[-1] != cfg.n_steps:
        rec.append(cfg.n_steps)
    n_rec = len(rec)
    out = {k: np.empty((n_rec, n)) for k in ("mean_x_norm", "cov_trace_x", "cov_trace_p", "grad_evals")}
    sums = {"x": np.zeros((n_rec, 2 * d)), "xx": np.zeros((n_rec, 2 * d, 2 * d))}
    mean = {"x": np.zeros((n, d)), "p": np.zeros((n, d))}
    m2 = {"x": np.zeros((n, d)), "p": np.zeros((n, d))}
    grads = 0
    r = 0
    for step in range(1, cfg.n_steps + 1):
        kind = cfg.kernel
        if step == cfg.n_steps and cfg.last_step == LastStep.ULMC:
            kind = KernelKind.ULMC
        s = _one_step(kind, pot, s, cfg, gen)
        grads += _grads(kind, cfg)
        if not (np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.p))):
            raise DivergenceError(step)
        for key, val in (("x", s.x), ("p", s.p)):
            delta = val - mean[key]
            mean[key] += delta / step
            m2[key] += delta * (val - mean[key])
        if step == rec[r]:
            out["mean_x_norm"][r] = np.linalg.norm(mean["x"], axis=1)
            out["cov_trace_x"][r] = m2["x"].sum(axis=1) / step
            out["cov_trace_p"][r] = m2["p"].sum(axis=1) / step
            out["grad_evals"][r] = grads
            z = s.stacked()
            sums["x"][r] = z.sum(axis=0)
            sums["xx"][r] = z.T @ z
            r += 1
    return np.array(rec), out, sums, s


def run_chain(pot: Potential, init, cfg: ChainConfig) -> ChainResult:
    """Run n_steps - 1 steps of cfg.kernel and a final step of cfg.last_step.

    Replicas are split into fixed blocks, each with its own random stream
    derived from cfg.seed, so results do not depend on the thread count.
    """
    if cfg.kernel == KernelKind.EXACT and not pot.is_quadratic:
        raise ConfigError("the exact kernel needs a quadratic target")
    parts = rngmod.parallel_map(lambda b: _run_block(pot, init, cfg, *b), rngmod.blocks(cfg.n_replicas))
    steps = parts[0][0]
    cat = {k: np.concatenate([p[1][k] for p in parts], axis=1) for k in parts[0][1]}
    tot = sum(p[2]["x"] for p in parts)
    totxx = sum(p[2]["xx"] for p in parts)
    n = cfg.n_replicas
    emean = tot / n
    ecov = totxx / n - np.einsum("ri,rj->rij", emean, emean)
    if n > 1:
        ecov *= n / (n - 1)
    final = PhaseState(np.concatenate([p[3].x for p in parts]), np.concatenate([p[3].p for p in parts]))
    return ChainResult(steps, cat["mean_x_norm"], cat["cov_trace_x"], cat["cov_trace_p"],
                       cat["grad_evals"], emean, ecov, final)
