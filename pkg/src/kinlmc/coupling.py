"""Synchronous coupling of a diffusion with its shifted auxiliary copy.

Under synchronous coupling the noise cancels in the difference, so the
difference dynamics are a deterministic linear ODE driven by the Hessian
averaged along the segment between the two positions. The simulator
co-integrates the main path (zero noise) together with the difference and
the running Girsanov energy (1/(4 gamma)) |eta_x dX + eta_p dP|^2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ._numerics import gauss_legendre
from .bounds import gaussian_kl
from .errors import NumericalError, RangeError, TruncationWarning
from .kernels import PhaseState
from .potentials import Potential
from .shifts import ShiftSchedule, integrated_eta, twist

_GL_NODES, _GL_WEIGHTS = gauss_legendre(0.0, 1.0, 16)


@dataclass
class CoupledState:
    main: PhaseState
    aux: PhaseState
    t: float
    twisted_dist: float
    girsanov_energy: float


@dataclass
class CouplingTrajectory:
    """Recorded samples of a coupled run; ``final`` is the last state."""

    t: np.ndarray
    twisted_dist: np.ndarray
    energy: np.ndarray
    envelope_integral: np.ndarray
    final: CoupledState

    def rows(self) -> np.ndarray:
        return np.column_stack([self.t, self.twisted_dist, self.energy])


def integrated_hessian_apply(pot: Potential, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """grad V(x) - grad V(x - dx), as the segment-averaged Hessian applied to dx."""
    if pot.is_quadratic:
        return pot.hessian_matrix @ dx
    pts = x[None, :] - _GL_NODES[:, None] * dx[None, :]
    Hbar = np.einsum("k,kij->ij", _GL_WEIGHTS, pot.hessian(pts))
    return Hbar @ dx


def _rk4(rhs, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + dt / 2 * k1)
    k3 = rhs(t + dt / 2, y + dt / 2 * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


class _Shifts:
    """Shift coefficients and twisted friction for one run."""

    def __init__(self, sched: ShiftSchedule | None, gamma: float, T: float, ibm: bool):
        self.sched, self.gamma, self.T, self.ibm = sched, gamma, T, ibm

    def _eta_p(self, t: float) -> float:
        s = self.sched
        tau = s.T - t + s.offset
        z = s.omega * tau
        if abs(z) < 1e-8:
            return s.c0 / tau * (1 - z / 2)
        return s.c0 * s.omega / math.expm1(z)

    def coeffs(self, t: float) -> tuple[float, float]:
        if self.ibm:
            tau = self.T - t
            return 6.0 / tau**2, 4.0 / tau
        ep = self._eta_p(t)
        return (self.gamma + ep) * ep / 2, ep

    def gamma_t(self, t: float) -> float:
        return self.gamma if self.ibm else self.gamma + self._eta_p(t)

    def rate(self, t: float, beta: float) -> float:
        ex, ep = self.coeffs(t)
        friction = 0.0 if self.ibm else self.gamma
        return friction + ep + math.sqrt(ex + beta)

    def envelope(self, t: np.ndarray) -> np.ndarray:
        """Integral over [0, t] of omega_+ + eta_p (zero in the integrated-BM mode)."""
        if self.ibm or self.sched.c0 == 0:
            return np.zeros_like(t)
        ip, _ = integrated_eta(self.sched, np.zeros_like(t), t)
        return max(self.sched.omega, 0.0) * t + ip


def _twisted(dx, dp, gamma_t: float, ibm: bool) -> float:
    if ibm:
        return float(math.sqrt(dx @ dx + dp @ dp))
    dz = dx + 2.0 * dp / gamma_t
    return float(math.sqrt(dx @ dx + dz @ dz))


def _run(pot: Potential | None, shifts: _Shifts, init_main: PhaseState, init_aux: PhaseState,
         dt: float, t_stop: float, rel_step: float, record_every: int) -> CouplingTrajectory:
    x0, p0 = np.asarray(init_main.x, dtype=float).ravel(), np.asarray(init_main.p, dtype=float).ravel()
    xa, pa = np.asarray(init_aux.x, dtype=float).ravel(), np.asarray(init_aux.p, dtype=float).ravel()
    d = x0.size
    gamma = shifts.gamma
    friction = 0.0 if shifts.ibm else gamma
    beta = 0.0 if pot is None else max(abs(pot.alpha), abs(pot.beta))

    def rhs(t, y):
        x, p, dx, dp = y[:d], y[d:2 * d], y[2 * d:3 * d], y[3 * d:4 * d]
        ex, ep = shifts.coeffs(t)
        shift = ex * dx + ep * dp
        out = np.empty_like(y)
        out[:d] = p
        out[2 * d:3 * d] = dp
        if pot is None:
            out[d:2 * d] = -friction * p
            hdx = 0.0
        else:
            out[d:2 * d] = -pot.grad(x) - friction * p
            hdx = integrated_hessian_apply(pot, x, dx)
        out[3 * d:4 * d] = -hdx - friction * dp - shift
        out[-1] = shift @ shift / (4 * gamma)
        return out

    y = np.concatenate([x0, p0, x0 - xa, p0 - pa, [0.0]])
    t = 0.0
    ts, dists, energies = [0.0], [_twisted(y[2 * d:3 * d], y[3 * d:4 * d], shifts.gamma_t(0.0), shifts.ibm)], [0.0]
    k = 0
    while t < t_stop * (1 - 1e-15):
        step = min(dt, rel_step / shifts.rate(t, beta), t_stop - t)
        y = _rk4(rhs, t, y, step)
        t += step
        k += 1
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"coupled integration blew up at t={t:.6g}")
        if k % record_every == 0 or t >= t_stop * (1 - 1e-15):
            ts.append(t)
            dists.append(_twisted(y[2 * d:3 * d], y[3 * d:4 * d], shifts.gamma_t(t), shifts.ibm))
            energies.append(y[-1])
    x, p, dx, dp = y[:d], y[d:2 * d], y[2 * d:3 * d], y[3 * d:4 * d]
    final = CoupledState(PhaseState(x.copy(), p.copy()), PhaseState(x - dx, p - dp), t, dists[-1], float(y[-1]))
    ts = np.array(ts)
    return CouplingTrajectory(ts, np.array(dists), np.array(energies), shifts.envelope(ts), final)


def evolve_coupled(pot: Potential, sched: ShiftSchedule, init_main: PhaseState, init_aux: PhaseState,
                   dt: float | None = None, T_stop: float | None = None, rel_step: float = 0.05,
                   record_every: int = 1) -> CouplingTrajectory:
    """Co-integrate the coupled pair with RK4 on [0, T_stop].

    Steps are capped at ``rel_step`` over the fastest local rate, which
    shrinks them geometrically as the schedule blows up near T.
    """
    T_stop = sched.T if T_stop is None else T_stop
    if sched.A == 0 and T_stop >= sched.T:
        raise RangeError("the continuous schedule must stop before T")
    dt = 1e-3 * sched.T if dt is None else dt
    return _run(pot, _Shifts(sched, sched.gamma, sched.T, False), init_main, init_aux, dt, T_stop,
                rel_step, record_every)


def optimal_shift_ibm(T: float, t: float, dx, dp) -> np.ndarray:
    """Energy-minimising shift (4/(T-t)) dp + (6/(T-t)^2) dx for integrated Brownian motion."""
    if t >= T:
        raise RangeError("need t < T")
    tau = T - t
    return 4.0 / tau * np.asarray(dp, dtype=float) + 6.0 / tau**2 * np.asarray(dx, dtype=float)


def kl_ibm_exact(gamma: float, T: float, dx, dp) -> float:
    """KL between integrated-Brownian-motion endpoint laws started at points dx, dp apart."""
    if T <= 0:
        raise RangeError("need T > 0")
    dx, dp = np.atleast_1d(np.asarray(dx, dtype=float)), np.atleast_1d(np.asarray(dp, dtype=float))
    return float(dp @ dp / (gamma * T) + 3 * (dp @ dx) / (gamma * T**2) + 3 * (dx @ dx) / (gamma * T**3))


def kl_ibm_gaussian(gamma: float, T: float, dx, dp) -> float:
    """Same quantity through the generic Gaussian KL of the endpoint laws."""
    dx, dp = np.atleast_1d(np.asarray(dx, dtype=float)), np.atleast_1d(np.asarray(dp, dtype=float))
    d = dx.size
    cov = np.kron(2 * gamma * np.array([[T**3 / 3, T**2 / 2], [T**2 / 2, T]]), np.eye(d))
    mean = np.concatenate([dx + dp * T, dp])
    return gaussian_kl(mean, cov, np.zeros(2 * d), cov)


def evolve_ibm(gamma: float, T: float, dx, dp, T_stop: float | None = None, rel_step: float = 0.05,
               record_every: int = 1) -> CouplingTrajectory:
    """Coupled integrated Brownian motions closed by the optimal shift."""
    dx, dp = np.atleast_1d(np.asarray(dx, dtype=float)), np.atleast_1d(np.asarray(dp, dtype=float))
    T_stop = T * (1 - 1e-6) if T_stop is None else T_stop
    if T_stop >= T:
        raise RangeError("must stop before T")
    zero = np.zeros_like(dx)
    return _run(None, _Shifts(None, gamma, T, True), PhaseState(dx, dp), PhaseState(zero, zero.copy()),
                T, T_stop, rel_step, record_every)


def _with_tail(traj: CouplingTrajectory, T: float) -> float:
    """Add the remaining energy on [t_end, T], assuming a power-law integrand."""
    t, e = traj.t, traj.energy
    tau_end = T - t[-1]
    if tau_end <= 0:
        return float(e[-1])
    j = max(len(t) - 2, 1)
    while j > 1 and (t[-1] - t[j]) < 0.5 * (T - t[j]):
        j -= 1
    # rate ~ tau^q fitted from the last two energy increments
    i0, i1 = max(j - 1, 0), j
    r1 = (e[-1] - e[i1]) / (t[-1] - t[i1])
    r0 = (e[i1] - e[i0]) / (t[i1] - t[i0]) if t[i1] > t[i0] else r1
    tau1 = T - (t[-1] + t[i1]) / 2
    tau0 = T - (t[i1] + t[i0]) / 2
    if r1 <= 0:
        return float(e[-1])
    q = math.log(r1 / r0) / math.log(tau1 / tau0) if r0 > 0 and tau0 != tau1 else 0.0
    if q <= -1:
        warnings.warn("energy integrand does not decay integrably near T; tail truncated", TruncationWarning)
        return float(e[-1])
    rate_end = r1 * (tau_end / tau1) ** q
    return float(e[-1] + rate_end * tau_end / (q + 1))


def girsanov_kl_bound(pot: Potential, sched: ShiftSchedule, init_main: PhaseState, init_aux: PhaseState,
                      dt: float | None = None, rel_step: float = 0.05) -> float:
    """Girsanov KL bound between the two endpoint laws at time T."""
    if sched.A > 0:
        return float(evolve_coupled(pot, sched, init_main, init_aux, dt, sched.T, rel_step).energy[-1])
    traj = evolve_coupled(pot, sched, init_main, init_aux, dt, sched.T * (1 - 1e-6), rel_step)
    return _with_tail(traj, sched.T)


def girsanov_kl_ibm(gamma: float, T: float, dx, dp, rel_step: float = 0.05) -> float:
    return _with_tail(evolve_ibm(gamma, T, dx, dp, rel_step=rel_step), T)


@dataclass
class CoupledPair:
    main: PhaseState
    aux: PhaseState


def _uld_skeleton(pot: Potential, gamma: float, x, p, h: float, substeps: int):
    def rhs(_t, y):
        d = y.size // 2
        return np.concatenate([y[d:], -pot.grad(y[:d]) - gamma * y[d:]])

    y = np.concatenate([x, p])
    for _ in range(substeps):
        y = _rk4(rhs, 0.0, y, h / substeps)
    d = y.size // 2
    return y[:d], y[d:]


def diffuse_then_shift_step(pot: Potential, sched: ShiftSchedule, pair: CoupledPair, t_minus: float,
                            h: float | None = None, substeps: int = 64) -> tuple[CoupledPair, float]:
    """Noise-free diffusion of both copies over one window, then the accumulated shift.

    Returns the new pair and the twisted distance in the end-of-window coordinates.
    """
    h = sched.h if h is None else h
    t_plus = t_minus + h
    if t_minus < 0 or t_plus > sched.T * (1 + 1e-12):
        raise RangeError("window outside [0, T]")
    x, p = _uld_skeleton(pot, sched.gamma, np.asarray(pair.main.x, float), np.asarray(pair.main.p, float), h, substeps)
    xa, pa = _uld_skeleton(pot, sched.gamma, np.asarray(pair.aux.x, float), np.asarray(pair.aux.p, float), h, substeps)
    ip, ix = (float(v) for v in integrated_eta(sched, t_minus, t_plus))
    pa = pa + ix * (x - xa) + ip * (p - pa)
    gt = float(sched.gamma_t(t_plus))
    dist = _twisted(x - xa, p - pa, gt, False)
    return CoupledPair(PhaseState(x, p), PhaseState(xa, pa)), dist


def twisted_distance(sched: ShiftSchedule, t: float, pair: CoupledPair) -> float:
    return _twisted(np.asarray(pair.main.x - pair.aux.x, float), np.asarray(pair.main.p - pair.aux.p, float),
                    float(sched.gamma_t(t)), False)


@dataclass(frozen=True)
class ContractionFit:
    """Per-window contraction constants fitted from exact window maps."""

    t_minus: np.ndarray
    factor: np.ndarray
    exponent_integral: np.ndarray
    c: np.ndarray

    @property
    def c_min(self) -> float:
        return float(self.c.min())


def fit_window_contraction(sched: ShiftSchedule, lambdas, n_windows: int | None = None) -> ContractionFit:
    """Worst-case (over lambda) operator norm of each window map and the implied rate constant.

    c_n = -log(factor_n) / integral over the window of (omega_+ + eta_p).
    """
    h = sched.h
    n_total = int(round(sched.T / h))
    n = n_total if n_windows is None else min(n_windows, n_total)
    starts = np.arange(n) * h
    lam = np.asarray(lambdas, dtype=float)
    E = np.stack([expm(np.array([[0.0, 1.0], [-l, -sched.gamma]]) * h) for l in lam])
    ends = np.minimum(starts + h, sched.T)
    ip, ix = integrated_eta(sched, starts, ends)
    A_minus_inv = np.linalg.inv(twist(sched.gamma_t(starts)))
    A_plus = twist(sched.gamma_t(ends))
    phi = np.zeros((n, 2, 2))
    phi[:, 0, 0] = 1.0
    phi[:, 1, 0] = -ix
    phi[:, 1, 1] = 1 - ip
    maps = np.einsum("nij,njk,lkm,nmq->nliq", A_plus, phi, E, A_minus_inv)
    factor = np.linalg.norm(maps, ord=2, axis=(-2, -1)).max(axis=1)
    integral = max(sched.omega, 0.0) * h + ip
    c = -np.log(factor) / integral
    return ContractionFit(starts, factor, integral, c)
