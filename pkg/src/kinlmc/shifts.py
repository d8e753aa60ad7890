"""Shift schedules for the auxiliary process and the matrices of its contraction analysis.

All matrices are per-eigenvalue 2x2 blocks: for a Hessian eigenvalue ``lam``
the 2d x 2d operators act as ``block (x) I`` on that eigenspace. Functions
accept scalar or array ``t`` / ``lam`` and broadcast; matrix outputs carry
the two trailing axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._numerics import omega_over_expm1
from .errors import CertificationError, ConfigError, NumericalError, RangeError, ScheduleDegenerateError

DEFAULT_C0 = 192.0
DEFAULT_A_FACTOR = 64.0


def omega_for(alpha: float, beta: float, gamma: float) -> float:
    """Contraction rate: alpha/(3 gamma) at high friction, -sqrt(beta)/3 otherwise."""
    if beta < abs(alpha) or gamma <= 0:
        raise ConfigError("need beta >= |alpha| and gamma > 0")
    if gamma >= math.sqrt(32 * beta):
        return alpha / (3 * gamma)
    return -math.sqrt(beta) / 3


@dataclass(frozen=True)
class ShiftSchedule:
    """eta_p(t) = c0 omega / (exp(omega (T - t + A h)) - 1).

    ``A = 0`` gives the continuous schedule, singular at ``t = T``; ``A > 0``
    tempers the endpoint to roughly ``c0 / (A h)``. ``c0 = 0`` switches the
    shifts off.
    """

    omega: float
    c0: float
    A: float
    T: float
    h: float
    gamma: float

    def __post_init__(self):
        if self.c0 < 0 or self.A < 0 or self.T <= 0 or self.gamma <= 0:
            raise ConfigError("need c0 >= 0, A >= 0, T > 0, gamma > 0")
        if self.A > 0 and self.h <= 0:
            raise ConfigError("the tempered schedule needs a positive step h")

    @classmethod
    def for_regime(cls, alpha: float, beta: float, gamma: float, T: float, c0: float = DEFAULT_C0,
                   A: float = 0.0, h: float = 0.0) -> "ShiftSchedule":
        return cls(omega_for(alpha, beta, gamma), c0, A, T, h, gamma)

    @property
    def offset(self) -> float:
        return self.A * self.h

    def tau(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12 * self.T) or np.any(t > self.T * (1 + 1e-12)):
            raise RangeError(f"time outside [0, {self.T}]")
        tau = self.T - t + self.offset
        if self.offset == 0 and np.any(tau <= 0):
            raise ScheduleDegenerateError("the continuous schedule is singular at t = T")
        return tau

    def eta_p(self, t):
        return self.c0 * omega_over_expm1(self.omega, self.tau(t))

    def gamma_t(self, t):
        return self.gamma + self.eta_p(t)

    def eta_x(self, t):
        e = self.eta_p(t)
        return (self.gamma + e) * e / 2

    def eta_p_dot(self, t):
        """Time derivative, from eta' = omega eta + eta^2 / c0."""
        e = self.eta_p(t)
        if self.c0 == 0:
            return np.zeros_like(e)
        return self.omega * e + e**2 / self.c0

    def gamma_dot(self, t):
        return self.eta_p_dot(t)


def _log_abs_expm1_neg(omega: float, tau):
    if omega == 0:
        return np.log(tau)
    return np.log(np.abs(np.expm1(-omega * tau)) / abs(omega))


def integrated_eta(sched: ShiftSchedule, a, b):
    """(integral of eta_p, integral of eta_x) over [a, b], in closed form.

    The eta_x integral uses eta^2 = c0 (eta' - omega eta).
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any(b < a):
        raise RangeError("need a <= b")
    if sched.c0 == 0:
        z = np.zeros(np.broadcast(a, b).shape)
        return z, z.copy()
    ta, tb = sched.tau(a), sched.tau(b)
    ip = sched.c0 * (_log_abs_expm1_neg(sched.omega, ta) - _log_abs_expm1_neg(sched.omega, tb))
    ea, eb = sched.eta_p(a), sched.eta_p(b)
    ix = (sched.gamma / 2) * ip + (sched.c0 / 2) * (eb - ea) - (sched.c0 * sched.omega / 2) * ip
    same = a == b
    return np.where(same, 0.0, ip), np.where(same, 0.0, ix)


def integrated_eta_quad(sched: ShiftSchedule, a: float, b: float, rtol: float = 1e-10) -> tuple[float, float]:
    """Adaptive-quadrature evaluation of ``integrated_eta`` (independent check)."""
    out = []
    for f in (sched.eta_p, sched.eta_x):
        val, err, info = integrate.quad(lambda s: float(f(s)), a, b, epsrel=rtol, epsabs=0.0,
                                        limit=200, full_output=True)[:3]
        if err > max(rtol * abs(val), 1e-300) * 10:
            raise NumericalError(f"quadrature did not converge (estimate {val}, error {err})")
        out.append(val)
    return out[0], out[1]


def _b(sched: ShiftSchedule, t, lam):
    e = sched.eta_p(t)
    gt = sched.gamma + e
    return np.asarray(lam, dtype=float) + gt * e / 2 - sched.eta_p_dot(t) / 2, gt


def b_coefficient(sched: ShiftSchedule, t, lam):
    """lam + gamma_t eta_p / 2 - eta_p' / 2."""
    return _b(sched, t, lam)[0]


def matrix_M(sched: ShiftSchedule, t, lam, full: bool = False) -> np.ndarray:
    """Symmetric contraction block in twisted coordinates.

    The reduced form drops the nonnegative gamma_t'/gamma_t term from the
    bottom-right entry, which can only lower the eigenvalues.
    """
    b, gt = _b(sched, t, lam)
    b, gt = np.broadcast_arrays(b, gt)
    off = b / gt - gt / 2
    M = np.empty(b.shape + (2, 2))
    M[..., 0, 0] = gt / 2
    M[..., 0, 1] = off
    M[..., 1, 0] = off
    M[..., 1, 1] = gt / 2
    if full:
        M[..., 1, 1] += np.broadcast_to(sched.gamma_dot(t) / sched.gamma_t(t), b.shape)
    return M


def contraction_floor(sched: ShiftSchedule, t):
    """omega_+/2 + eta_p/48."""
    return max(sched.omega, 0.0) / 2 + sched.eta_p(t) / 48


@dataclass(frozen=True)
class CertificationReport:
    worst_slack: float
    worst_t: float
    worst_lambda: float
    n_points: int
    rows: np.ndarray  # (n_t, 4): t, worst lambda, lambda_min, floor

    @property
    def passed(self) -> bool:
        return self.worst_slack >= 0


def lambda_grid(alpha: float, beta: float, n: int = 65) -> np.ndarray:
    interior = np.linspace(alpha, beta, n + 2)[1:-1]
    return np.unique(np.concatenate(([alpha], interior, [beta])))


def lambda_min_certify(sched: ShiftSchedule, t_grid, lambda_grid, raise_on_fail: bool = True) -> CertificationReport:
    """Check lambda_min(M_t) >= omega_+/2 + eta_p/48 on a (t, lambda) grid.

    Slack is reported relative to the floor.
    """
    if sched.c0 < 24:
        raise ConfigError("certification needs c0 >= 24")
    t = np.asarray(t_grid, dtype=float)
    lam = np.asarray(lambda_grid, dtype=float)
    M = matrix_M(sched, t[:, None], lam[None, :])
    eig = np.linalg.eigvalsh(M)[..., 0]
    floor = contraction_floor(sched, t)[:, None]
    slack = (eig - floor) / floor
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    jmin = np.argmin(slack, axis=1)
    rows = np.column_stack([t, lam[jmin], eig[np.arange(t.size), jmin], floor[:, 0]])
    report = CertificationReport(float(slack[i, j]), float(t[i]), float(lam[j]), int(slack.size), rows)
    if raise_on_fail and not report.passed:
        raise CertificationError(
            f"lambda_min bound violated at t={t[i]:.6g}, lambda={lam[j]:.6g} "
            f"(omega={sched.omega:.6g}, gamma={sched.gamma:.6g}, c0={sched.c0}, T={sched.T}): "
            f"relative slack {slack[i, j]:.3e}")
    return report


@dataclass(frozen=True)
class DiscreteBlocks:
    M: np.ndarray
    M_skew: np.ndarray
    N: np.ndarray
    phi: np.ndarray
    upphi: np.ndarray


def matrices_discrete(sched: ShiftSchedule, t_minus: float, t, lam) -> DiscreteBlocks:
    """Blocks governing the diffuse-then-shift map over [t_minus, t].

    ``phi`` applies the accumulated shift to (dx, dp), ``upphi`` is the same
    map in twisted coordinates, and d/dt [upphi psi] = -(M + M_skew + N) psi
    for the twisted difference psi under synchronous diffusion.
    """
    if np.any(np.asarray(t) < t_minus):
        raise RangeError("need t >= t_minus")
    ip, ix = integrated_eta(sched, t_minus, t)
    e = sched.eta_p(t)
    gt = sched.gamma + e
    gd = sched.gamma_dot(t)
    ex = gt * e / 2
    lam = np.asarray(lam, dtype=float)
    g = sched.gamma
    shape = np.broadcast(ip, gt, lam).shape
    ip, ix, e, gt, gd, ex, lam = (np.broadcast_to(v, shape) for v in (ip, ix, e, gt, gd, ex, lam))

    def blk(a, b, c, d):
        out = np.empty(shape + (2, 2))
        out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = a, b, c, d
        return out

    zero, one = np.zeros(shape), np.ones(shape)
    bcoef = lam + ex - gd / 2
    off = bcoef / gt - gt / 2
    M = blk(gt / 2, off, off, gt / 2 + gd / gt)
    sk = (ex - gd / 2 + lam) / gt
    M_skew = blk(zero, -sk, sk, zero)
    n21 = -ix + g * ip + gd * ip / gt - 2 * gd * ix / gt**2 - 2 * ip * lam / gt
    n22 = ix - g * ip - gd * ip / gt
    N = blk(zero, zero, n21, n22)
    phi = blk(one, zero, -ix, 1 - ip)
    upphi = blk(one, zero, ip - 2 * ix / gt, 1 - ip)
    return DiscreteBlocks(M, M_skew, N, phi, upphi)


def twist(gamma_t) -> np.ndarray:
    """(dx, dp) -> (dx, dx + 2 dp / gamma_t)."""
    gamma_t = np.asarray(gamma_t, dtype=float)
    out = np.zeros(gamma_t.shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 0] = 1.0
    out[..., 1, 1] = 2.0 / gamma_t
    return out


def window_map(sched: ShiftSchedule, t_minus: float, lam, h: float | None = None) -> np.ndarray:
    """Exact twisted-coordinate map of one diffuse-then-shift window (quadratic case)."""
    from scipy.linalg import expm

    h = sched.h if h is None else h
    t_plus = t_minus + h
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    blocks = matrices_discrete(sched, t_minus, t_plus, lam)
    out = np.empty(lam.shape + (2, 2))
    A_minus_inv = np.linalg.inv(twist(sched.gamma_t(t_minus)))
    A_plus = twist(sched.gamma_t(t_plus))
    for k, l in enumerate(lam):
        D = np.array([[0.0, 1.0], [-l, -sched.gamma]])
        out[k] = A_plus @ blocks.phi[k] @ expm(D * h) @ A_minus_inv
    return out
