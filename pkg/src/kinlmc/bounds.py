"""Closed-form bound calculators.

Every calculator takes a ``ConstantsProfile`` carrying the universal
constants that the bounds leave unspecified. The defaults are all one (the
Harnack rate defaults to 1/48), so outputs are orders of magnitude, not sharp
values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, sqrtm

from ._numerics import omega_over_expm1
from .errors import NumericalError, RangeError, RegimeError


@dataclass(frozen=True)
class ConstantsProfile:
    harnack_rate: float = 1.0 / 48.0
    harnack: float = 1.0
    gamma0: float = 1.0
    err: float = 1.0
    cross_reg: float = 1.0
    budget_h: float = 1.0
    budget_n: float = 1.0
    discretization: float = 1.0


DEFAULT_PROFILE = ConstantsProfile()


@dataclass(frozen=True)
class RegimeParams:
    alpha: float
    beta: float
    gamma: float
    T: float = 1.0
    h: float = 0.01
    N: int | None = None
    c0: float = 192.0
    A: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if self.beta <= 0 or self.beta < abs(self.alpha) - 1e-15:
            raise RegimeError("need beta > 0 and beta >= |alpha|")
        if self.gamma <= 0 or self.T <= 0 or self.h <= 0:
            raise RegimeError("gamma, T and h must be positive")

    @property
    def omega(self) -> float:
        if self.gamma >= math.sqrt(32 * self.beta):
            return self.alpha / (3 * self.gamma)
        return -math.sqrt(self.beta) / 3

    @property
    def omega_plus(self) -> float:
        return max(self.omega, 0.0)

    @property
    def kappa(self) -> float:
        return self.beta / self.alpha if self.alpha > 0 else math.inf

    def gamma0(self, profile: ConstantsProfile = DEFAULT_PROFILE) -> float:
        """gamma + 1{T <= 1/|omega|}/T, scaled by the profile constant."""
        w = abs(self.omega)
        short = w == 0 or self.T <= 1 / w
        return profile.gamma0 * (self.gamma + (1 / self.T if short else 0.0))


def harnack_C(params: RegimeParams, profile: ConstantsProfile = DEFAULT_PROFILE) -> float:
    """(1/gamma) r^3 + gamma r with r = omega / (exp(c omega T) - 1).

    At omega = 0, r is the limit 1/(c T).
    """
    c = profile.harnack_rate
    r = float(omega_over_expm1(params.omega, c * params.T))
    return profile.harnack * (r**3 / params.gamma + params.gamma * r)


def err_bound(params: RegimeParams, Ew: float, Es: float, case: str,
              profile: ConstantsProfile = DEFAULT_PROFILE, check: bool = True) -> float:
    """Accumulated local-error term of the end-to-end KL bound.

    Cases: ``"strong"`` (alpha > 0, gamma = sqrt(32 beta)), ``"weak"``
    (alpha = 0, gamma = sqrt(32 beta)) and ``"semiconvex"`` (alpha = -beta,
    gamma <= sqrt(32 beta)).
    """
    a, b, g, T, h = params.alpha, params.beta, params.gamma, params.T, params.h
    high = math.isclose(g, math.sqrt(32 * b), rel_tol=1e-9)
    sb = math.sqrt(b)
    if case == "strong":
        if check and not (a > 0 and high):
            raise RegimeError("strongly convex case needs alpha > 0 and gamma = sqrt(32 beta)")
        w = a / (3 * g)
        val = Ew**2 / (a * h**2) + math.log(1 / (w * h)) / (sb * h) * Es**2
    elif case == "weak":
        if check and not (a == 0 and high):
            raise RegimeError("weakly convex case needs alpha = 0 and gamma = sqrt(32 beta)")
        val = T / (sb * h**2) * Ew**2 + (math.log(T / h) / (sb * h) + sb * T) * Es**2
    elif case == "semiconvex":
        if check and not (math.isclose(a, -b) and g <= math.sqrt(32 * b) * (1 + 1e-12)):
            raise RegimeError("semi-convex case needs alpha = -beta and gamma <= sqrt(32 beta)")
        val = T / (g * h**2) * Ew**2 + (math.log(min(1 / sb, T) / h) + sb * T) / (g * h) * Es**2
    else:
        raise RegimeError(f"unknown case {case!r}")
    return profile.err * val


def cross_reg_ulmc(params: RegimeParams, x, xbar, p, pbar, gradV_x, q: float = 2.0,
                   profile: ConstantsProfile = DEFAULT_PROFILE, check: bool = True) -> float:
    """Cross-regularity bound between one ULMC step and one diffusion step.

    |dx|^2/(gamma h^3) + |dp|^2/(gamma h) + beta^2 h^3 q |p|^2/gamma
    + beta^2 d h^4 q + beta^2 h^5 q |grad V(x)|^2/gamma.
    """
    b, g, h = params.beta, params.gamma, params.h
    if q < 2:
        raise RegimeError("q must be at least 2")
    if check and h > min(1 / g, g / b, 1 / math.sqrt(b * q)):
        raise RegimeError("step size exceeds 1/gamma, gamma/beta or 1/sqrt(beta q)")
    x, xbar, p, pbar, gv = (np.asarray(v, dtype=float) for v in (x, xbar, p, pbar, gradV_x))
    d = x.size
    val = (np.sum((x - xbar) ** 2) / (g * h**3) + np.sum((p - pbar) ** 2) / (g * h)
           + b**2 * h**3 * q * np.sum(p**2) / g + b**2 * d * h**4 * q
           + b**2 * h**5 * q * np.sum(gv**2) / g)
    return profile.cross_reg * float(val)


def _chol(C):
    try:
        return cho_factor(np.asarray(C, dtype=float), lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is not symmetric positive definite") from None


def gaussian_kl(m1, C1, m2, C2) -> float:
    """KL(N(m1, C1) || N(m2, C2))."""
    m1, m2 = np.atleast_1d(np.asarray(m1, dtype=float)), np.atleast_1d(np.asarray(m2, dtype=float))
    C1, C2 = np.atleast_2d(np.asarray(C1, dtype=float)), np.atleast_2d(np.asarray(C2, dtype=float))
    f1, f2 = _chol(C1), _chol(C2)
    k = m1.size
    logdet1 = 2 * np.log(np.diag(f1[0])).sum()
    logdet2 = 2 * np.log(np.diag(f2[0])).sum()
    dm = m2 - m1
    tr = np.trace(cho_solve(f2, C1))
    return float(0.5 * (tr + dm @ cho_solve(f2, dm) - k + logdet2 - logdet1))


def gaussian_w2(m1, C1, m2, C2) -> float:
    """Bures-Wasserstein distance between N(m1, C1) and N(m2, C2)."""
    m1, m2 = np.atleast_1d(np.asarray(m1, dtype=float)), np.atleast_1d(np.asarray(m2, dtype=float))
    C1, C2 = np.atleast_2d(np.asarray(C1, dtype=float)), np.atleast_2d(np.asarray(C2, dtype=float))
    for C in (C1, C2):
        if np.linalg.eigvalsh((C + C.T) / 2)[0] < -1e-12 * max(1.0, np.abs(C).max()):
            raise NumericalError("covariance is not positive semidefinite")
    r2 = np.real(sqrtm(C2))
    cross = np.real(sqrtm(r2 @ C1 @ r2))
    bures = np.trace(C1) + np.trace(C2) - 2 * np.trace(cross)
    return float(math.sqrt(max(np.sum((m1 - m2) ** 2) + bures, 0.0)))


@dataclass(frozen=True)
class InitStats:
    """Initialization statistics consumed by the budget formulas.

    W2sq: squared twisted W2 distance to the target; chi2: chi-square
    divergence to the target; lyapunov: value of the entropic Lyapunov
    functional at the initialization.
    """

    W2sq: float = 1.0
    chi2: float = 1.0
    lyapunov: float = 1.0


@dataclass(frozen=True)
class Budget:
    h: float
    N: float
    theorem: str
    notes: list[str] = field(default_factory=list)


BUDGETS = ("ulmc-convex", "rmulmc-convex", "rmulmc-lsi", "rmulmc-spacetime")


def _log(arg: float) -> float:
    """Natural log floored at 1 so that iteration counts stay positive."""
    return max(math.log(arg), 1.0) if arg > 0 else 1.0


def budget(theorem_id: str, target_eps: float, params: RegimeParams, init_stats: InitStats = InitStats(),
           profile: ConstantsProfile = DEFAULT_PROFILE) -> Budget:
    """Step size and iteration count of an iteration-complexity statement.

    Suppressed constants come from the profile and logarithms are evaluated
    explicitly (floored at 1); the result is an order of magnitude only.
    """
    eps = float(target_eps)
    if eps <= 0:
        raise RangeError("target accuracy must be positive")
    a, b, d = params.alpha, params.beta, params.dim
    W2 = init_stats.W2sq
    W = math.sqrt(W2)
    notes = ["constants suppressed; order of magnitude only"]
    if theorem_id == "ulmc-convex":
        if a > 0:
            k = b / a
            if eps > math.sqrt(d / k):
                raise RangeError("need eps <= sqrt(d / kappa)")
            h = eps / (math.sqrt(b * k * d))
            N = k**1.5 * math.sqrt(d) / eps * _log(a * W2 / eps**2)
        else:
            if eps > math.sqrt(b) * W:
                raise RangeError("need eps <= sqrt(beta) W")
            h = eps**2 / (b * math.sqrt(d) * W + b**1.5 * W2)
            N = (b**1.5 * math.sqrt(d) * W**3 + b**2 * W2**2) / eps**4
    elif theorem_id == "rmulmc-convex":
        if a > 0:
            k = b / a
            if eps > math.sqrt(d) / k**1.5:
                raise RangeError("need eps <= sqrt(d) / kappa^(3/2)")
            h = eps ** (2 / 3) / (math.sqrt(b) * d ** (1 / 3))
            N = k * d ** (1 / 3) * eps ** (-2 / 3) * _log(a * W2 / eps**2)
        else:
            if eps > b**0.75 * W**1.5 / d**0.25:
                raise RangeError("need eps <= beta^(3/4) W^(3/2) / d^(1/4)")
            h = eps / (b**0.75 * d**0.25 * math.sqrt(W) + b * W)
            N = (b**1.25 * d**0.25 * W**2.5 + b**1.5 * W**3) / eps**3
    elif theorem_id == "rmulmc-lsi":
        if a <= 0:
            raise RegimeError("needs a log-Sobolev constant alpha > 0")
        k = b / a
        L = init_stats.lyapunov
        if eps > min(1.0, math.sqrt(L)):
            raise RangeError("need eps <= min(1, sqrt(L))")
        cchi = math.log1p(init_stats.chi2) / d
        lg = _log(L / eps**2)
        h = eps ** (2 / 3) / ((1 + cchi) ** (1 / 3) * math.sqrt(b) * k ** (1 / 3) * d ** (1 / 3) * lg ** (1 / 3))
        N = (1 + cchi) ** (1 / 3) * k ** (4 / 3) * d ** (1 / 3) * eps ** (-2 / 3) * lg ** (4 / 3)
    elif theorem_id == "rmulmc-spacetime":
        if a <= 0:
            raise RegimeError("needs a Poincare constant alpha > 0")
        k = b / a
        chi2 = init_stats.chi2
        if eps > math.sqrt(math.log1p(chi2)):
            raise RangeError("need eps <= sqrt(log(1 + chi2))")
        dim_term = d ** (1 / 3) + math.log1p(chi2) ** (1 / 3)
        lg = _log(chi2 / eps**2)
        h = eps ** (2 / 3) / (math.sqrt(b) * k ** (1 / 3) * dim_term * lg ** (1 / 3))
        N = k ** (5 / 6) * dim_term * eps ** (-2 / 3) * lg ** (4 / 3)
    else:
        raise RangeError(f"unknown budget {theorem_id!r}; choose from {BUDGETS}")
    return Budget(profile.budget_h * h, profile.budget_n * N, theorem_id, notes)


def rm_discretization_kl(params: RegimeParams, chi2: float = 0.0,
                         profile: ConstantsProfile = DEFAULT_PROFILE) -> float:
    """KL accumulated by RM-ULMC over horizon T relative to the diffusion.

    (1 + C) (1 + sqrt(beta) T) beta^2 d h^3 / gamma with C = log(1 + chi2)/d.
    """
    b, g, h, T, d = params.beta, params.gamma, params.h, params.T, params.dim
    cchi = math.log1p(chi2) / d
    return profile.discretization * (1 + cchi) * (1 + math.sqrt(b) * T) * b**2 * d * h**3 / g
