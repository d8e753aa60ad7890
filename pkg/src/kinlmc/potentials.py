"""Target potentials with declared Hessian bounds.

All gradient and Hessian routines accept a single point of shape ``(d,)`` or a
batch of shape ``(n, d)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, InvalidSpectrumError


class Kind(str, Enum):
    QUADRATIC = "quadratic"
    ZERO = "zero"
    PERTURBED_QUADRATIC = "perturbed_quadratic"
    TRIG_NONCONVEX = "trig_nonconvex"


@dataclass(frozen=True, eq=False)
class Potential:
    """Smooth potential V with alpha I <= Hessian <= beta I.

    Attributes:
        dim: Ambient dimension.
        alpha: Lower Hessian bound (may be negative).
        beta: Upper Hessian bound.
        kind: Which family the potential belongs to.
        H: Quadratic part (quadratic and perturbed kinds), else None.
        amplitude: Perturbation or cosine amplitude.
        frequency: Perturbation frequency.
    """

    dim: int
    alpha: float
    beta: float
    kind: Kind
    H: np.ndarray | None = None
    amplitude: float = 0.0
    frequency: float = 0.0

    @property
    def is_quadratic(self) -> bool:
        return self.kind in (Kind.QUADRATIC, Kind.ZERO)

    @property
    def hessian_matrix(self) -> np.ndarray:
        """Constant Hessian of a quadratic (or zero) potential."""
        if self.kind == Kind.ZERO:
            return np.zeros((self.dim, self.dim))
        if self.kind == Kind.QUADRATIC:
            return self.H
        raise ConfigError(f"{self.kind.value} potential has no constant Hessian")

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == Kind.ZERO:
            return np.zeros(x.shape[:-1])
        if self.kind == Kind.TRIG_NONCONVEX:
            return self.amplitude * np.cos(x).sum(axis=-1)
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.H, x)
        if self.kind == Kind.PERTURBED_QUADRATIC:
            quad = quad + self.amplitude * np.sin(self.frequency * x).sum(axis=-1)
        return quad

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == Kind.ZERO:
            return np.zeros_like(x)
        if self.kind == Kind.TRIG_NONCONVEX:
            return -self.amplitude * np.sin(x)
        g = x @ self.H
        if self.kind == Kind.PERTURBED_QUADRATIC:
            g = g + self.amplitude * self.frequency * np.cos(self.frequency * x)
        return g

    def hessian(self, x) -> np.ndarray:
        """Full Hessian matrix at x, shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        if self.kind == Kind.ZERO:
            return np.zeros(batch + (self.dim, self.dim))
        if self.kind == Kind.QUADRATIC:
            return np.broadcast_to(self.H, batch + (self.dim, self.dim)).copy()
        if self.kind == Kind.TRIG_NONCONVEX:
            diag = -self.amplitude * np.cos(x)
            base = np.zeros(batch + (self.dim, self.dim))
        else:
            diag = -self.amplitude * self.frequency**2 * np.sin(self.frequency * x)
            base = np.broadcast_to(self.H, batch + (self.dim, self.dim)).copy()
        idx = np.arange(self.dim)
        base[..., idx, idx] += diag
        return base

    def hessian_quadform(self, x, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.einsum("...i,...ij,...j->...", v, self.hessian(x), v)


def make_quadratic(H, allow_indefinite: bool = False) -> Potential:
    """Quadratic V(x) = x^T H x / 2 for a symmetric PSD matrix H.

    ``allow_indefinite`` admits negative eigenvalues (semi-convex test
    problems for the coupling); such a potential has no stationary law.
    """
    H = np.array(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigError("H must be a square matrix")
    if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise ConfigError("H must be symmetric")
    H = (H + H.T) / 2
    eig = np.linalg.eigvalsh(H)
    if eig[0] < -1e-12 * max(1.0, abs(eig[-1])) and not allow_indefinite:
        raise InvalidSpectrumError("H must be positive semidefinite")
    H.setflags(write=False)
    alpha = float(eig[0]) if allow_indefinite else float(max(eig[0], 0.0))
    return Potential(dim=H.shape[0], alpha=alpha, beta=float(eig[-1]), kind=Kind.QUADRATIC, H=H)


def make_gaussian(spectrum) -> Potential:
    """Quadratic with H = diag(spectrum); alpha = min, beta = max."""
    spectrum = np.asarray(spectrum, dtype=float).ravel()
    if spectrum.size == 0 or np.any(~np.isfinite(spectrum)) or np.any(spectrum <= 0):
        raise InvalidSpectrumError(f"spectrum entries must be positive, got {spectrum.tolist()}")
    H = np.diag(spectrum)
    H.setflags(write=False)
    return Potential(dim=spectrum.size, alpha=float(spectrum.min()), beta=float(spectrum.max()),
                     kind=Kind.QUADRATIC, H=H)


def make_zero(dim: int) -> Potential:
    """V = 0; used by the integrated Brownian motion paths (alpha = beta = 0)."""
    if dim < 1:
        raise ConfigError("dim must be positive")
    return Potential(dim=int(dim), alpha=0.0, beta=0.0, kind=Kind.ZERO)


def make_perturbed_quadratic(spectrum, amplitude: float, frequency: float) -> Potential:
    """V(x) = x^T H x / 2 + amplitude * sum_i sin(frequency * x_i).

    The declared bounds are widened by amplitude * frequency**2.
    """
    base = make_gaussian(spectrum)
    if amplitude < 0 or frequency < 0:
        raise ConfigError("amplitude and frequency must be nonnegative")
    width = amplitude * frequency**2
    return Potential(dim=base.dim, alpha=base.alpha - width, beta=base.beta + width,
                     kind=Kind.PERTURBED_QUADRATIC, H=base.H,
                     amplitude=float(amplitude), frequency=float(frequency))


def make_trig_nonconvex(dim: int, beta: float) -> Potential:
    """V(x) = beta * sum_i cos(x_i); Hessian eigenvalues lie in [-beta, beta]."""
    if beta <= 0:
        raise ConfigError("beta must be positive")
    if dim < 1:
        raise ConfigError("dim must be positive")
    return Potential(dim=int(dim), alpha=-float(beta), beta=float(beta),
                     kind=Kind.TRIG_NONCONVEX, amplitude=float(beta))


def potential_from_config(section: dict) -> Potential:
    """Build a potential from a flat mapping (the ``target`` config section)."""
    kind = str(section.get("kind", "")).strip().lower()
    try:
        if kind in ("gaussian", "quadratic"):
            return make_gaussian(_floats(section["spectrum"]))
        if kind == "zero":
            return make_zero(int(section["dim"]))
        if kind in ("trig", "trig_nonconvex"):
            return make_trig_nonconvex(int(section["dim"]), float(section["beta"]))
        if kind in ("perturbed", "perturbed_quadratic"):
            return make_perturbed_quadratic(_floats(section["spectrum"]), float(section["amplitude"]),
                                            float(section["frequency"]))
    except KeyError as exc:
        raise ConfigError(f"target of kind {kind!r} is missing field {exc.args[0]!r}") from None
    raise ConfigError(f"unknown target kind {kind!r}")


def _floats(raw) -> list[float]:
    if isinstance(raw, str):
        raw = raw.replace(",", " ").split()
    if isinstance(raw, (int, float)):
        return [float(raw)]
    return [float(v) for v in raw]


class CountingPotential:
    """Wraps a potential and counts gradient evaluations (one per point)."""

    def __init__(self, pot: Potential):
        self.pot = pot
        self._count = 0
        self._lock = threading.Lock()

    def __getattr__(self, name):
        return getattr(self.pot, name)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        n = int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
        with self._lock:
            self._count += n
        return self.pot.grad(x)

    @property
    def count(self) -> int:
        return self._count


@dataclass
class CurvatureReport:
    max_lipschitz_ratio: float
    min_quadform: float
    max_quadform: float
    violation: bool
    details: list[str] = field(default_factory=list)


def check_curvature(pot: Potential, n_samples: int, radius: float, rng: np.random.Generator,
                    rtol: float = 1e-9) -> CurvatureReport:
    """Spot-check the declared bounds on random points in a ball of given radius.

    Quadratic forms are normalized by |v|^2. A violation is flagged when an
    observation leaves [alpha, beta] by more than rtol relative to max(|alpha|, beta, 1).
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    d = pot.dim

    def ball(n):
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return radius * rng.random((n, 1)) ** (1.0 / d) * z

    x, y = ball(n_samples), ball(n_samples)
    dist = np.linalg.norm(x - y, axis=1)
    gdiff = np.linalg.norm(pot.grad(x) - pot.grad(y), axis=1)
    ratio = np.where(dist > 0, gdiff / np.where(dist > 0, dist, 1.0), 0.0)
    v = rng.standard_normal((n_samples, d))
    q = pot.hessian_quadform(x, v) / np.einsum("ij,ij->i", v, v)
    tol = rtol * max(abs(pot.alpha), abs(pot.beta), 1.0)
    details = []
    if ratio.max() > max(abs(pot.alpha), pot.beta) + tol:
        details.append(f"Lipschitz ratio {ratio.max():.6g} exceeds {max(abs(pot.alpha), pot.beta):.6g}")
    if q.min() < pot.alpha - tol:
        details.append(f"quadratic form {q.min():.6g} below alpha={pot.alpha:.6g}")
    if q.max() > pot.beta + tol:
        details.append(f"quadratic form {q.max():.6g} above beta={pot.beta:.6g}")
    return CurvatureReport(float(ratio.max()), float(q.min()), float(q.max()), bool(details), details)
