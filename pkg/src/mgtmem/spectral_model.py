"""Structural parameters, the spectrum of ``A`` and modal norms.

``A`` is represented by its eigenvalues only; a state is a triple of
coefficient vectors against the eigenbasis.  Every mode obeys the scalar
Volterra equation

    u''' + alpha u'' + beta lam u' + gamma lam u - lam int_0^t g(s) u(t-s) ds = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .kernels import MemoryKernel


class ParameterError(ValueError):
    """Invalid structural parameters or initial data."""


class InadmissibleKernelError(ValueError):
    """The kernel mass is not below ``gamma``."""


class RegimeError(ValueError):
    """A functional or check is used outside the regime it is defined for."""


class ResolutionError(ValueError):
    """Too few history samples for the requested quadrature."""


@dataclass(frozen=True)
class MgtParams:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ParameterError(f"{name} must be a positive finite number, got {val!r}")

    @property
    def kappa_stability(self) -> float:
        """Stability number ``beta - gamma / alpha``."""
        return self.beta - self.gamma / self.alpha


def stability_number(params: MgtParams) -> float:
    return params.beta - params.gamma / params.alpha


class Regime(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class RegimeInfo:
    regime: Regime
    stability_number: float
    kappa: float
    admissible: bool


def classify_regime(params: MgtParams, kernel: MemoryKernel, atol: float = 1e-12) -> RegimeInfo:
    """Regime from the sign of the stability number, plus the mass check ``kappa < gamma``.

    Raises :class:`InadmissibleKernelError` when ``kappa >= gamma``.
    """
    x = stability_number(params)
    if abs(x) <= atol * max(params.beta, params.gamma / params.alpha):
        regime = Regime.CRITICAL
    elif x > 0:
        regime = Regime.SUBCRITICAL
    else:
        regime = Regime.SUPERCRITICAL
    kappa = float(kernel.mass_kappa)
    if not kappa < params.gamma:
        raise InadmissibleKernelError(f"kernel mass kappa={kappa:.6g} must be below gamma={params.gamma:.6g}")
    return RegimeInfo(regime, x, kappa, True)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise ParameterError("spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(lam)) or lam[0] <= 0 or np.any(np.diff(lam) < 0):
            raise ParameterError("eigenvalues must be finite, positive and sorted")
        lam = lam.copy()
        lam.flags.writeable = False
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @classmethod
    def dirichlet1d(cls, n_modes: int = 8) -> "Spectrum":
        """``lam_j = j^2 pi^2``: the Dirichlet Laplacian on (0, 1)."""
        if n_modes < 1:
            raise ParameterError("n_modes must be at least 1")
        j = np.arange(1, n_modes + 1)
        return cls(j**2 * np.pi**2)


def norm_sq(c, lam, sigma: float = 0.0):
    """``||c||_sigma^2 = sum_j lam_j^sigma c_j^2`` along the last axis."""
    c = np.asarray(c, float)
    weights = np.asarray(lam, float) ** sigma
    return np.sum(weights * c * c, axis=-1)


def inner(a, b, lam, sigma: float = 0.0):
    return np.sum(np.asarray(lam, float) ** sigma * np.asarray(a, float) * np.asarray(b, float), axis=-1)


@dataclass(frozen=True)
class State:
    """Phase-space state ``(u, u_t, u_tt)`` as modal coefficient vectors."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(x, dtype=float)).copy() for x in (self.u, self.v, self.w)]
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape) or arrs[0].ndim != 1:
            raise ParameterError("u, v, w must be 1-D arrays of equal length")
        for name, arr in zip("uvw", arrs):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, n_modes: int) -> "State":
        z = np.zeros(n_modes)
        return cls(z, z, z)

    @property
    def n_modes(self) -> int:
        return self.u.size

    def phase_norm_sq(self, lam) -> float:
        """``||u||_1^2 + ||v||_1^2 + ||w||^2``."""
        return float(norm_sq(self.u, lam, 1) + norm_sq(self.v, lam, 1) + norm_sq(self.w, lam, 0))


def phase_norm_sq(u, v, w, lam):
    return norm_sq(u, lam, 1) + norm_sq(v, lam, 1) + norm_sq(w, lam, 0)


def star_norm_sq(u, v, w, lam, params: MgtParams, kappa: float):
    """``(gamma-kappa)/alpha ||v + alpha u||_1^2 + stab ||v||_1^2 + ||w + alpha v||^2``."""
    a = params.alpha
    x = stability_number(params)
    u, v, w = (np.asarray(z, float) for z in (u, v, w))
    return ((params.gamma - kappa) / a) * norm_sq(v + a * u, lam, 1) + x * norm_sq(v, lam, 1) + norm_sq(w + a * v, lam, 0)


def star_norm_constants(params: MgtParams, kappa: float, lam) -> tuple[float, float]:
    """Exact ``(c1, c2)`` with ``c1 ||z||_H <= ||z||_* <= c2 ||z||_H``.

    Per mode both squared norms are quadratic forms in ``(u, v, w)``; the
    constants are square roots of the extreme generalized eigenvalues.
    """
    a = params.alpha
    x = stability_number(params)
    c = (params.gamma - kappa) / a
    lo, hi = math.inf, 0.0
    for lj in np.atleast_1d(lam):
        # ||z||_*^2 = z^T S z, ||z||_H^2 = z^T D z with z = (u, v, w)
        P = np.array([[a, 1.0, 0.0]])
        Q = np.array([[0.0, 1.0, 0.0]])
        R = np.array([[0.0, a, 1.0]])
        S = c * lj * P.T @ P + x * lj * Q.T @ Q + R.T @ R
        d = np.array([lj, lj, 1.0])
        Dm = np.diag(1.0 / np.sqrt(d))
        ev = np.linalg.eigvalsh(Dm @ S @ Dm)
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    return math.sqrt(max(lo, 0.0)), math.sqrt(hi)


def characteristic_roots(params: MgtParams, lam: float):
    """Roots of ``mu^3 + alpha mu^2 + beta lam mu + gamma lam`` (memoryless mode)."""
    return np.roots([1.0, params.alpha, params.beta * lam, params.gamma * lam])


def product_trapezoid_weights(kernel: MemoryKernel, dt: float, n: int, nodes: int = 8):
    """Weights ``(a_k, b_k)``, ``k = 0..n-1``, for ``int_0^{n dt} g(s) u(t - s) ds``.

    With ``u`` piecewise linear on the grid, the cell ``[k dt, (k+1) dt]``
    contributes ``a_k u(t - k dt) + b_k u(t - (k+1) dt)``; ``g`` is integrated
    by Gauss-Legendre on each cell.
    """
    x, wq = np.polynomial.legendre.leggauss(nodes)
    theta = 0.5 * (x + 1.0)
    wq = 0.5 * wq
    k = np.arange(n)[:, None]
    gv = np.asarray(kernel.g((k + theta[None, :]) * dt), float)
    a = dt * gv @ (wq * (1.0 - theta))
    b = dt * gv @ (wq * theta)
    return a, b


def convolution_trapezoid(kernel: MemoryKernel, history, dt: float) -> float:
    """``int_0^t g(s) u(t - s) ds`` for ``history = u(0), u(dt), ..., u(t)``."""
    u = np.asarray(history, float)
    n = u.size - 1
    if n <= 0:
        return 0.0
    a, b = product_trapezoid_weights(kernel, dt, n)
    rev = u[::-1]
    return float(a @ rev[:-1] + b @ rev[1:])


def modal_residual(params: MgtParams, kernel: MemoryKernel, lam: float, history, dt: float, derivs) -> float:
    """Residual of the single-mode equation at the last history time.

    Parameters
    ----------
    history : array_like
        ``u`` sampled at ``0, dt, ..., t``.
    derivs : tuple of float
        ``(u'(t), u''(t), u'''(t))``.
    """
    u = np.asarray(history, float)
    if u.ndim != 1 or u.size < 1:
        raise ResolutionError("history must be a nonempty 1-D array")
    if u.size < 2 and not kernel.is_zero and dt * (u.size - 1) > 0:
        raise ResolutionError("history needs at least two samples for the convolution")
    up, upp, uppp = (float(d) for d in derivs)
    conv = 0.0 if kernel.is_zero else convolution_trapezoid(kernel, u, dt)
    return uppp + params.alpha * upp + params.beta * lam * up + params.gamma * lam * u[-1] - lam * conv
