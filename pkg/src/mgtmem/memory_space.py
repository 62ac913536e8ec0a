"""Discrete histories in the weighted space with weight ``-g'(s)``.

A :class:`HistoryFunction` is a sampled map ``s -> eta(s)`` with one
coefficient per mode.  Norms use the trapezoidal rule on the sample grid;
grids should contain the kernel breakpoints so every panel sees a smooth
integrand (one-sided values are taken at the panel ends).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import MemoryKernel


class GridMismatchError(ValueError):
    pass


class DomainError(ValueError):
    """History not in the domain of the translation generator (``eta(0) != 0``)."""


@dataclass(frozen=True)
class HistoryFunction:
    s_grid: np.ndarray
    values: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_grid, float)
        vals = np.asarray(self.values, float)
        lam = np.atleast_1d(np.asarray(self.lam, float))
        if vals.ndim == 1:
            vals = vals[:, None]
        if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) <= 0) or s[0] < 0:
            raise ValueError("s_grid must be nonnegative and strictly increasing with at least two points")
        if vals.shape != (s.size, lam.size):
            raise ValueError(f"values must have shape {(s.size, lam.size)}, got {vals.shape}")
        for name, arr in (("s_grid", s), ("values", vals), ("lam", lam)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def s_max(self) -> float:
        return float(self.s_grid[-1])

    @classmethod
    def from_callable(cls, fn, s_grid, lam) -> "HistoryFunction":
        """Sample ``fn(s)`` (returning shape ``(len(s),)`` or ``(len(s), modes)``)."""
        s = np.asarray(s_grid, float)
        vals = np.asarray(fn(s), float)
        lam = np.atleast_1d(lam)
        if vals.ndim == 1:
            vals = np.repeat(vals[:, None], lam.size, axis=1)
        return cls(s, vals, lam)

    def sq_norms(self) -> np.ndarray:
        """``||eta(s)||_1^2`` at each grid point."""
        return self.values**2 @ self.lam

    def at(self, s) -> np.ndarray:
        """Linear interpolation in ``s`` (constant beyond both ends)."""
        s = np.atleast_1d(np.asarray(s, float))
        return np.stack([np.interp(s, self.s_grid, self.values[:, j]) for j in range(self.lam.size)], axis=1)


@dataclass(frozen=True)
class DomainTElement(HistoryFunction):
    """A history together with its ``s``-derivative, vanishing at ``s = 0``."""

    derivative: np.ndarray = None
    tolerance: float = 1e-10

    def __post_init__(self):
        super().__post_init__()
        d = np.asarray(self.derivative, float)
        if d.ndim == 1:
            d = d[:, None]
        if d.shape != self.values.shape:
            raise ValueError("derivative must match values in shape")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "derivative", d)
        s, v = self.s_grid, self.values
        scale = max(float(np.max(np.abs(v))), 1.0)
        if s[0] == 0.0:
            at_zero = np.abs(v[0])
        else:
            # linear extrapolation from the first two samples
            at_zero = np.abs(v[0] - s[0] * (v[1] - v[0]) / (s[1] - s[0]))
        if np.any(at_zero > self.tolerance * scale):
            raise DomainError(f"eta(0) = {at_zero.max():.3e} does not vanish")

    @classmethod
    def from_callables(cls, fn, dfn, s_grid, lam, tolerance: float = 1e-10) -> "DomainTElement":
        s = np.asarray(s_grid, float)
        lam = np.atleast_1d(lam)

        def sample(f):
            out = np.asarray(f(s), float)
            return np.repeat(out[:, None], lam.size, axis=1) if out.ndim == 1 else out

        return cls(s, sample(fn), lam, derivative=sample(dfn), tolerance=tolerance)


def _one_sided(kernel_fn, s, breakpoints):
    """Evaluate ``kernel_fn`` on a grid, replacing breakpoint nodes by their two one-sided limits.

    Returns ``(left_values, right_values)``: the value each node contributes
    to the panel on its left and on its right.
    """
    s = np.asarray(s, float)
    val = np.asarray(kernel_fn(s), float)
    left, right = val.copy(), val.copy()
    for b in breakpoints:
        i = np.searchsorted(s, b)
        if i < s.size and abs(s[i] - b) <= 1e-12 * max(1.0, b):
            h = 1e-9 * max(1.0, b)
            left[i] = float(kernel_fn(b - h))
            right[i] = float(kernel_fn(b + h))
    return left, right


def weighted_trapezoid(kernel_fn, integrand, s, breakpoints=()):
    """``int kernel_fn(s) integrand(s) ds`` by the trapezoidal rule on ``s``."""
    s = np.asarray(s, float)
    f = np.asarray(integrand, float)
    left, right = _one_sided(kernel_fn, s, breakpoints)
    ds = np.diff(s)
    return float(0.5 * np.sum(ds * (right[:-1] * f[:-1] + left[1:] * f[1:])))


def _check_match(a: HistoryFunction, b: HistoryFunction):
    if a.s_grid.shape != b.s_grid.shape or not np.array_equal(a.s_grid, b.s_grid) or not np.array_equal(a.lam, b.lam):
        raise GridMismatchError("histories live on different grids or spectra")


def m_inner(kernel: MemoryKernel, eta1: HistoryFunction, eta2: HistoryFunction, constant_tail: bool = False) -> float:
    """``int_0^S -g'(s) <eta1(s), eta2(s)>_1 ds``.

    With ``constant_tail`` both histories are taken constant beyond the last
    grid point and the exact tail ``g(S) <eta1(S), eta2(S)>_1`` is added.
    """
    _check_match(eta1, eta2)
    pointwise = (eta1.values * eta2.values) @ eta1.lam
    total = weighted_trapezoid(lambda x: -np.asarray(kernel.gp(x)), pointwise, eta1.s_grid, kernel.breakpoints)
    if constant_tail:
        total += float(kernel.g(eta1.s_max)) * float(pointwise[-1])
    return total


def m_norm_sq(kernel: MemoryKernel, eta: HistoryFunction, constant_tail: bool = False) -> float:
    return m_inner(kernel, eta, eta, constant_tail)


def identity_grid(kernel: MemoryKernel, ds: float = 1e-4, s_max: float | None = None, sup_sq: float = 1.0,
               cutoff: float = 1e-14) -> np.ndarray:
    """Uniform-ish grid from 0 with all kernel breakpoints as nodes.

    Truncated where ``|g'(s)| * sup_sq`` drops below ``cutoff`` for good.
    """
    if s_max is None:
        s_max = kernel.truncation_point()
        probe = np.linspace(0.0, s_max, 4001)
        big = np.nonzero(np.abs(np.asarray(kernel.gp(probe))) * sup_sq >= cutoff)[0]
        s_max = float(probe[min(big[-1] + 1, probe.size - 1)]) if big.size else float(probe[1])
    knots = np.unique(np.concatenate([[0.0, s_max], [b for b in kernel.breakpoints if 0 < b < s_max]]))
    pieces = []
    for a, b in zip(knots[:-1], knots[1:]):
        m = max(1, int(math.ceil((b - a) / ds)))
        pieces.append(np.linspace(a, b, m + 1)[:-1])
    pieces.append([s_max])
    return np.concatenate(pieces)


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    gap: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.gap))


def generator_identity_check(kernel: MemoryKernel, eta: DomainTElement) -> IdentityCheck:
    """Compare ``<-eta', eta>_M`` with ``-1/2 int g''(s) ||eta(s)||_1^2 ds``.

    The two agree exactly for ``eta`` vanishing at 0 (integration by parts);
    the returned gap is the quadrature discrepancy.
    """
    if not isinstance(eta, DomainTElement):
        raise DomainError("the identity needs the derivative of eta; pass a DomainTElement")
    s = eta.s_grid
    cross = -(eta.derivative * eta.values) @ eta.lam
    lhs = weighted_trapezoid(lambda x: -np.asarray(kernel.gp(x)), cross, s, kernel.breakpoints)
    rhs = -0.5 * weighted_trapezoid(kernel.gpp, eta.sq_norms(), s, kernel.breakpoints)
    return IdentityCheck(lhs, rhs, abs(lhs - rhs))


# name used by the published interface
lemma_5_1_check = generator_identity_check


def right_translate(kernel: MemoryKernel, eta: HistoryFunction, t: float) -> HistoryFunction:
    """``[R(t) eta](s) = 0`` for ``s <= t`` and ``eta(s - t)`` beyond, on the same grid."""
    if t < 0:
        raise ValueError("translation time must be nonnegative")
    if t == 0:
        return eta
    s = eta.s_grid
    out = np.zeros_like(eta.values)
    mask = s > t
    if np.any(mask):
        out[mask] = eta.at(s[mask] - t)
    return HistoryFunction(s, out, eta.lam)


def mild_solution(kernel: MemoryKernel, eta0: HistoryFunction, f, t: float, dt: float) -> HistoryFunction:
    """Representation formula for ``eta' = -eta_s + f`` with ``eta(0) = 0``.

    ``f`` holds samples at ``0, dt, ..., t`` (shape ``(n+1, modes)``); time
    integrals use the cumulative trapezoidal rule, interpolated linearly.
    """
    f = np.atleast_2d(np.asarray(f, float))
    if f.shape[1] != eta0.lam.size and f.shape[0] == eta0.lam.size:
        f = f.T
    n = f.shape[0] - 1
    if abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError("f must be sampled on 0, dt, ..., t")
    times = np.arange(n + 1) * dt
    F = np.zeros_like(f)
    if n:
        F[1:] = np.cumsum(0.5 * dt * (f[1:] + f[:-1]), axis=0)
    s = eta0.s_grid
    out = np.empty_like(eta0.values)
    inside = s <= t
    for j in range(eta0.lam.size):
        Ft = F[-1, j]
        out[inside, j] = Ft - np.interp(t - s[inside], times, F[:, j])
        out[~inside, j] = np.interp(s[~inside] - t, eta0.s_grid, eta0.values[:, j]) + Ft
    return HistoryFunction(s, out, eta0.lam)


def resolvent_solution(xi: HistoryFunction, omega: float) -> HistoryFunction:
    """``eta(s) = int_0^s exp(-(1 + omega)(s - y)) xi(y) dy`` by exact exponential weights.

    ``xi`` is taken piecewise linear between samples.
    """
    s = xi.s_grid
    if s[0] > 0:
        raise ValueError("resolvent_solution needs a grid starting at s = 0")
    a = 1.0 + omega
    out = np.zeros_like(xi.values)
    for i in range(1, s.size):
        h = s[i] - s[i - 1]
        e = math.exp(-a * h)
        # int_0^h e^{-a(h-y)} (x0 (1 - y/h) + x1 y/h) dy
        w1 = (1.0 - e) / a
        w_lin = (a * h - 1.0 + e) / (a * a * h)
        out[i] = e * out[i - 1] + (w1 - w_lin) * xi.values[i - 1] + w_lin * xi.values[i]
    return HistoryFunction(s, out, xi.lam)
