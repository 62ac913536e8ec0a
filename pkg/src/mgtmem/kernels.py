"""Memory kernels for the MGT equation with memory.

A kernel is an immutable object exposing vectorized evaluations of
``g``, ``g'`` and ``g''`` together with the total mass ``kappa`` and the
tail integral ``G(s) = int_s^inf g``.  Closed forms are used wherever they
exist; everything else falls back to adaptive quadrature.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator


class KernelError(ValueError):
    """Invalid kernel parameters or kernel specification."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def _asarray(s):
    return np.asarray(s, dtype=float)


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


class MemoryKernel:
    """Base class for memory kernels.

    Subclasses implement :meth:`g`, :meth:`gp` and :meth:`gpp`.  All three
    accept scalars or arrays of ``s >= 0``.

    Attributes
    ----------
    g3_rate : float or None
        Smallest ``r`` for which ``r g'(s) - g''(s) <= 0`` is known to hold,
        so ``(alpha - delta) g' - g'' <= 0`` for any ``delta <= alpha - r``.
    exp_bound : tuple of float or None
        Certified ``(M_g, omega_g)`` with ``g(s) <= M_g exp(-omega_g s)``.
    breakpoints : tuple of float
        Points where ``g''`` may jump; quadratures split there.
    """

    name = "kernel"
    g3_rate: float | None = None
    exp_bound: tuple[float, float] | None = None
    breakpoints: tuple[float, ...] = ()

    def g(self, s):
        raise NotImplementedError

    def gp(self, s):
        raise NotImplementedError

    def gpp(self, s):
        raise NotImplementedError

    def __call__(self, s):
        return self.g(s)

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def mass_kappa(self) -> float:
        return self.tail_G(0.0)

    @property
    def g0(self) -> float:
        """``g(0) = int_0^inf -g'(s) ds``."""
        return float(self.g(0.0))

    def delta_g3(self, alpha: float) -> float | None:
        """Largest certified ``delta`` in the curvature condition, kept below ``alpha``."""
        if self.g3_rate is None:
            return None
        if self.g3_rate > 0:
            delta = alpha - self.g3_rate
        else:
            delta = 0.5 * alpha
        return delta if delta > 0 else None

    # log-scale helpers; kernels that underflow override these
    def log_g(self, s):
        with np.errstate(divide="ignore"):
            return np.log(self.g(s))

    def log_neg_gp(self, s):
        with np.errstate(divide="ignore"):
            return np.log(-_asarray(self.gp(s)))

    def gpp_over_gp(self, s):
        gp = _asarray(self.gp(s))
        gpp = _asarray(self.gpp(s))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(gp != 0.0, gpp / np.where(gp != 0.0, gp, 1.0), np.nan)

    def truncation_point(self, rel: float = 1e-14) -> float:
        """Smallest doubling ``S`` with ``g(S) < rel g(0)`` and ``|g'(S)| < rel |g'(0)|``."""
        g0 = abs(float(self.g(0.0)))
        gp0 = abs(float(self.gp(0.0)))
        if g0 == 0.0 and gp0 == 0.0:
            return 1.0
        S = 1.0
        while S < 1e6:
            if abs(float(self.g(S))) < rel * g0 and abs(float(self.gp(S))) <= rel * max(gp0, g0):
                return S
            S *= 2.0
        raise QuadratureError(f"{self.name}: no truncation point below 1e6")

    def tail_G(self, s):
        """``G(s) = int_s^inf g(y) dy`` by adaptive quadrature (rtol 1e-10)."""
        s_arr = _asarray(s)
        out = np.array([self._tail_quad(float(x)) for x in s_arr.ravel()]).reshape(s_arr.shape)
        return _scalar_or_array(out, s)

    def _tail_quad(self, s: float) -> float:
        S = self.truncation_point()
        if s >= S:
            S = 2.0 * s + 1.0
        pts = [p for p in self.breakpoints if s < p < S]
        # split into unit-ish panels: the default quad limit chokes on oscillations
        edges = np.unique(np.concatenate([[s, S], pts, np.arange(math.ceil(s), S, 4.0)]))
        edges = edges[(edges >= s) & (edges <= S)]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, err = integrate.quad(lambda y: float(self.g(y)), a, b, epsabs=0.0, epsrel=1e-12, limit=200)
            if not np.isfinite(val) or err > 1e-10 * max(abs(val), 1e-300) + 1e-300:
                raise QuadratureError(f"{self.name}: tail quadrature on [{a}, {b}] err={err:.3e}")
            total += val
        if self.exp_bound is not None:
            # remaining mass bounded by g(S)/omega_g
            total += float(self.g(S)) / self.exp_bound[1]
        return total

    def spec(self) -> dict:
        raise NotImplementedError


class ZeroKernel(MemoryKernel):
    """The null kernel ``g = 0`` (plain MGT equation)."""

    name = "zero"
    g3_rate = 0.0
    exp_bound = (0.0, 1.0)

    def g(self, s):
        return _scalar_or_array(np.zeros_like(_asarray(s)), s)

    gp = g
    gpp = g

    @property
    def is_zero(self) -> bool:
        return True

    @property
    def mass_kappa(self) -> float:
        return 0.0

    def tail_G(self, s):
        return self.g(s)

    def truncation_point(self, rel: float = 1e-14) -> float:
        return 1.0

    def spec(self) -> dict:
        return {"type": "zero"}


class ExponentialKernel(MemoryKernel):
    """``g(s) = k exp(-nu s)``."""

    name = "exponential"
    g3_rate = 0.0

    def __init__(self, k: float, nu: float):
        if not (k > 0 and nu > 0):
            raise KernelError(f"exponential kernel needs k > 0 and nu > 0, got k={k}, nu={nu}")
        self.k = float(k)
        self.nu = float(nu)
        self.exp_bound = (self.k, self.nu)

    def g(self, s):
        return self.k * np.exp(-self.nu * _asarray(s)) if np.ndim(s) else self.k * math.exp(-self.nu * s)

    def gp(self, s):
        return -self.nu * self.g(s)

    def gpp(self, s):
        return self.nu**2 * self.g(s)

    def log_g(self, s):
        return math.log(self.k) - self.nu * _asarray(s)

    def log_neg_gp(self, s):
        return math.log(self.k * self.nu) - self.nu * _asarray(s)

    def gpp_over_gp(self, s):
        return np.full_like(_asarray(s), -self.nu)

    @property
    def mass_kappa(self) -> float:
        return self.k / self.nu

    def tail_G(self, s):
        return self.g(s) / self.nu

    def truncation_point(self, rel: float = 1e-14) -> float:
        return -math.log(rel) / self.nu

    def spec(self) -> dict:
        return {"type": "exponential", "k": self.k, "nu": self.nu}


class OscillatingKernel(MemoryKernel):
    """Nonconvex kernel ``g(s) = exp(-s) [148 + 6 cos 6s + sin 6s] / 37``.

    ``g'`` oscillates for all ``s`` but ``g' - g'' <= 0``, so the curvature condition holds with
    ``alpha - delta = 1``.  The exact infimum of admissible rates is
    ``sqrt(12/5) - 1``.
    """

    name = "oscillating"
    g3_rate = math.sqrt(12.0 / 5.0) - 1.0
    exp_bound = ((148.0 + math.sqrt(37.0)) / 37.0, 1.0)

    def __init__(self):
        # the mass goes through quadrature; tail_G uses the closed form
        val, _ = integrate.quad(self.g, 0.0, 50.0, epsabs=0.0, epsrel=1e-13, limit=400)
        self._kappa = val + self.tail_G(50.0)

    def g(self, s):
        s = _asarray(s)
        out = np.exp(-s) * (148.0 + 6.0 * np.cos(6.0 * s) + np.sin(6.0 * s)) / 37.0
        return out if out.ndim else float(out)

    def gp(self, s):
        s = _asarray(s)
        out = -np.exp(-s) * (4.0 + np.sin(6.0 * s))
        return out if out.ndim else float(out)

    def gpp(self, s):
        s = _asarray(s)
        out = np.exp(-s) * (4.0 + np.sin(6.0 * s) - 6.0 * np.cos(6.0 * s))
        return out if out.ndim else float(out)

    @property
    def mass_kappa(self) -> float:
        return self._kappa

    def tail_G(self, s):
        s = _asarray(s)
        out = np.exp(-s) * (148.0 + (12.0 * np.cos(6.0 * s) - 35.0 * np.sin(6.0 * s)) / 37.0) / 37.0
        return out if out.ndim else float(out)

    def truncation_point(self, rel: float = 1e-14) -> float:
        return -math.log(rel / 2.0)

    def spec(self) -> dict:
        return {"type": "oscillating"}


class StaircaseKernel(MemoryKernel):
    """Nonconvex kernel violating ``g' + delta g <= 0`` for every ``delta > 0``.

    ``g(s) = int_s^inf f`` where the density ``f`` is

    * ``eps_n (1 + s - n^2)`` on ``I_n = [n^2, n^2 + n + 1]``, ``2 <= n <= n_max``,
      with ``eps_n = exp(-(n^2 + n + 1)) / (n + 2)``;
    * log-linear (a pure exponential) between consecutive intervals and on
      ``[0, 4]``, matched for continuity at both ends;
    * ``exp(-s)`` beyond the last interval.

    ``f(n^2 + n + 1) = exp(-(n^2 + n + 1))`` exactly, so ``0 < f <= exp(-s)``
    everywhere.  All evaluations are done in log scale.
    """

    name = "staircase"
    g3_rate = 1.0
    exp_bound = (1.0, 1.0)

    # piece kinds
    _EXP, _LIN, _TAIL = 0, 1, 2

    def __init__(self, n_max: int = 20):
        n_max = int(n_max)
        if n_max < 2:
            raise KernelError(f"staircase kernel needs n_max >= 2, got {n_max}")
        self.n_max = n_max
        starts, ends, kinds, c0, c1 = [], [], [], [], []

        def log_eps(n):
            return -(n * n + n + 1) - math.log(n + 2)

        # [0, 4]: log f from 0 down to log eps_2
        starts.append(0.0), ends.append(4.0), kinds.append(self._EXP)
        c0.append(0.0), c1.append(log_eps(2) / 4.0)
        for n in range(2, n_max + 1):
            a, b = float(n * n), float(n * n + n + 1)
            starts.append(a), ends.append(b), kinds.append(self._LIN)
            c0.append(log_eps(n)), c1.append(float(n))
            if n < n_max:
                a2 = float((n + 1) ** 2)
                slope = (log_eps(n + 1) + b) / (a2 - b)
                starts.append(b), ends.append(a2), kinds.append(self._EXP)
                c0.append(-b - slope * b), c1.append(slope)
        b_last = float(n_max * n_max + n_max + 1)
        starts.append(b_last), ends.append(np.inf), kinds.append(self._TAIL)
        c0.append(0.0), c1.append(-1.0)

        self._a = np.array(starts)
        self._b = np.array(ends)
        self._kind = np.array(kinds)
        self._c0 = np.array(c0)  # EXP: log f = c0 + c1 s; LIN: log eps_n, n
        self._c1 = np.array(c1)
        self.breakpoints = tuple(float(x) for x in self._a[1:])
        full = np.array([self._log_piece_integral(p, self._a[p]) for p in range(len(self._a))])
        # log of int_{a_{p+1}}^inf f
        after = np.full(len(full), -np.inf)
        for p in range(len(full) - 2, -1, -1):
            after[p] = np.logaddexp(after[p + 1], full[p + 1])
        self._log_after = after
        self._kappa = self._tail_moment(0.0)

    @staticmethod
    def log_eps(n: int) -> float:
        return -(n * n + n + 1) - math.log(n + 2)

    def intervals(self):
        """The intervals ``I_n`` as ``(n, start, end)`` triples."""
        return [(n, float(n * n), float(n * n + n + 1)) for n in range(2, self.n_max + 1)]

    def _piece(self, s):
        return np.clip(np.searchsorted(self._a, s, side="right") - 1, 0, len(self._a) - 1)

    def _log_f_piece(self, p, s):
        kind = self._kind[p]
        if kind == self._LIN:
            n = self._c1[p]
            with np.errstate(divide="ignore"):
                return self._c0[p] + np.log1p(s - n * n)
        return self._c0[p] + self._c1[p] * s

    def _log_piece_integral(self, p, s):
        """log of int_s^{b_p} f for s inside piece p."""
        kind, b = self._kind[p], self._b[p]
        if kind == self._TAIL:
            return -s
        if kind == self._LIN:
            n = self._c1[p]
            x = 1.0 + s - n * n
            val = (n + 2.0) ** 2 - x * x
            with np.errstate(divide="ignore"):
                return self._c0[p] + np.log(np.maximum(val, 0.0)) - math.log(2.0)
        m = self._c1[p]
        with np.errstate(divide="ignore"):
            return self._c0[p] + m * s + np.log(-np.expm1(m * (b - s))) - np.log(-m)

    def log_f(self, s):
        s_arr = _asarray(s)
        flat = s_arr.ravel()
        pieces = self._piece(flat)
        out = np.empty_like(flat)
        for p in np.unique(pieces):
            mask = pieces == p
            out[mask] = self._log_f_piece(p, flat[mask])
        return out.reshape(s_arr.shape)

    def log_g(self, s):
        s_arr = _asarray(s)
        flat = s_arr.ravel()
        pieces = self._piece(flat)
        out = np.empty_like(flat)
        for p in np.unique(pieces):
            mask = pieces == p
            out[mask] = np.logaddexp(self._log_piece_integral(p, flat[mask]), self._log_after[p])
        return out.reshape(s_arr.shape)

    log_neg_gp = log_f

    def f(self, s):
        return np.exp(self.log_f(s))

    def g(self, s):
        out = np.exp(self.log_g(s))
        return _scalar_or_array(out, s)

    def gp(self, s):
        return _scalar_or_array(-np.exp(self.log_f(s)), s)

    def log_dlogf(self, s):
        """Logarithmic derivative ``f'/f`` (right-sided at breakpoints)."""
        s_arr = _asarray(s)
        flat = s_arr.ravel()
        pieces = self._piece(flat)
        out = np.empty_like(flat)
        for p in np.unique(pieces):
            mask = pieces == p
            if self._kind[p] == self._LIN:
                n = self._c1[p]
                out[mask] = 1.0 / (1.0 + flat[mask] - n * n)
            else:
                out[mask] = self._c1[p]
        return out.reshape(s_arr.shape)

    def gpp_over_gp(self, s):
        # g'' / g' = (-f') / (-f) = f'/f
        return self.log_dlogf(s)

    def gpp(self, s):
        # g'' = -f' = -(f'/f) f
        return _scalar_or_array(-self.log_dlogf(s) * np.exp(self.log_f(s)), s)

    def _tail_moment(self, s: float) -> float:
        """``int_s^inf (y - s) f(y) dy``, exact piecewise."""
        total = 0.0
        for p in range(len(self._a)):
            a, b = max(self._a[p], s), self._b[p]
            if b <= s:
                continue
            kind = self._kind[p]
            if kind == self._TAIL:
                # int_a^inf (y - s) e^{-y} dy
                total += (a - s + 1.0) * math.exp(-a)
            elif kind == self._LIN:
                n = self._c1[p]
                eps = math.exp(self._c0[p])
                # f = eps (1 - n^2 + y)
                c = 1.0 - n * n

                def prim(y):
                    return eps * (y**3 / 3.0 + (c - s) * y**2 / 2.0 - c * s * y)

                total += prim(b) - prim(a)
            else:
                c0, m = self._c0[p], self._c1[p]

                def prim(y):
                    return math.exp(c0 + m * y) * ((y - s) / m - 1.0 / (m * m))

                total += prim(b) - prim(a)
        return total

    @property
    def mass_kappa(self) -> float:
        return self._kappa

    def tail_G(self, s):
        s_arr = _asarray(s)
        out = np.array([self._tail_moment(float(x)) for x in s_arr.ravel()]).reshape(s_arr.shape)
        return _scalar_or_array(out, s)

    def truncation_point(self, rel: float = 1e-14) -> float:
        return float(self._a[-1]) + 40.0

    def spec(self) -> dict:
        return {"type": "staircase", "n_max": self.n_max}


class ScaledKernel(MemoryKernel):
    """``c * base`` for a constant ``c > 0``."""

    def __init__(self, base: MemoryKernel, c: float):
        if not c > 0:
            raise KernelError(f"scale must be positive, got {c}")
        self.base = base
        self.c = float(c)
        self.name = f"{base.name}*{self.c:g}"
        self.g3_rate = base.g3_rate
        self.breakpoints = base.breakpoints
        if base.exp_bound is not None:
            self.exp_bound = (self.c * base.exp_bound[0], base.exp_bound[1])

    def g(self, s):
        return self.c * self.base.g(s)

    def gp(self, s):
        return self.c * self.base.gp(s)

    def gpp(self, s):
        return self.c * self.base.gpp(s)

    def log_g(self, s):
        return math.log(self.c) + self.base.log_g(s)

    def log_neg_gp(self, s):
        return math.log(self.c) + self.base.log_neg_gp(s)

    def gpp_over_gp(self, s):
        return self.base.gpp_over_gp(s)

    @property
    def mass_kappa(self) -> float:
        return self.c * self.base.mass_kappa

    def tail_G(self, s):
        return self.c * self.base.tail_G(s)

    def truncation_point(self, rel: float = 1e-14) -> float:
        return self.base.truncation_point(rel)

    def spec(self) -> dict:
        out = dict(self.base.spec())
        out["scale"] = self.c * out.get("scale", 1.0)
        return out


class CustomKernel(MemoryKernel):
    """Kernel from user callables; the mass is obtained by quadrature."""

    def __init__(self, g, gp, gpp, breakpoints=(), exp_bound=None, g3_rate=None, name="custom"):
        self._g, self._gp, self._gpp = g, gp, gpp
        self.breakpoints = tuple(breakpoints)
        self.exp_bound = exp_bound
        self.g3_rate = g3_rate
        self.name = name
        self._kappa = None

    def g(self, s):
        return self._g(s)

    def gp(self, s):
        return self._gp(s)

    def gpp(self, s):
        return self._gpp(s)

    @property
    def mass_kappa(self) -> float:
        if self._kappa is None:
            self._kappa = self._tail_quad(0.0)
        return self._kappa

    def spec(self) -> dict:
        return {"type": "custom", "name": self.name}


class TabulatedKernel(MemoryKernel):
    """Kernel interpolated from samples ``(s_i, g_i)`` by a monotone cubic.

    Beyond the last sample ``g`` continues as an exponential whose rate is
    read off the last two samples (zero if they do not decay).
    """

    name = "tabulated"

    def __init__(self, s, g, path=None):
        s = _asarray(s)
        g = _asarray(g)
        if s.ndim != 1 or s.size < 2 or s.shape != g.shape:
            raise KernelError("tabulated kernel needs at least two (s, g) samples")
        if np.any(np.diff(s) <= 0) or s[0] < 0:
            raise KernelError("tabulated s values must be nonnegative and strictly increasing")
        if np.any(g < 0):
            raise KernelError("tabulated g values must be nonnegative")
        self.path = path
        self._s, self._gv = s, g
        self._interp = PchipInterpolator(s, g, extrapolate=True)
        self._d1 = self._interp.derivative(1)
        self._d2 = self._interp.derivative(2)
        self._anti = self._interp.antiderivative()
        s_end, g_end = s[-1], g[-1]
        if g[-2] > 0 and g_end > 0 and g_end < g[-2]:
            self._tail_rate = math.log(g[-2] / g_end) / (s[-1] - s[-2])
        else:
            self._tail_rate = 0.0
        self.breakpoints = tuple(float(x) for x in s[1:-1])
        self._kappa = float(self._anti(s_end) - self._anti(0.0)) + self._tail_mass(s_end)

    def _tail_mass(self, s):
        g_end = self._gv[-1]
        if g_end == 0.0:
            return 0.0
        if self._tail_rate <= 0:
            raise KernelError("tabulated kernel does not decay at its last sample; mass is infinite")
        return g_end * math.exp(-self._tail_rate * (s - self._s[-1])) / self._tail_rate

    def _split(self, s):
        s = _asarray(s)
        return s, s > self._s[-1]

    def g(self, s):
        s_arr, tail = self._split(s)
        out = np.where(tail, self._gv[-1] * np.exp(-self._tail_rate * (s_arr - self._s[-1])), self._interp(np.minimum(s_arr, self._s[-1])))
        return _scalar_or_array(out, s)

    def gp(self, s):
        s_arr, tail = self._split(s)
        out = np.where(tail, -self._tail_rate * self.g(s_arr), self._d1(np.minimum(s_arr, self._s[-1])))
        return _scalar_or_array(out, s)

    def gpp(self, s):
        s_arr, tail = self._split(s)
        out = np.where(tail, self._tail_rate**2 * self.g(s_arr), self._d2(np.minimum(s_arr, self._s[-1])))
        return _scalar_or_array(out, s)

    @property
    def mass_kappa(self) -> float:
        return self._kappa

    def tail_G(self, s):
        s_arr = _asarray(s)
        inside = np.minimum(s_arr, self._s[-1])
        body = self._anti(self._s[-1]) - self._anti(inside)
        tail = np.array([self._tail_mass(max(float(x), self._s[-1])) for x in s_arr.ravel()]).reshape(s_arr.shape)
        return _scalar_or_array(np.where(s_arr > self._s[-1], 0.0, body) + tail, s)

    def truncation_point(self, rel: float = 1e-14) -> float:
        if self._tail_rate <= 0:
            return float(self._s[-1])
        return float(self._s[-1]) - math.log(rel) / self._tail_rate

    @classmethod
    def from_csv(cls, path) -> "TabulatedKernel":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["s", "g"]:
                raise KernelError(f"{path}: expected CSV header 's,g'")
            rows = [(float(r["s"]), float(r["g"])) for r in reader]
        s, g = zip(*rows) if rows else ((), ())
        return cls(np.array(s), np.array(g), path=str(path))

    def spec(self) -> dict:
        return {"type": "tabulated", "path": self.path}


def make_exponential(k: float, nu: float) -> ExponentialKernel:
    return ExponentialKernel(k, nu)


def make_oscillating() -> OscillatingKernel:
    return OscillatingKernel()


def make_staircase(n_max: int = 20) -> StaircaseKernel:
    return StaircaseKernel(n_max)


def tail_integral(kernel: MemoryKernel, s):
    """``G(s) = int_s^inf g(y) dy``."""
    if np.any(_asarray(s) < 0):
        raise KernelError("tail integral needs s >= 0")
    return kernel.tail_G(s)


def kernel_from_spec(spec: dict, base_dir=None) -> MemoryKernel:
    """Build a kernel from a config mapping such as ``{"type": "exponential", "k": 1, "nu": 1}``.

    Every type accepts an optional positive ``scale`` multiplier.
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise KernelError(f"kernel spec must be a mapping with a 'type' key, got {spec!r}")
    kind = spec["type"]
    if kind in ("zero", "none"):
        kernel: MemoryKernel = ZeroKernel()
    elif kind == "exponential":
        try:
            kernel = ExponentialKernel(float(spec["k"]), float(spec["nu"]))
        except KeyError as exc:
            raise KernelError(f"exponential kernel spec missing {exc}") from None
    elif kind == "oscillating":
        kernel = OscillatingKernel()
    elif kind == "staircase":
        kernel = StaircaseKernel(int(spec.get("n_max", 20)))
    elif kind == "tabulated":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        kernel = TabulatedKernel.from_csv(path)
    else:
        raise KernelError(f"unknown kernel type {kind!r}")
    scale = spec.get("scale")
    if scale is not None and float(scale) != 1.0:
        if kernel.is_zero:
            return kernel
        kernel = ScaledKernel(kernel, float(scale))
    return kernel
