"""Energy functionals along a computed trajectory, with dissipation checks and decay fits.

Two evaluation paths exist on purpose:

* :func:`energy_series` evaluates every functional at every grid time.  History
  integrals use product weights (the weight function is integrated exactly on
  each history cell against hat functions) and the part of ``eta^t`` beyond
  ``s = t`` is handled through moments of the cutoff profile.
* The single-time functions (:func:`energy_E`, :func:`energy_E_rho`,
  :func:`functional_F_rho`, :func:`auxiliary_functionals`) build the history
  ``eta^t`` explicitly with :func:`~mgtmem.volterra_solver.eta_at` and integrate
  it with the plain trapezoidal rule of :mod:`mgtmem.memory_space`.

They agree to second order in ``dt``, which the tests use as a cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import MemoryKernel, ZeroKernel
from .memory_space import HistoryFunction, m_norm_sq, weighted_trapezoid
from .spectral_model import Regime, RegimeError, classify_regime, inner, norm_sq, stability_number
from .volterra_solver import RhoCutoff, Trajectory, cutoff_moment, eta_at, Q_rho_grid


class FitError(ValueError):
    """Decay fit on a series that is not strictly positive."""


class PreconditionError(ValueError):
    """Kernel lacks a certified exponential bound."""


_GX, _GW = np.polynomial.legendre.leggauss(8)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW


class TailTable:
    """Fast ``G(s) = int_s^inf g`` for ``0 <= s <= s_max`` from cumulative cell integrals."""

    def __init__(self, kernel: MemoryKernel, s_max: float, h: float = 1e-2):
        self.kernel = kernel
        self.h = h
        n = int(math.ceil(s_max / h)) + 1
        nodes = (np.arange(n)[:, None] + _GX[None, :]) * h
        cell = h * np.asarray(kernel.g(nodes), float) @ _GW
        self.kappa = float(kernel.mass_kappa)
        self._G = self.kappa - np.concatenate([[0.0], np.cumsum(cell)])
        self.s_max = n * h

    def __call__(self, s):
        s = np.asarray(s, float)
        flat = s.ravel()
        if np.any(flat > self.s_max):
            raise ValueError("TailTable queried beyond its range")
        j = np.minimum(np.floor(flat / self.h).astype(int), self._G.size - 2)
        left = j * self.h
        width = flat - left
        pts = left[:, None] + width[:, None] * _GX[None, :]
        partial = width * (np.asarray(self.kernel.g(pts), float) @ _GW)
        return np.maximum(self._G[j] - partial, 0.0).reshape(s.shape)


def _hat_weights(fn, dt: float, n: int):
    """Cell integrals of ``fn`` against hat functions on the grid ``k dt``.

    Returns ``(omega, A)``: ``omega[k]`` is the full weight of node ``k`` and
    ``A[j]`` the share of cell ``j`` belonging to its left node, so that
    ``int_0^{m dt} fn f = sum_{k<=m} omega[k] f[k] - A[m] f[m]``.
    """
    s = (np.arange(n + 1)[:, None] + _GX[None, :]) * dt
    vals = np.asarray(fn(s), float).reshape(s.shape)
    A = dt * vals @ (_GW * (1.0 - _GX))
    B = dt * vals @ (_GW * _GX)
    omega = A.copy()
    omega[1:] += B[:-1]
    return omega, A


def _toeplitz_sums(omega, A, X):
    """``out[n] = sum_{k<=n} omega[k] X[n-k] - A[n] X[0]`` for every ``n``."""
    n1 = X.shape[0]
    rev = omega[:n1][::-1].copy()
    out = np.empty_like(X)
    for n in range(n1):
        out[n] = rev[n1 - 1 - n :] @ X[: n + 1]
    out -= A[:n1, None] * X[0]
    return out


class _HistoryIntegrals:
    """Integrals ``int_0^inf h(s) ...`` over ``eta^t`` for all grid times at once."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self.U = traj.U
        self.lam = traj.lam
        self.t = traj.times
        self.n = traj.n_steps
        self.rho = traj.rho
        self.u0 = traj.U[0]
        self.u_sq = norm_sq(self.U, self.lam, 1)
        self.cross0 = inner(self.U, self.u0, self.lam, 1)
        self.u0_sq = float(norm_sq(self.u0, self.lam, 1))
        # [U, U^2] stacked so one Toeplitz pass serves both
        self._X = np.hstack([self.U, self.U**2])

    def _parts(self, fn):
        omega, A = _hat_weights(fn, self.traj.dt, self.n)
        sums = _toeplitz_sums(omega, A, self._X)
        m = self.lam.size
        S = np.cumsum(omega)[: self.n + 1] - A[: self.n + 1]
        return S, sums[:, :m], sums[:, m:]

    def _tail(self, fn, H_t):
        """``int_t^inf h(s) ||u(t) - phi(s - t) u0||_1^2 ds``."""
        out = self.u_sq * H_t
        if self.rho > 0 and self.u0_sq > 0:
            out = out - 2.0 * self.cross0 * cutoff_moment(fn, self.t, self.rho, 1)
            out = out + self.u0_sq * cutoff_moment(fn, self.t, self.rho, 2)
        return out

    def sq(self, fn, H_t, history_only=False):
        """``int_0^inf h(s) ||eta^t(s)||_1^2 ds`` (or only over ``[0, t]``)."""
        S, C1, C2 = self._parts(fn)
        lam = self.lam
        hist = self.u_sq * S - 2.0 * np.sum(lam * self.U * C1, axis=1) + C2 @ lam
        return hist if history_only else hist + self._tail(fn, H_t)

    def linear(self, fn, H_t, Q_t):
        """``int_0^inf h(s) eta^t(s) ds`` per mode."""
        S, C1, _ = self._parts(fn)
        return self.U * (S + H_t)[:, None] - C1 - Q_t[:, None] * self.u0[None, :]

    def squared_history_values(self, fn):
        """``int_0^t h(s) ||u(t - s)||_1^2 ds``."""
        _, _, C2 = self._parts(fn)
        return C2 @ self.lam


@dataclass
class EnergySeries:
    times: np.ndarray
    E: np.ndarray
    E_rho: np.ndarray
    F_rho: np.ndarray
    Psi1: np.ndarray
    Psi2: np.ndarray
    Psi: np.ndarray
    Theta: np.ndarray
    Lambda: np.ndarray
    M_eta: np.ndarray
    g_eta: np.ndarray
    dissipation_rhs: np.ndarray
    v_sq: np.ndarray
    dt: float
    ds: float
    rho: float
    epsilon: float | None
    omega_g: float | None
    meta: dict = field(default_factory=dict)

    CSV_COLUMNS = ("t", "E", "E_rho", "F_rho", "Psi1", "Psi2", "Theta", "Lambda")

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name not in self.CSV_COLUMNS and name not in ("Psi", "M_eta", "g_eta"):
            raise KeyError(f"unknown field {name!r}")
        return getattr(self, name)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            cols = [self.column(c) for c in self.CSV_COLUMNS]
            for row in zip(*cols):
                w.writerow(["%.17g" % x for x in row])


def _exp_rate(kernel: MemoryKernel, omega_g: float | None) -> float | None:
    if omega_g is not None:
        return float(omega_g)
    if kernel.exp_bound is not None:
        return float(kernel.exp_bound[1])
    return None


def theta_series(times, u_sq, omega_g: float) -> np.ndarray:
    """``Theta(t) = int_0^t exp(-omega_g (t - s)) ||u(s)||_1^2 ds`` by the trapezoidal rule."""
    out = np.zeros_like(u_sq)
    if times.size < 2:
        return out
    dt = times[1] - times[0]
    e = math.exp(-omega_g * dt)
    for i in range(1, u_sq.size):
        out[i] = e * out[i - 1] + 0.5 * dt * (e * u_sq[i - 1] + u_sq[i])
    return out


def choose_epsilon(E_rho, F_rho, Psi, Theta, E_rho0_decay, k_max: int = 60):
    """Largest ``2^-k`` with ``eps E_rho <= F_rho + eps Psi <= 2 F_rho + E_rho(0) e^{-w t} + Theta``."""
    for k in range(k_max + 1):
        eps = 2.0**-k
        lam = F_rho + eps * Psi
        scale = np.maximum(np.abs(E_rho), 1e-300)
        lower = np.all(eps * E_rho <= lam + 1e-12 * scale)
        upper = np.all(lam <= 2.0 * F_rho + E_rho0_decay + Theta + 1e-12 * scale)
        if lower and upper:
            return eps
    return None


def energy_series(traj: Trajectory, omega_g: float | None = None, epsilon: float | None = None) -> EnergySeries:
    """All functionals at every grid time of ``traj``.

    ``E_rho`` of an unregularized run (``rho = 0``) is the formal limit
    ``E(t) + g(t) ||u(t)||_1^2``.  ``Theta``, ``Psi`` and ``Lambda`` need a
    decay rate ``omega_g`` for the kernel (taken from the kernel when omitted);
    without one they are NaN.
    """
    p, kernel, lam = traj.params, traj.kernel, traj.lam
    U, V, W, t = traj.U, traj.V, traj.W, traj.times
    a = p.alpha
    kappa = float(kernel.mass_kappa)
    stab = stability_number(p)
    u_sq = norm_sq(U, lam, 1)
    v_sq = norm_sq(V, lam, 1)
    w_sq = norm_sq(W, lam, 0)
    inst = u_sq + v_sq + w_sq
    n1 = t.size

    if kernel.is_zero:
        zeros = np.zeros(n1)
        hist_M = M_eta = g_eta = D = zeros
        g_eta_vec = np.zeros_like(U)
        G_t = zeros
    else:
        hi = _HistoryIntegrals(traj)
        tails = TailTable(kernel, traj.T + traj.rho + 1.0, h=min(1e-2, max(traj.dt, 1e-4)))
        neg_gp = lambda s: -np.asarray(kernel.gp(s), float)
        g_t = np.asarray(kernel.g(t), float)
        gp_t = np.asarray(kernel.gp(t), float)
        G_t = tails(t)
        hist_M = hi.sq(neg_gp, g_t, history_only=True)
        M_eta = hi.sq(neg_gp, g_t)
        g_eta = hi.sq(kernel.g, G_t)
        diss_fn = lambda s: a * np.asarray(kernel.gp(s), float) - np.asarray(kernel.gpp(s), float)
        D = hi.sq(diss_fn, -a * g_t + gp_t)
        Q_t = Q_rho_grid(kernel, traj.cutoff, t)
        g_eta_vec = hi.linear(kernel.g, G_t, Q_t)

    E = inst + hist_M
    E_rho = inst + M_eta
    F_rho = ((p.gamma - kappa) / a) * norm_sq(V + a * U, lam, 1) \
        + ((stab * a + kappa) / a) * v_sq + norm_sq(W + a * V, lam, 0) \
        + M_eta + a * g_eta + 2.0 * np.sum(lam * g_eta_vec * V, axis=1)

    Psi1 = -inner(V - a * U, W + a * V, lam, 0)
    w_g = _exp_rate(kernel, omega_g)
    if w_g is None:
        nan = np.full(n1, np.nan)
        Psi2 = Psi = Theta = Lambda = nan
        eps = None
    else:
        if kernel.is_zero:
            Psi2 = np.zeros(n1)
        else:
            hist = hi.squared_history_values(tails)
            tail = hi.u0_sq * cutoff_moment(tails, t, traj.rho, 2) if traj.rho > 0 else 0.0
            Psi2 = 0.5 * a * (hist + tail)
        Psi = Psi1 + Psi2
        Theta = theta_series(t, u_sq, w_g)
        decay0 = E_rho[0] * np.exp(-w_g * t)
        eps = epsilon if epsilon is not None else choose_epsilon(E_rho, F_rho, Psi, Theta, decay0)
        Lambda = F_rho + (eps if eps is not None else np.nan) * Psi

    meta = {"kappa": kappa, "stability_number": stab, "quadrature": traj.quadrature, "n_steps": traj.n_steps}
    return EnergySeries(t.copy(), E, E_rho, F_rho, Psi1, Psi2, Psi, Theta, Lambda, M_eta, g_eta, D, v_sq,
                        traj.dt, traj.dt, traj.rho, eps, w_g, meta)


# ---------------------------------------------------------------------------
# single-time evaluation through explicit histories


def _explicit_history(traj: Trajectory, t: float):
    """``eta^t`` on a grid covering ``[0, t + rho]`` and the breakpoints of the run."""
    n = traj.index(t)
    t = n * traj.dt
    pieces = [np.arange(n + 1) * traj.dt]
    if traj.rho > 0:
        m = max(16, int(math.ceil(0.5 * traj.rho / traj.dt)))
        pieces.append(np.linspace(t, t + 0.5 * traj.rho, m + 1)[1:])
        pieces.append(np.linspace(t + 0.5 * traj.rho, t + traj.rho, m + 1)[1:])
    s = np.concatenate(pieces)
    if s.size < 2:
        s = np.array([0.0, traj.dt])
    eta = HistoryFunction(s, eta_at(traj, t, s), traj.lam)
    return n, eta


def _instant(traj, n):
    lam = traj.lam
    return (float(norm_sq(traj.U[n], lam, 1)), float(norm_sq(traj.V[n], lam, 1)), float(norm_sq(traj.W[n], lam, 0)))


def energy_E(traj: Trajectory, t: float) -> float:
    """Norms at ``t`` plus ``int_0^t -g'(s) ||u(t) - u(t - s)||_1^2 ds`` (trapezoidal rule on the history grid)."""
    n = traj.index(t)
    val = sum(_instant(traj, n))
    if n == 0 or traj.kernel.is_zero:
        return val
    s = np.arange(n + 1) * traj.dt
    diff = traj.U[n] - traj.U[n::-1]
    sq = diff**2 @ traj.lam
    return val + weighted_trapezoid(lambda x: -np.asarray(traj.kernel.gp(x)), sq, s, traj.kernel.breakpoints)


def energy_E_rho(traj: Trajectory, t: float) -> float:
    """Norms at ``t`` plus ``||eta^t||_M^2`` for a regularized run."""
    if traj.rho <= 0:
        raise RegimeError("energy_E_rho needs a regularized run (rho > 0); use energy_E plus g(t)||u(t)||_1^2")
    n, eta = _explicit_history(traj, t)
    return sum(_instant(traj, n)) + m_norm_sq(traj.kernel, eta, constant_tail=True)


def _require_subcritical(traj):
    info = classify_regime(traj.params, traj.kernel)
    if info.regime is not Regime.SUBCRITICAL:
        raise RegimeError(f"functional defined for the subcritical regime only (stability number {info.stability_number:.3g})")


def functional_F_rho(traj: Trajectory, t: float) -> float:
    _require_subcritical(traj)
    p, k, lam = traj.params, traj.kernel, traj.lam
    n, eta = _explicit_history(traj, t)
    a = p.alpha
    kappa = float(k.mass_kappa)
    u, v, w = traj.U[n], traj.V[n], traj.W[n]
    val = ((p.gamma - kappa) / a) * float(norm_sq(v + a * u, lam, 1)) \
        + ((stability_number(p) * a + kappa) / a) * float(norm_sq(v, lam, 1)) + float(norm_sq(w + a * v, lam, 0))
    if k.is_zero:
        return val
    s_end = eta.s_max
    G_end = float(k.tail_G(s_end))
    val += m_norm_sq(k, eta, constant_tail=True)
    sq = eta.sq_norms()
    val += a * (weighted_trapezoid(k.g, sq, eta.s_grid, k.breakpoints) + G_end * float(norm_sq(u, lam, 1)))
    lin = np.array([weighted_trapezoid(k.g, eta.values[:, j], eta.s_grid, k.breakpoints) for j in range(lam.size)])
    lin += G_end * u
    return val + 2.0 * float(inner(lin, v, lam, 1))


def auxiliary_functionals(traj: Trajectory, t: float, omega_g: float | None = None):
    """``(Psi1, Psi2, Psi, Theta)`` at ``t``."""
    w_g = _exp_rate(traj.kernel, omega_g)
    if w_g is None:
        raise PreconditionError("kernel has no certified exponential bound; pass omega_g from an audit")
    p, k, lam = traj.params, traj.kernel, traj.lam
    a = p.alpha
    n, eta = _explicit_history(traj, t)
    u, v, w = traj.U[n], traj.V[n], traj.W[n]
    psi1 = -float(inner(v - a * u, w + a * v, lam, 0))
    if k.is_zero:
        psi2 = 0.0
    else:
        tails = TailTable(k, eta.s_max + 1.0, h=1e-3)
        shifted = (eta.values - u) ** 2 @ lam
        psi2 = 0.5 * a * weighted_trapezoid(tails, shifted, eta.s_grid, k.breakpoints)
    u_sq = norm_sq(traj.U[: n + 1], lam, 1)
    s = traj.times[: n + 1]
    theta = float(np.trapezoid(np.exp(-w_g * (s[-1] - s)) * u_sq, s)) if n else 0.0
    return psi1, psi2, psi1 + psi2, theta


# ---------------------------------------------------------------------------
# dissipation


@dataclass
class DissipationReport:
    margins: np.ndarray
    identity_residual: np.ndarray
    C: float
    allowance: float
    ok: bool
    monotone_ok: bool
    max_margin: float
    max_F_increase_rate: float
    delta: float

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in ("margins", "identity_residual")}


def check_dissipation(traj: Trajectory, delta: float | None = None, series: EnergySeries | None = None) -> DissipationReport:
    """Central-difference margins of ``F' + 2 stab alpha ||v||_1^2 + delta ||eta||_M^2 <= 0``.

    The discretization allowance is ``C (dt + ds)``, where ``C`` is measured
    from how far the computed series miss the exact balance law
    ``F' + 2 stab alpha ||v||_1^2 = int (alpha g' - g'') ||eta||_1^2``.
    """
    _require_subcritical(traj)
    p, kernel = traj.params, traj.kernel
    if delta is None:
        delta = kernel.delta_g3(p.alpha) if not kernel.is_zero else 0.5 * p.alpha
    if delta is None or not (0 <= delta < p.alpha):
        raise PreconditionError("no admissible delta for this kernel")
    es = series if series is not None else energy_series(traj)
    dt = traj.dt
    if traj.n_steps < 2:
        empty = np.zeros(0)
        return DissipationReport(empty, empty, 0.0, 0.0, True, True, 0.0, 0.0, float(delta))
    dF = (es.F_rho[2:] - es.F_rho[:-2]) / (2.0 * dt)
    damping = 2.0 * stability_number(p) * p.alpha * es.v_sq[1:-1]
    margins = dF + damping + delta * es.M_eta[1:-1]
    residual = dF + damping - es.dissipation_rhs[1:-1]
    scale = max(float(np.max(np.abs(es.F_rho))), 1e-300)
    C = float(np.max(np.abs(residual))) / (dt + es.ds)
    allowance = C * (dt + es.ds) + 1e-13 * scale
    rate = np.diff(es.F_rho) / dt
    return DissipationReport(margins, residual, C, allowance, bool(np.all(margins <= allowance)),
                             bool(np.all(rate <= allowance)), float(np.max(margins)), float(np.max(rate)), float(delta))


# ---------------------------------------------------------------------------
# decay fits


@dataclass
class DecayFit:
    M: float
    omega: float
    window: tuple
    residual: float
    valid: bool
    field: str = "E"

    def to_dict(self) -> dict:
        return {"field": self.field, "M": self.M, "omega": self.omega, "window": list(self.window),
                "residual": self.residual, "valid": self.valid}


def _envelope(times, values, direction):
    """Log of the running-max envelope, interpolated linearly between its corners.

    Corners are record values that are also local maxima, so falling flanks
    after a peak do not drag the envelope down.  Also returns the indices of
    the corners that are genuine interior peaks.
    """
    if direction == "future":
        run = np.maximum.accumulate(values[::-1])[::-1]
    else:
        run = np.maximum.accumulate(values)
    peak = np.ones(values.size, bool)
    peak[1:] &= values[1:] >= values[:-1]
    peak[:-1] &= values[:-1] >= values[1:]
    interior = peak.copy()
    interior[0] = interior[-1] = False
    peak[0] = peak[-1] = True
    record = values >= run
    idx = np.nonzero(record & peak)[0]
    return np.interp(times, times[idx], np.log(values[idx])), np.nonzero(record & interior)[0]


def fit_envelope(times, values, window=(0.25, 1.0), direction="future"):
    """Least-squares line through the log envelope on ``[w0 T, w1 T]``; returns ``(slope, intercept, mask)``.

    When the window holds at least two interior peaks it is cut at the last
    one: beyond it the envelope is unknown and the forced end corner would
    bias the slope.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise FitError("series must be finite and strictly positive")
    T = times[-1]
    mask = (times >= window[0] * T - 1e-12) & (times <= window[1] * T + 1e-12)
    if mask.sum() < 2:
        raise FitError("fit window holds fewer than two samples")
    env, peaks = _envelope(times, values, direction)
    peaks = peaks[mask[peaks]]
    if peaks.size >= 2:
        mask &= times <= times[peaks[-1]]
    slope, intercept = np.polyfit(times[mask], env[mask], 1)
    return float(slope), float(intercept), mask


def fit_decay(series, field: str = "E", window=(0.25, 1.0), tolerance: float = 0.05) -> DecayFit:
    """``M, omega`` with ``X(t) <= M X(0) exp(-omega t)`` for the chosen functional.

    ``omega`` is minus the slope of the fitted envelope line on the window;
    ``M`` is the smallest constant (at least 1) making the bound hold on the
    whole series.  The fit is valid when ``omega > 0`` and the series exceeds
    the fitted line by at most ``tolerance`` (relative) on the window.
    """
    if isinstance(series, EnergySeries):
        times, values = series.times, series.column(field)
    else:
        times, values = series
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    slope, intercept, mask = fit_envelope(times, values, window)
    omega = -slope
    omega = 0.0 if abs(omega) < 1e-12 else omega
    line = np.exp(intercept + slope * times[mask])
    residual = float(max(0.0, np.max(values[mask] / line - 1.0)))
    M = float(max(1.0, np.max(values * np.exp(omega * (times - times[0]))) / values[0]))
    return DecayFit(M, float(omega), (float(window[0] * times[-1]), float(window[1] * times[-1])), residual,
                    bool(omega > 0 and residual <= tolerance), field)


def growth_rate(times, values, window=(0.5, 1.0)) -> float:
    """Exponential growth rate of a positive series from its past running-max envelope."""
    slope, _, _ = fit_envelope(times, values, window, direction="past")
    return slope


# ---------------------------------------------------------------------------
# critical regime and cross-run identities


def _critical_F(params, lam, u, v, w):
    a = params.alpha
    return (params.gamma / a) * norm_sq(v + a * u, lam, 1) + norm_sq(w + a * v, lam, 0)


def conserved_F_critical(traj: Trajectory, t: float) -> float:
    """``(gamma/alpha)||v + alpha u||_1^2 + ||w + alpha v||^2``, constant in time when memory is absent and the stability number vanishes."""
    info = classify_regime(traj.params, traj.kernel)
    if not traj.kernel.is_zero or info.regime is not Regime.CRITICAL:
        raise RegimeError("conserved functional needs g = 0 and a vanishing stability number")
    n = traj.index(t)
    return float(_critical_F(traj.params, traj.lam, traj.U[n], traj.V[n], traj.W[n]))


def critical_F_series(traj: Trajectory) -> np.ndarray:
    """The same quantity at every grid time, without the regime check."""
    return _critical_F(traj.params, traj.lam, traj.U, traj.V, traj.W)


def relative_drift(values) -> float:
    values = np.asarray(values, float)
    ref = abs(values[0])
    if ref == 0:
        return float(np.max(np.abs(values)))
    return float(np.max(np.abs(values - values[0])) / ref)


def limit_identity_gaps(traj0: Trajectory, traj_rho: Trajectory, t_list) -> list:
    """``|E_rho(t) - E(t) - g(t) ||u(t)||_1^2|`` with ``E`` from the unregularized run."""
    es0 = energy_series(traj0)
    esr = energy_series(traj_rho)
    out = []
    for t in t_list:
        n0, nr = traj0.index(t), traj_rho.index(t)
        limit = es0.E[n0] + float(traj0.kernel.g(t)) * float(norm_sq(traj0.U[n0], traj0.lam, 1))
        out.append(abs(float(esr.E_rho[nr]) - float(limit)))
    return out


def theta_exchange_check(series: EnergySeries, u_sq, omega: float) -> tuple[bool, float]:
    """Check ``int_0^t e^{omega s} Theta ds <= (omega_g - omega)^-1 int_0^t e^{omega s} ||u||_1^2 ds`` for all ``t``.

    Returns ``(ok, worst_ratio)`` where the ratio is lhs / rhs.
    """
    w_g = series.omega_g
    if w_g is None or not omega < w_g:
        raise PreconditionError("need omega < omega_g")
    t = series.times
    e = np.exp(omega * t)

    def cumtrap(y):
        out = np.zeros_like(y)
        out[1:] = np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))
        return out

    lhs = cumtrap(e * series.Theta)
    rhs = cumtrap(e * np.asarray(u_sq)) / (w_g - omega)
    mask = rhs > 0
    ratio = float(np.max(lhs[mask] / rhs[mask])) if np.any(mask) else 0.0
    return bool(np.all(lhs <= rhs * (1 + 1e-9) + 1e-300)), ratio


def sandwich_constants(series: EnergySeries) -> dict:
    """Run-measured constants of the three two-sided bounds.

    ``C_F``: smallest ``C`` with ``E_rho / C <= F_rho <= C (E_rho + int g ||eta||_1^2)``;
    ``C_Psi``: smallest ``C`` with ``-C E_rho <= Psi <= C (E_rho + E_rho(0) e^{-w t} + Theta)``;
    ``epsilon``: the ``Lambda`` weight.
    """
    E, F = series.E_rho, series.F_rho
    pos = E > 0
    out = {}
    if np.any(F[pos] <= 0):
        out["C_F"] = math.inf
    else:
        out["C_F"] = float(max(np.max(E[pos] / F[pos]), np.max(F[pos] / (E[pos] + series.g_eta[pos]))))
    if series.omega_g is not None and np.all(np.isfinite(series.Psi)):
        upper = E + E[0] * np.exp(-series.omega_g * series.times) + series.Theta
        ratios = np.concatenate([-series.Psi[pos] / E[pos], series.Psi[pos] / upper[pos]])
        out["C_Psi"] = float(np.max(ratios))
    else:
        out["C_Psi"] = None
    out["epsilon"] = series.epsilon
    out["Psi2_min"] = float(np.min(series.Psi2)) if np.all(np.isfinite(series.Psi2)) else None
    return out


def default_omega_g(kernel: MemoryKernel) -> float | None:
    if isinstance(kernel, ZeroKernel):
        return 1.0
    return kernel.exp_bound[1] if kernel.exp_bound is not None else None
