"""Grid-based certification and refutation of kernel hypotheses.

Every check evaluates a pointwise condition on a finite grid and reports
the worst point.  Conditions are normalized by a local scale before being
compared with the tolerance, so equality cases such as ``g' + nu g = 0`` for
the exponential kernel are not flagged by round-off, and kernels whose
values underflow are still audited through their log-scale helpers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

from .kernels import KernelError, MemoryKernel, StaircaseKernel


@dataclass(frozen=True)
class AuditGrid:
    """Strictly increasing positive sample points plus a tolerance."""

    points: np.ndarray
    tolerance: float = 1e-10

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1000:
            raise ValueError(f"audit grid needs at least 1000 points, got {pts.size}")
        if pts[0] <= 0 or np.any(np.diff(pts) <= 0):
            raise ValueError("audit grid must be strictly increasing and positive")
        object.__setattr__(self, "points", pts)

    @classmethod
    def default(cls, kernel: MemoryKernel, n_uniform: int = 20000, extra=(), tolerance: float = 1e-10):
        """Geometric points on (1e-6, 1] joined with a uniform grid up to ``S_max``.

        For staircase kernels the points ``n^2 + tau``, ``tau in {0, 0.5, 1}``
        are always included.
        """
        S = kernel.truncation_point()
        pts = [np.geomspace(1e-6, 1.0, 200), np.linspace(0.0, S, n_uniform)[1:], np.asarray(extra, float)]
        if isinstance(kernel, StaircaseKernel):
            pts.append(staircase_probe_points(kernel))
        pts.append(np.asarray(kernel.breakpoints, float))
        allp = np.unique(np.concatenate(pts))
        return cls(allp[allp > 0], tolerance)

    @classmethod
    def from_csv(cls, path, tolerance: float = 1e-10):
        data = np.loadtxt(path, delimiter=",", ndmin=1, comments="#")
        if data.ndim > 1:
            data = data[:, 0]
        return cls(np.unique(data), tolerance)


def staircase_probe_points(kernel: StaircaseKernel) -> np.ndarray:
    """``n^2 + tau`` for ``tau in {0, 0.5, 1}`` on every interval ``I_n``."""
    return np.array([n * n + tau for n, _, _ in kernel.intervals() for tau in (0.0, 0.5, 1.0)])


@dataclass
class CheckResult:
    ok: bool
    worst_margin: float
    worst_point: float
    raw_margin: float = float("nan")

    def __iter__(self):
        return iter((self.ok, self.worst_margin, self.worst_point))


def _worst(margins, points, tol, raw=None):
    margins = np.asarray(margins, float)
    finite = np.where(np.isnan(margins), -np.inf, margins)
    i = int(np.argmax(finite))
    raw_val = float(raw[i]) if raw is not None else float("nan")
    return CheckResult(bool(finite[i] <= tol), float(finite[i]), float(points[i]), raw_val)


def g3_margins(kernel: MemoryKernel, rate: float, s):
    """``(r g' - g'') / |g'|`` with ``r = alpha - delta``; falls back to raw values where ``g' = 0``."""
    s = np.asarray(s, float)
    ratio = np.asarray(kernel.gpp_over_gp(s), float)
    normalized = ratio - rate
    gp = np.asarray(kernel.gp(s), float)
    gpp = np.asarray(kernel.gpp(s), float)
    raw = rate * gp - gpp
    flat = ~np.isfinite(normalized)
    if np.any(flat):
        scale = np.maximum(np.abs(gp), np.abs(gpp))
        normalized = np.where(flat, raw / np.where(scale > 0, scale, 1.0), normalized)
    return normalized, raw


def check_g3(kernel: MemoryKernel, alpha: float, delta: float, grid: AuditGrid) -> CheckResult:
    """Curvature condition ``(alpha - delta) g'(s) - g''(s) <= 0`` on the grid."""
    if not (0 < delta < alpha):
        raise KernelError(f"curvature audit needs 0 < delta < alpha, got delta={delta}, alpha={alpha}")
    margins, raw = g3_margins(kernel, alpha - delta, grid.points)
    return _worst(margins, grid.points, grid.tolerance, raw)


def dafermos_margins(kernel: MemoryKernel, delta: float, s):
    """``(g' + delta g) / g = delta - (-g')/g``, evaluated through log scales."""
    s = np.asarray(s, float)
    log_ratio = np.asarray(kernel.log_neg_gp(s), float) - np.asarray(kernel.log_g(s), float)
    with np.errstate(over="ignore", invalid="ignore"):
        normalized = delta - np.exp(log_ratio)
    raw = np.asarray(kernel.gp(s), float) + delta * np.asarray(kernel.g(s), float)
    return normalized, raw


def check_dafermos(kernel: MemoryKernel, delta: float, grid: AuditGrid) -> CheckResult:
    """Classical condition ``g'(s) + delta g(s) <= 0`` on the grid."""
    if not delta > 0:
        raise KernelError(f"Dafermos audit needs delta > 0, got {delta}")
    margins, raw = dafermos_margins(kernel, delta, grid.points)
    return _worst(margins, grid.points, grid.tolerance, raw)


@dataclass
class ExpBoundResult:
    M_g: float
    omega_g: float
    ok: bool
    max_gap: float
    source: str = "fit"

    def __iter__(self):
        return iter((self.M_g, self.omega_g, self.ok))


def _minimax_dominating_line(s, y):
    # variables (a, w, t); minimize t subject to 0 <= a - w s_i - y_i <= t
    ones = np.ones_like(s)
    A_ub = np.vstack([np.column_stack([ones, -s, -ones]), np.column_stack([-ones, s, 0 * ones])])
    b_ub = np.concatenate([y, -y])
    res = linprog([0.0, 0.0, 1.0], A_ub=A_ub, b_ub=b_ub, bounds=[(None, None), (None, None), (0, None)], method="highs")
    if not res.success:
        raise ArithmeticError(f"exponential-bound fit failed: {res.message}")
    a, w, _ = res.x
    # restore exact domination lost to the LP feasibility tolerance
    a += max(0.0, float(np.max(y - (a - w * s))))
    return a, w


def check_exponential_bound(kernel: MemoryKernel, grid: AuditGrid) -> ExpBoundResult:
    """Tightest ``g(s) <= M_g exp(-omega_g s)`` over the grid.

    The fitted pair is the dominating line in log scale with the smallest
    worst-case gap.  When the kernel declares its own bound and that bound
    holds on the grid, the candidate with the larger rate is reported.
    """
    s = grid.points
    y = np.asarray(kernel.log_g(s), float)
    keep = np.isfinite(y)
    if not np.any(keep):
        return ExpBoundResult(0.0, math.inf, True, 0.0, "vanishing")
    s, y = s[keep], y[keep]
    a, w = _minimax_dominating_line(s, y)
    best = ExpBoundResult(math.exp(a), float(w), bool(w > 0), float(np.max(a - w * s - y)), "fit")
    if kernel.exp_bound is not None and kernel.exp_bound[0] > 0:
        M, om = kernel.exp_bound
        gap = math.log(M) - om * s - y
        scale_tol = grid.tolerance * np.maximum(1.0, np.abs(y))
        if np.all(gap >= -scale_tol) and om > best.omega_g:
            best = ExpBoundResult(float(M), float(om), bool(om > 0), float(np.max(gap)), "declared")
    return best


def check_translation_inequality(kernel: MemoryKernel, alpha: float, delta: float, s_grid, t_grid, tolerance: float = 1e-10) -> "PairCheckResult":
    """``-g'(s + t) <= -g'(s) exp((alpha - delta) t)`` on all grid pairs.

    Compared in log scale: ``log(-g'(s+t)) - log(-g'(s)) - (alpha - delta) t <= tol``.
    """
    if not (0 < delta < alpha):
        raise KernelError(f"inequality audit needs 0 < delta < alpha, got delta={delta}, alpha={alpha}")
    s = np.asarray(s_grid, float)[:, None]
    t = np.asarray(t_grid, float)[None, :]
    lhs = np.asarray(kernel.log_neg_gp(s + t), float)
    rhs = np.asarray(kernel.log_neg_gp(s), float) + (alpha - delta) * t
    with np.errstate(invalid="ignore"):
        margins = lhs - rhs
    # -g' = 0 on both sides: the inequality holds trivially
    margins = np.where(np.isneginf(lhs), -np.inf, margins)
    flat = np.where(np.isnan(margins), -np.inf, margins).ravel()
    i = int(np.argmax(flat))
    si, ti = np.unravel_index(i, margins.shape)
    worst = float(flat[i])
    return PairCheckResult(bool(worst <= tolerance), worst, float(s[si, 0]), float(t[0, ti]))


# name used by the published interface
check_inequality_3_1 = check_translation_inequality


@dataclass
class PairCheckResult:
    ok: bool
    worst_margin: float
    worst_s: float
    worst_t: float


@dataclass
class KernelReport:
    kernel: dict
    alpha: float
    delta: float
    grid_size: int
    grid_range: tuple
    tolerance: float
    g1_ok: bool
    kappa: float
    gamma: float | None
    g2_ok: bool
    g2_worst_violation: float
    g2_worst_point: float
    g3_ok: bool
    g3_delta: float
    g3_worst_margin: float
    g3_worst_point: float
    dafermos: list = field(default_factory=list)
    exp_bound_M_g: float = float("nan")
    exp_bound_omega_g: float = float("nan")
    exp_bound_ok: bool = False
    exp_bound_max_gap: float = float("nan")
    convex: bool = True
    convexity_worst_point: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    return obj


def audit_kernel(kernel: MemoryKernel, alpha: float, delta: float, grid: AuditGrid | None = None,
                 gamma: float | None = None, dafermos_deltas=(0.1, 0.5, 1.0)) -> KernelReport:
    """Run every hypothesis check and collect a :class:`KernelReport`."""
    grid = grid or AuditGrid.default(kernel)
    s = grid.points
    tol = grid.tolerance
    kappa = float(kernel.mass_kappa)
    g = np.asarray(kernel.g(s), float)
    gp = np.asarray(kernel.gp(s), float)
    # sign conditions g >= 0 and g' <= 0, normalized by the local magnitude
    viol = np.maximum(-g, gp) / np.maximum(np.maximum(np.abs(g), np.abs(gp)), 1e-300)
    viol = np.where(np.maximum(np.abs(g), np.abs(gp)) > 0, viol, 0.0)
    i2 = int(np.argmax(viol))
    g3 = check_g3(kernel, alpha, delta, grid)
    gpp = np.asarray(kernel.gpp(s), float)
    scale = np.maximum(np.abs(gpp), np.abs(gp))
    conv = np.where(scale > 0, -gpp / np.where(scale > 0, scale, 1.0), 0.0)
    ic = int(np.argmax(conv))
    daf = []
    for d in dafermos_deltas:
        r = check_dafermos(kernel, d, grid)
        daf.append({"delta": d, "ok": r.ok, "worst_margin": r.worst_margin, "worst_point": r.worst_point})
    eb = check_exponential_bound(kernel, grid)
    return KernelReport(
        kernel=kernel.spec(), alpha=alpha, delta=delta, grid_size=int(s.size),
        grid_range=(float(s[0]), float(s[-1])), tolerance=tol,
        g1_ok=bool(gamma is None or kappa < gamma) and math.isfinite(kappa), kappa=kappa, gamma=gamma,
        g2_ok=bool(viol[i2] <= tol), g2_worst_violation=float(viol[i2]), g2_worst_point=float(s[i2]),
        g3_ok=g3.ok, g3_delta=delta, g3_worst_margin=g3.worst_margin, g3_worst_point=g3.worst_point,
        dafermos=daf,
        exp_bound_M_g=eb.M_g, exp_bound_omega_g=eb.omega_g, exp_bound_ok=eb.ok, exp_bound_max_gap=eb.max_gap,
        convex=bool(conv[ic] <= tol), convexity_worst_point=float(s[ic]),
    )
