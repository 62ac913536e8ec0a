"""The nine end-to-end acceptance criteria, each at its stated tolerance."""

import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgtmem.cli import EXIT_OK, main
from mgtmem.config import generic_initial_data, list_presets, load_config
from mgtmem.energetics import (
    check_dissipation,
    critical_F_series,
    energy_series,
    fit_decay,
    growth_rate,
    limit_identity_gaps,
    relative_drift,
)
from mgtmem.kernel_audit import AuditGrid, audit_kernel, staircase_probe_points
from mgtmem.kernels import ScaledKernel, make_exponential, make_oscillating, make_staircase
from mgtmem.memory_space import DomainTElement, generator_identity_check, identity_grid
from mgtmem.spectral_model import MgtParams, Spectrum, characteristic_roots, phase_norm_sq
from mgtmem.volterra_solver import Q_rho, RhoCutoff, oracle_exponential, rho_convergence_study, solve


def test_oracle_equivalence(acceptance):
    params = MgtParams(1.0, 2.0, 1.0)
    init = generic_initial_data(1, seed=0)
    start = time.perf_counter()
    traj = solve(params, make_exponential(0.5, 1.0), Spectrum(np.array([1.0])), init, 0.0, 10.0, 1e-3)
    elapsed = time.perf_counter() - start
    _, Z = oracle_exponential(params, 0.5, 1.0, 1.0, (init.u[0], init.v[0], init.w[0]), 10.0, 1e-3)
    errs = [float(np.max(np.abs(arr[:, 0] - Z[:, i]))) for i, arr in enumerate((traj.U, traj.V, traj.W))]
    ok = max(errs) <= 1e-6 and elapsed < 5.0
    acceptance(1, ok, f"max |solve - oracle| (u, v, w) = {errs[0]:.2e}, {errs[1]:.2e}, {errs[2]:.2e}; {elapsed:.2f} s")
    assert ok


@pytest.fixture(scope="module")
def example_runs():
    cfg = load_config("example_3_4")
    assert cfg.T == 40.0
    coarse = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho, cfg.T, cfg.dt)
    half = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho, cfg.T, cfg.dt / 2)
    plain = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, 0.0, cfg.T, cfg.dt)
    return cfg, coarse, half, plain


def test_dissipation_inequality(acceptance, example_runs):
    cfg, coarse, half, _ = example_runs
    delta = cfg.delta
    assert cfg.params.alpha - delta == pytest.approx(1.0)
    rc = check_dissipation(coarse, delta)
    rh = check_dissipation(half, delta)
    stable = rh.C <= 1.05 * rc.C
    ok = rc.ok and rh.ok and rc.monotone_ok and rh.monotone_ok and stable
    acceptance(2, ok, f"max margin {rc.max_margin:.2e} (allowance {rc.allowance:.2e}); "
                      f"C = {rc.C:.3g} -> {rh.C:.3g} at dt/2; max dF/dt {rc.max_F_increase_rate:.2e}")
    assert ok


def test_exponential_decay(acceptance, example_runs):
    cfg, coarse, _, plain = example_runs
    series = energy_series(plain)
    fit = fit_decay(series, "E")
    bounded = bool(np.all(series.E <= fit.M * series.E[0] * (1 + 1e-12)))
    fit_rho = fit_decay(energy_series(coarse), "E_rho")
    ok = fit.omega > 0 and fit.residual <= 0.05 and fit.valid and bounded
    acceptance(3, ok, f"omega = {fit.omega:.4f}, residual = {fit.residual:.1e}, M = {fit.M:.3f}, "
                      f"E <= M E(0) {'holds' if bounded else 'fails'}; regularized omega = {fit_rho.omega:.4f}")
    assert ok


def test_regime_trichotomy(acceptance):
    sub = load_config("subcritical_mgt")
    traj = solve(sub.params, sub.kernel, sub.spectrum, sub.initial, 0.0, sub.T, sub.dt)
    omega = fit_decay(energy_series(traj), "E").omega

    crit = load_config("critical_mgt")
    assert (crit.params.alpha, crit.params.beta, crit.params.gamma) == (2.0, 1.0, 2.0) and crit.T == 50.0
    traj = solve(crit.params, crit.kernel, crit.spectrum, crit.initial, 0.0, crit.T, crit.dt)
    drift = relative_drift(critical_F_series(traj))

    sup = load_config("supercritical_mgt")
    traj = solve(sup.params, sup.kernel, sup.spectrum, sup.initial, 0.0, sup.T, sup.dt)
    rates = np.array([max(characteristic_roots(sup.params, lam).real) for lam in sup.spectrum.eigenvalues])
    j = int(np.argmax(rates))
    norm_j = np.sqrt(phase_norm_sq(traj.U[:, j:j + 1], traj.V[:, j:j + 1], traj.W[:, j:j + 1],
                                   sup.spectrum.eigenvalues[j:j + 1]))
    measured = growth_rate(traj.times, norm_j)
    rel = abs(measured - rates[j]) / rates[j]
    ok = omega > 0 and drift <= 1e-6 and traj.blew_up and measured > 0 and rel <= 0.02
    acceptance(4, ok, f"(i) omega = {omega:.3f}; (ii) drift = {drift:.1e}; (iii) blow-up at t = "
                      f"{traj.events[0].time if traj.blew_up else float('nan'):.2f}, mode {j + 1} rate "
                      f"{measured:.5f} vs root {rates[j]:.5f} ({rel:.1e})")
    assert ok


IDENTITY_HISTORIES = [
    (lambda s: s * np.exp(-s), lambda s: (1 - s) * np.exp(-s)),
    (lambda s: 1 - np.exp(-s), lambda s: np.exp(-s)),
    (lambda s: np.sin(s) / (1 + s * s), lambda s: (np.cos(s) * (1 + s * s) - 2 * s * np.sin(s)) / (1 + s * s) ** 2),
]


def test_generator_identity(acceptance):
    kernels = {"exponential": make_exponential(1.0, 1.0), "oscillating": make_oscillating(),
               "staircase": make_staircase()}
    worst_rel, ratios, ok = 0.0, [], True
    for kernel in kernels.values():
        for fn, dfn in IDENTITY_HISTORIES:
            gaps = []
            for ds in (2e-4, 1e-4):
                s = identity_grid(kernel, ds=ds)
                lhs, _, gap = generator_identity_check(kernel, DomainTElement.from_callables(fn, dfn, s, np.array([1.0])))
                gaps.append(gap)
            rel = gaps[-1] / max(1.0, abs(lhs))
            ratio = gaps[0] / gaps[1]
            worst_rel = max(worst_rel, rel)
            ratios.append(ratio)
            ok &= rel <= 1e-8 and 3.5 <= ratio <= 4.5
    acceptance(5, ok, f"worst gap {worst_rel:.1e} at ds = 1e-4; refinement ratios {min(ratios):.3f}..{max(ratios):.3f}")
    assert ok


def test_kernel_audits(acceptance):
    example = audit_kernel(ScaledKernel(make_oscillating(), 0.2), alpha=2.0, delta=1.0, gamma=1.0)
    ok_example = example.g1_ok and example.g2_ok and example.g3_ok and not example.convex
    stair = make_staircase()
    grid = AuditGrid(np.unique(np.concatenate([AuditGrid.default(stair).points, staircase_probe_points(stair)])))
    rep = audit_kernel(stair, alpha=2.0, delta=1.0, gamma=1.0, grid=grid, dafermos_deltas=(0.1, 0.5, 1.0))
    points = {d["delta"]: d["worst_point"] for d in rep.dafermos}
    ok_stair = rep.g3_ok and rep.exp_bound_ok and rep.exp_bound_omega_g >= 1.0 \
        and all(not d["ok"] and d["worst_margin"] > 0 and math.isfinite(d["worst_point"]) for d in rep.dafermos)
    ok = ok_example and ok_stair
    acceptance(6, ok, f"example kernel g1/g2/g3 = {example.g1_ok}/{example.g2_ok}/{example.g3_ok}, convex = "
                      f"{example.convex}; staircase g3 = {rep.g3_ok}, omega_g = {rep.exp_bound_omega_g:.3f}, "
                      f"Dafermos violated at {points}")
    assert ok


def test_rho_convergence(acceptance):
    cfg = load_config("exponential")
    assert cfg.rho_list == (0.4, 0.2, 0.1, 0.05)
    rows, trajs = rho_convergence_study(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho_list, cfg.T, cfg.dt)
    gaps = [r.gap for r in rows]
    proxies = [r.bound_proxy for r in rows]
    traj0 = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, 0.0, cfg.T, cfg.dt)
    limits = np.array([limit_identity_gaps(traj0, tr, [1.0, 5.0, 10.0]) for tr in trajs])
    dec = lambda xs: all(b < a for a, b in zip(xs, xs[1:]))
    ok = dec(gaps) and dec(proxies) and all(dec(limits[:, i]) for i in range(3))
    acceptance(7, ok, "gaps " + ", ".join(f"{g:.2e}" for g in gaps) + "; proxies "
               + ", ".join(f"{p:.2e}" for p in proxies) + f"; limit gaps at t=10 "
               + ", ".join(f"{x:.1e}" for x in limits[:, 2]))
    assert ok


def test_sandwich_constants_on_presets(acceptance, tmp_path):
    found, ok = {}, True
    for name in list_presets():
        code = main(["run", "--config", name, "--out", str(tmp_path / name)])
        manifest = json.loads((tmp_path / name / "manifest.json").read_text())
        c = manifest["constants"]
        sw = manifest["checks"]["sandwich"]
        good = code == EXIT_OK and all(isinstance(c[k], float) and math.isfinite(c[k]) and c[k] > 0
                                       for k in ("C_F", "C_Psi", "epsilon")) and sw["Psi2_min"] >= 0
        found[name] = f"{c['C_F']:.3g}/{c['C_Psi']:.3g}/{c['epsilon']:g}"
        ok &= good
    acceptance(8, ok, "C_F/C_Psi/epsilon: " + "; ".join(f"{k} {v}" for k, v in found.items()))
    assert ok


Q_KERNELS = [make_exponential(1.0, 1.0), make_exponential(0.5, 3.0), make_oscillating(),
             ScaledKernel(make_oscillating(), 0.2), make_staircase()]
_q_stats = {"n": 0, "worst": -math.inf}


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(t=st.floats(0.0, 30.0), rho=st.floats(1e-4, 2.0), which=st.integers(0, len(Q_KERNELS) - 1))
def _q_bound_property(t, rho, which):
    k = Q_KERNELS[which]
    q = Q_rho(k, RhoCutoff(rho), t)
    slack = q - rho * k.g(t)
    _q_stats["n"] += 1
    _q_stats["worst"] = max(_q_stats["worst"], slack)
    assert slack <= 1e-12


def test_q_rho_bound(acceptance):
    try:
        _q_bound_property()
        ok = True
    finally:
        acceptance(9, _q_stats["worst"] <= 1e-12,
                   f"{_q_stats['n']} random (t, rho, kernel) triples; max Q - rho g = {_q_stats['worst']:.2e}")
    assert ok
