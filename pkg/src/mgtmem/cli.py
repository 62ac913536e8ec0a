"""Command line front end and the experiment pipeline.

Exit codes: 0 success, 2 invalid input, 3 a declared check failed,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig, list_presets, load_config
from .energetics import (
    FitError,
    PreconditionError,
    check_dissipation,
    critical_F_series,
    default_omega_g,
    energy_series,
    fit_decay,
    growth_rate,
    limit_identity_gaps,
    relative_drift,
    sandwich_constants,
)
from .kernel_audit import AuditGrid, _jsonable, audit_kernel
from .kernels import KernelError, QuadratureError, kernel_from_spec
from .spectral_model import (
    InadmissibleKernelError,
    MgtParams,
    ParameterError,
    Regime,
    RegimeError,
    Spectrum,
    characteristic_roots,
    classify_regime,
    phase_norm_sq,
)
from .volterra_solver import Trajectory, convergence_is_monotone, rho_convergence_study, solve

log = logging.getLogger("mgtmem")

EXIT_OK, EXIT_VALIDATION, EXIT_CHECK, EXIT_NUMERICAL = 0, 2, 3, 4
CONSERVATION_TOLERANCE = 1e-6
DEFAULT_BLOWUP_RATE_TOLERANCE = 0.02


# ---------------------------------------------------------------------------
# file emission


def _fmt(x) -> str:
    return "%.17g" % x


def write_json(path: Path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "j", "u", "v", "w"])
        for n, t in enumerate(traj.times):
            for j in range(traj.lam.size):
                w.writerow([_fmt(t), j + 1, _fmt(traj.U[n, j]), _fmt(traj.V[n, j]), _fmt(traj.W[n, j])])


def read_trajectory(directory: Path) -> Trajectory:
    """Rebuild a trajectory from ``run.json`` and ``trajectory.csv`` written by ``simulate``."""
    directory = Path(directory)
    try:
        run = json.loads((directory / "run.json").read_text())
        raw = np.loadtxt(directory / "trajectory.csv", delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trajectory from {directory}: {exc}") from exc
    lam = np.asarray(run["spectrum"], float)
    m = lam.size
    if raw.shape[0] % m:
        raise ConfigError("trajectory.csv row count is not a multiple of the mode count")
    raw = raw.reshape(-1, m, 5)
    p = run["params"]
    kernel = kernel_from_spec(run["kernel"], run.get("base_dir"))
    tt = run["time"]
    times = raw[:, 0, 0]
    return Trajectory(MgtParams(p["alpha"], p["beta"], p["gamma"]), kernel, Spectrum(lam), float(tt["rho"]),
                      float(tt["dt"]), times, raw[:, :, 2].copy(), raw[:, :, 3].copy(), raw[:, :, 4].copy(),
                      tt.get("quadrature", "trapezoid"))


def _run_record(cfg: ExperimentConfig) -> dict:
    rec = cfg.to_dict()
    rec["base_dir"] = str(Path(cfg.source).parent.resolve()) if cfg.source else None
    return rec


# ---------------------------------------------------------------------------
# pipeline stages


def _admissibility(cfg: ExperimentConfig) -> dict:
    info = classify_regime(cfg.params, cfg.kernel)
    return {"regime": info.regime.value, "stability_number": info.stability_number, "kappa": info.kappa,
            "gamma": cfg.params.gamma, "admissible": info.admissible}


def simulate(cfg: ExperimentConfig, out: Path, write: bool = True) -> Trajectory:
    traj = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho, cfg.T, cfg.dt, cfg.quadrature)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj, out / "trajectory.csv")
        write_json(out / "events.json", {"events": [e.to_dict() for e in traj.events],
                                         "admissibility": _admissibility(cfg)})
        write_json(out / "run.json", _run_record(cfg))
    return traj


def _delta(cfg: ExperimentConfig) -> float:
    if cfg.delta is not None:
        return cfg.delta
    d = cfg.kernel.delta_g3(cfg.params.alpha) if not cfg.kernel.is_zero else 0.5 * cfg.params.alpha
    if d is None:
        raise PreconditionError("kernel has no certified curvature rate; set delta in the config")
    return d


def audit_stage(cfg: ExperimentConfig, out: Path | None = None) -> tuple[dict, bool]:
    if cfg.kernel.is_zero:
        report = {"kernel": cfg.kernel_spec, "note": "no memory; nothing to audit"}
        return report, True
    rep = audit_kernel(cfg.kernel, cfg.params.alpha, _delta(cfg), gamma=cfg.params.gamma)
    report = rep.to_dict()
    ok = rep.g1_ok and rep.g2_ok and rep.g3_ok and rep.exp_bound_ok
    expectations = {}
    if "expect_convex" in cfg.checks:
        expectations["convex"] = rep.convex == bool(cfg.checks["expect_convex"])
    if "expect_dafermos" in cfg.checks:
        want = bool(cfg.checks["expect_dafermos"])
        expectations["dafermos"] = all(d["ok"] == want for d in rep.dafermos)
    report["expectations"] = expectations
    ok = ok and all(expectations.values())
    report["passed"] = ok
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "audit.json", report)
    return report, ok


def converge_stage(cfg: ExperimentConfig, out: Path | None = None) -> tuple[dict, bool]:
    rows, trajs = rho_convergence_study(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho_list, cfg.T, cfg.dt,
                                        cfg.quadrature)
    traj0 = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, 0.0, cfg.T, cfg.dt, cfg.quadrature)
    t_list = [t for t in (1.0, 5.0, 10.0) if t <= cfg.T]
    limits = {r.rho: limit_identity_gaps(traj0, r, t_list) for r in trajs}
    gaps_ok = convergence_is_monotone(rows)
    proxy = [r.bound_proxy for r in rows]
    proxy_ok = all(b < a for a, b in zip(proxy, proxy[1:]))
    rhos = list(cfg.rho_list)
    limit_ok = all(all(limits[b][i] < limits[a][i] for a, b in zip(rhos, rhos[1:])) for i in range(len(t_list)))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho_small", "rho_large", "gap", "bound_proxy"])
            for r in rows:
                w.writerow([_fmt(r.rho_small), _fmt(r.rho_large), _fmt(r.gap), _fmt(r.bound_proxy)])
        with open(out / "limit_identity.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho"] + [f"gap_t{_fmt(t)}" for t in t_list])
            for rho in rhos:
                w.writerow([_fmt(rho)] + [_fmt(x) for x in limits[rho]])
    summary = {"rows": [vars(r) for r in rows], "limit_identity": {str(k): v for k, v in limits.items()},
               "t_list": t_list, "gaps_decreasing": gaps_ok, "proxy_decreasing": proxy_ok,
               "limit_gaps_decreasing": limit_ok}
    ok = gaps_ok and proxy_ok and limit_ok
    summary["passed"] = ok
    return summary, ok


def dominant_mode_growth(traj: Trajectory) -> dict:
    """Growth rate of the mode with the largest norm at the end against its unstable root."""
    lam = traj.lam
    norms = np.sqrt(np.stack([phase_norm_sq(traj.U[:, j:j + 1], traj.V[:, j:j + 1], traj.W[:, j:j + 1], lam[j:j + 1]) for j in range(lam.size)],
                             axis=1))
    j = int(np.argmax(norms[-1]))
    measured = growth_rate(traj.times, norms[:, j])
    expected = float(max(characteristic_roots(traj.params, float(lam[j])).real))
    rel = abs(measured - expected) / abs(expected) if expected else math.inf
    return {"mode": j + 1, "measured_rate": measured, "expected_rate": expected, "relative_error": rel}


def run_experiment(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[int, dict]:
    """Simulate, then run every check enabled in ``cfg``; writes all artifacts to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    checks: dict[str, dict] = {}
    constants: dict[str, object] = {}

    traj = simulate(cfg, out)
    sub_or_crit = cfg.regime in (Regime.SUBCRITICAL, Regime.CRITICAL)
    checks["no_unexpected_blowup"] = {"passed": not (traj.blew_up and sub_or_crit),
                                      "events": [e.to_dict() for e in traj.events]}

    audit_report = None
    if cfg.enabled("audit"):
        audit_report, ok = audit_stage(cfg, out)
        checks["audit"] = {"passed": ok}

    omega_g = default_omega_g(cfg.kernel)
    if omega_g is None and audit_report is not None:
        omega_g = audit_report.get("exp_bound_omega_g")
    series = energy_series(traj, omega_g=omega_g)
    series.to_csv(out / "energy.csv")

    if cfg.enabled("dissipation"):
        delta = _delta(cfg)
        rep = check_dissipation(traj, delta, series)
        half = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho, cfg.T, cfg.dt / 2, cfg.quadrature)
        rep_half = check_dissipation(half, delta)
        stable = rep_half.C <= 1.05 * rep.C + 1e-12
        bound_by_coarse = bool(np.all(rep_half.margins <= rep.C * cfg.dt + 1e-13 * max(abs(series.F_rho).max(), 1e-300)))
        ok = rep.ok and rep.monotone_ok and rep_half.ok and rep_half.monotone_ok and stable and bound_by_coarse
        checks["dissipation"] = {"passed": ok, "coarse": rep.summary(), "halved": rep_half.summary(),
                                 "C_stable": stable, "halved_within_coarse_allowance": bound_by_coarse}
        constants["dissipation_C"] = rep.C
        constants["dissipation_C_halved"] = rep_half.C
        constants["delta"] = delta

    fits = {}
    if cfg.enabled("decay"):
        fit_main = fit_decay(series, "E_rho" if cfg.rho > 0 else "E")
        fits[fit_main.field] = fit_main.to_dict()
        if cfg.rho > 0:
            traj0 = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, 0.0, cfg.T, cfg.dt, cfg.quadrature)
            series0 = energy_series(traj0, omega_g=omega_g)
            fit_E = fit_decay(series0, "E")
            E_series = series0.E
        else:
            fit_E = fit_main
            E_series = series.E
        fits["E"] = fit_E.to_dict()
        M_bound = fit_main.M * (1.0 + cfg.kernel.g0) if cfg.rho > 0 else fit_E.M
        worst = float(np.max(E_series / E_series[0]))
        bounded = worst <= M_bound * (1 + 1e-12)
        fits["boundedness"] = {"M": M_bound, "max_E_over_E0": worst, "holds": bounded}
        mode = cfg.checks["decay"]
        if mode == "rate":
            # positive rate and the uniform bound; the single-exponential residual is reported only
            ok = fit_E.omega > 0 and fit_main.omega > 0 and bounded
        else:
            ok = fit_E.valid and fit_main.valid and bounded
        checks["decay"] = {"passed": bool(ok), "mode": "rate" if mode == "rate" else "certified"}
        constants.update({"M": M_bound, "omega": fit_E.omega, "omega_rho": fit_main.omega})
        write_json(out / "fit.json", fits)

    if cfg.enabled("conserved"):
        drift = relative_drift(critical_F_series(traj))
        checks["conserved"] = {"passed": drift <= CONSERVATION_TOLERANCE, "relative_drift": drift,
                               "tolerance": CONSERVATION_TOLERANCE}
        constants["conserved_relative_drift"] = drift

    if cfg.enabled("blowup"):
        tol = float(cfg.checks.get("blowup_rate_tolerance", DEFAULT_BLOWUP_RATE_TOLERANCE))
        g = dominant_mode_growth(traj) if traj.blew_up else {}
        ok = traj.blew_up and g["measured_rate"] > 0 and g["relative_error"] <= tol
        checks["blowup"] = {"passed": bool(ok), "tolerance": tol, **g}
        constants["growth_rate"] = g.get("measured_rate")

    if cfg.enabled("convergence"):
        summary, ok = converge_stage(cfg, out)
        checks["convergence"] = summary

    if cfg.enabled("sandwich"):
        sw = sandwich_constants(series)
        finite_pos = lambda x: x is not None and math.isfinite(x) and x > 0
        ok = finite_pos(sw["C_F"]) and finite_pos(sw["C_Psi"]) and finite_pos(sw["epsilon"]) \
            and sw["Psi2_min"] is not None and sw["Psi2_min"] >= 0
        checks["sandwich"] = {"passed": bool(ok), **sw}
        constants.update({"C_F": sw["C_F"], "C_Psi": sw["C_Psi"], "epsilon": sw["epsilon"]})

    all_ok = all(c["passed"] for c in checks.values())
    manifest = {
        "name": cfg.name,
        "versions": {"mgtmem": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "config": cfg.to_dict(),
        "admissibility": _admissibility(cfg),
        "tolerances": {"blowup_threshold": 1e12, "conservation": CONSERVATION_TOLERANCE,
                       "decay_fit_residual": 0.05, "blowup_rate": cfg.checks.get("blowup_rate_tolerance",
                                                                                 DEFAULT_BLOWUP_RATE_TOLERANCE)},
        "constants": constants,
        "checks": checks,
        "threads": threads,
        "passed": all_ok,
    }
    write_json(out / "manifest.json", manifest)
    return (EXIT_OK if all_ok else EXIT_CHECK), manifest


# ---------------------------------------------------------------------------
# argparse


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", required=True, help="TOML file or bundled preset name")
    p.add_argument("--out", required=True, help="output directory (or file, where noted)")
    p.add_argument("--seed", type=int, default=None, help="override the seed for generated initial data")
    p.add_argument("--threads", type=int, default=1, help="worker count (modes are vectorized; kept for compatibility)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgtmem", description="MGT equation with memory: simulation and energy checks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("simulate", help="integrate and write trajectory.csv and events.json"))
    p = sub.add_parser("energy", help="energy functionals of a simulated trajectory")
    p.add_argument("--trajectory", required=True, help="directory written by simulate")
    p.add_argument("--out", required=True, help="energy CSV path")
    p = sub.add_parser("fit", help="exponential decay fit of one energy column")
    p.add_argument("--in", dest="input", required=True, help="energy CSV")
    p.add_argument("--field", default="E")
    p.add_argument("--out", default=None, help="optional JSON path (stdout always)")
    p = sub.add_parser("audit", help="kernel hypothesis audit (JSON to stdout, audit.json with --out)")
    p.add_argument("--config", help="TOML file or bundled preset name")
    p.add_argument("--kernel", help='kernel spec as JSON, e.g. \'{"type": "oscillating", "scale": 0.2}\'')
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--grid-file", default=None, help="CSV of audit points (one column, optional header)")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    _add_common(sub.add_parser("converge", help="rho -> 0 study (convergence.csv)"))
    _add_common(sub.add_parser("run", help="full pipeline with manifest.json"))
    sub.add_parser("presets", help="list bundled presets")
    return ap


def _audit_standalone(args) -> int:
    if args.kernel is None or args.alpha is None or args.delta is None:
        raise ConfigError("audit needs either --config or all of --kernel, --alpha and --delta")
    try:
        spec = json.loads(args.kernel)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--kernel is not valid JSON: {exc}") from exc
    try:
        kernel = kernel_from_spec(spec)
    except KernelError as exc:
        raise ConfigError(f"--kernel: {exc}") from exc
    if not 0 < args.delta < args.alpha:
        raise ConfigError("delta must lie in (0, alpha)")
    grid = AuditGrid.from_csv(args.grid_file) if args.grid_file else None
    rep = audit_kernel(kernel, args.alpha, args.delta, grid=grid, gamma=args.gamma)
    text = json.dumps(_jsonable(rep.to_dict()), indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "audit.json").write_text(text + "\n")
    return EXIT_OK if rep.g1_ok and rep.g2_ok and rep.g3_ok and rep.exp_bound_ok else EXIT_CHECK


def _dispatch(args) -> int:
    if args.command == "presets":
        print("\n".join(list_presets()))
        return EXIT_OK
    if getattr(args, "threads", 1) < 1:
        raise ConfigError("--threads must be at least 1")
    if args.command == "energy":
        traj = read_trajectory(Path(args.trajectory))
        series = energy_series(traj)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        series.to_csv(out)
        return EXIT_OK
    if args.command == "fit":
        try:
            data = np.genfromtxt(args.input, delimiter=",", names=True)
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        if args.field not in data.dtype.names:
            raise ConfigError(f"no column {args.field!r} in {args.input}")
        fit = fit_decay((data["t"], data[args.field]), args.field)
        text = json.dumps(_jsonable(fit.to_dict()), indent=2, sort_keys=True)
        print(text)
        if args.out:
            Path(args.out).write_text(text + "\n")
        return EXIT_OK if fit.valid else EXIT_CHECK

    if args.command == "audit" and args.config is None:
        return _audit_standalone(args)
    cfg = load_config(args.config, args.seed)
    out = Path(args.out) if args.out else None
    if args.command == "simulate":
        traj = simulate(cfg, out)
        bad = traj.blew_up and cfg.regime is not Regime.SUPERCRITICAL
        return EXIT_CHECK if bad else EXIT_OK
    if args.command == "audit":
        report, ok = audit_stage(cfg, out)
        print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
        return EXIT_OK if ok else EXIT_CHECK
    if args.command == "converge":
        if not cfg.rho_list:
            raise ConfigError("config has no [time] rho_list")
        _, ok = converge_stage(cfg, out)
        return EXIT_OK if ok else EXIT_CHECK
    if args.command == "run":
        status, manifest = run_experiment(cfg, out, args.threads)
        for name, res in manifest["checks"].items():
            print(f"{name}: {'pass' if res['passed'] else 'FAIL'}")
        return status
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with np.errstate(over="raise", invalid="raise", divide="ignore", under="ignore"):
            return _dispatch(args)
    except (ConfigError, ParameterError, KernelError, InadmissibleKernelError, RegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (QuadratureError, FitError, PreconditionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
