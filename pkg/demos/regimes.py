"""Memoryless runs in the three regimes set by beta - gamma / alpha."""

import numpy as np

from mgtmem.config import load_config
from mgtmem.energetics import critical_F_series, energy_series, fit_decay, relative_drift
from mgtmem.spectral_model import classify_regime
from mgtmem.volterra_solver import solve

for name in ("subcritical_mgt", "critical_mgt", "supercritical_mgt"):
    cfg = load_config(name)
    info = classify_regime(cfg.params, cfg.kernel)
    traj = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, 0.0, cfg.T, cfg.dt)
    print(f"{name}: stability number {info.stability_number:+.2f}")
    if traj.blew_up:
        ev = traj.events[0]
        print(f"  norm passed {ev.norm:.1e} at t = {ev.time:.2f}")
    elif info.stability_number == 0:
        print(f"  conserved quantity drifts by {relative_drift(critical_F_series(traj)):.1e} (relative)")
    else:
        fit = fit_decay(energy_series(traj), "E")
        print(f"  energy decays at rate {fit.omega:.3f}; final/initial = {traj.phase_norms()[-1] / traj.phase_norms()[0]:.2e}")
