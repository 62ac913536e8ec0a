"""The regularized problems approach the original one as the cutoff shrinks."""

from mgtmem.config import load_config
from mgtmem.energetics import limit_identity_gaps
from mgtmem.volterra_solver import rho_convergence_study, solve

cfg = load_config("exponential")
rows, trajs = rho_convergence_study(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, cfg.rho_list, cfg.T, cfg.dt)
print(" rho_small  rho_large   sup gap     bound proxy")
for r in rows:
    print(f"{r.rho_small:9.3f}  {r.rho_large:9.3f}  {r.gap:.3e}  {r.bound_proxy:.3e}")

plain = solve(cfg.params, cfg.kernel, cfg.spectrum, cfg.initial, 0.0, cfg.T, cfg.dt)
print("\n|E_rho(t) - E(t) - g(t)|u(t)|^2| at t = 1, 5, 10")
for traj in trajs:
    gaps = limit_identity_gaps(plain, traj, [1.0, 5.0, 10.0])
    print(f"rho = {traj.rho:<5} " + "  ".join(f"{g:.2e}" for g in gaps))
