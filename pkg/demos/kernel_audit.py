"""Audit the built-in kernels against the decay hypotheses.

The oscillating kernel is not convex yet satisfies the weaker curvature
condition; the staircase kernel satisfies it while failing the classical
g' + delta g <= 0 for every delta tried.
"""

from mgtmem.kernel_audit import audit_kernel
from mgtmem.kernels import ScaledKernel, make_exponential, make_oscillating, make_staircase

cases = {
    "exponential k=1 nu=1": make_exponential(1.0, 1.0),
    "oscillating / 5": ScaledKernel(make_oscillating(), 0.2),
    "staircase": make_staircase(),
}

for name, kernel in cases.items():
    rep = audit_kernel(kernel, alpha=2.0, delta=1.0, gamma=1.0)
    print(f"{name}")
    print(f"  mass {rep.kappa:.5f}  (below gamma: {rep.g1_ok})")
    print(f"  curvature condition with rate 1: {rep.g3_ok}  convex: {rep.convex}")
    print(f"  exp bound: g <= {rep.exp_bound_M_g:.4f} exp(-{rep.exp_bound_omega_g:.4f} s)")
    for d in rep.dafermos:
        where = "" if d["ok"] else f"  first seen failing near s = {d['worst_point']:g}"
        print(f"  g' + {d['delta']} g <= 0: {d['ok']}{where}")
