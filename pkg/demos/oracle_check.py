"""Compare the Volterra solver with the exact solution for an exponential kernel.

With g(s) = k exp(-nu s) the memory term can be eliminated by differentiating
once, which leaves a constant-coefficient ODE solved by a matrix exponential.
"""

import numpy as np

from mgtmem import MgtParams, Spectrum, State, oracle_exponential, solve
from mgtmem.kernels import make_exponential

params = MgtParams(alpha=1.0, beta=2.0, gamma=1.0)
kernel = make_exponential(0.5, 1.0)
init = State([1.0], [-0.5], [0.25])

for quadrature in ("trapezoid", "hermite"):
    print(f"{quadrature}:")
    for dt in (0.02, 0.01, 0.005):
        traj = solve(params, kernel, Spectrum(np.array([1.0])), init, 0.0, 10.0, dt, quadrature)
        _, exact = oracle_exponential(params, 0.5, 1.0, 1.0, (1.0, -0.5, 0.25), 10.0, dt)
        err = np.max(np.abs(traj.U[:, 0] - exact[:, 0]))
        print(f"  dt = {dt:<6} max |u - exact| = {err:.3e}")
