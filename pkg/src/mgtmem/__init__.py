"""Modal simulation of the Moore-Gibson-Thompson equation with memory of type I.

The package integrates ``u''' + alpha u'' + beta A u' + gamma A u - int_0^t g(s) A u(t - s) ds = 0``
mode by mode, evaluates the associated energy functionals and audits memory
kernels against the structural hypotheses of the decay theory.
"""

from .kernels import (
    CustomKernel,
    ExponentialKernel,
    MemoryKernel,
    OscillatingKernel,
    ScaledKernel,
    StaircaseKernel,
    TabulatedKernel,
    ZeroKernel,
    kernel_from_spec,
)
from .spectral_model import MgtParams, Regime, Spectrum, State, classify_regime
from .volterra_solver import RhoCutoff, Trajectory, oracle_exponential, solve

__version__ = "0.1.0"

__all__ = [
    "CustomKernel",
    "ExponentialKernel",
    "MemoryKernel",
    "MgtParams",
    "OscillatingKernel",
    "Regime",
    "RhoCutoff",
    "ScaledKernel",
    "Spectrum",
    "StaircaseKernel",
    "State",
    "TabulatedKernel",
    "Trajectory",
    "ZeroKernel",
    "classify_regime",
    "kernel_from_spec",
    "oracle_exponential",
    "solve",
    "__version__",
]
