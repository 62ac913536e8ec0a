"""Experiment configuration: TOML loading with validation, plus the bundled presets."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernels import KernelError, MemoryKernel, kernel_from_spec
from .spectral_model import (
    InadmissibleKernelError,
    MgtParams,
    ParameterError,
    Regime,
    Spectrum,
    State,
    classify_regime,
)

PRESET_DIR = Path(__file__).with_name("presets")

CHECK_NAMES = ("audit", "dissipation", "decay", "conserved", "blowup", "convergence", "sandwich")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


def resolve_config_path(name) -> Path:
    """A file path, or the name of a bundled preset (with or without ``.toml``)."""
    path = Path(name)
    if path.is_file():
        return path
    stem = path.name[:-5] if path.name.endswith(".toml") else path.name
    bundled = PRESET_DIR / f"{stem}.toml"
    if bundled.is_file():
        return bundled
    raise ConfigError(f"no config file {name!r} and no bundled preset of that name (have: {', '.join(list_presets())})")


def generic_initial_data(n_modes: int, seed: int, decay: float = 2.0, amplitude: float = 1.0) -> State:
    """Seeded Gaussian coefficients damped like ``j^-decay``."""
    rng = np.random.default_rng(seed)
    j = np.arange(1, n_modes + 1, dtype=float)
    u, v, w = amplitude * rng.standard_normal((3, n_modes)) / j**decay
    return State(u, v, w)


@dataclass
class ExperimentConfig:
    name: str
    params: MgtParams
    kernel_spec: dict
    kernel: MemoryKernel
    spectrum: Spectrum
    initial_spec: dict
    initial: State
    T: float
    dt: float
    rho: float
    rho_list: tuple = ()
    quadrature: str = "trapezoid"
    delta: float | None = None
    seed: int = 0
    regime: Regime = Regime.SUBCRITICAL
    checks: dict = field(default_factory=dict)
    source: str | None = None
    description: str = ""

    def enabled(self, check: str) -> bool:
        return bool(self.checks.get(check, False))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "params": {"alpha": self.params.alpha, "beta": self.params.beta, "gamma": self.params.gamma},
            "kernel": dict(self.kernel_spec),
            "spectrum": self.spectrum.eigenvalues.tolist(),
            "initial": {"spec": dict(self.initial_spec), "u": self.initial.u.tolist(), "v": self.initial.v.tolist(),
                        "w": self.initial.w.tolist()},
            "time": {"T": self.T, "dt": self.dt, "rho": self.rho, "rho_list": list(self.rho_list),
                     "quadrature": self.quadrature},
            "delta": self.delta,
            "seed": self.seed,
            "regime": self.regime.value,
            "checks": dict(self.checks),
            "source": self.source,
        }


def _positive(table, key, where, default=None):
    val = table.get(key, default)
    if val is None:
        raise ConfigError(f"[{where}] missing required key {key!r}")
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val) or val <= 0:
        raise ConfigError(f"[{where}] {key} must be a positive number, got {val!r}")
    return float(val)


def _spectrum(table) -> Spectrum:
    kind = table.get("type", table.get("preset", "explicit" if "eigenvalues" in table else "dirichlet1d"))
    try:
        if kind == "dirichlet1d":
            n = table.get("n_modes", 8)
            if not isinstance(n, int) or n < 1:
                raise ConfigError(f"[spectrum] n_modes must be a positive integer, got {n!r}")
            return Spectrum.dirichlet1d(n)
        if kind == "explicit":
            eig = table.get("eigenvalues")
            if not eig:
                raise ConfigError("[spectrum] explicit spectrum needs a nonempty 'eigenvalues' list")
            return Spectrum(np.asarray(eig, float))
    except ParameterError as exc:
        raise ConfigError(f"[spectrum] {exc}") from exc
    raise ConfigError(f"[spectrum] unknown type {kind!r}")


def _initial(table, n_modes, seed) -> State:
    kind = table.get("type", "generic")
    if kind == "generic":
        return generic_initial_data(n_modes, seed, float(table.get("decay", 2.0)), float(table.get("amplitude", 1.0)))
    if kind == "triples":
        try:
            arr = np.asarray(table.get("triples"), float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[initial] {exc}") from exc
        if arr.shape != (n_modes, 3):
            raise ConfigError(f"[initial] triples must be {n_modes} rows of (u0, v0, w0)")
        return State(arr[:, 0], arr[:, 1], arr[:, 2])
    if kind == "explicit":
        try:
            arrs = [np.atleast_1d(np.asarray(table.get(k, [0.0] * n_modes), float)) for k in ("u", "v", "w")]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[initial] {exc}") from exc
        if any(a.shape != (n_modes,) for a in arrs):
            raise ConfigError(f"[initial] u, v, w must each have {n_modes} entries")
        return State(*arrs)
    raise ConfigError(f"[initial] unknown type {kind!r}")


def parse_config(data: dict, base_dir: Path | None = None, seed: int | None = None, source: str | None = None) -> ExperimentConfig:
    """Validate a config mapping (as loaded from TOML)."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    p = data.get("params", {})
    params = MgtParams(_positive(p, "alpha", "params"), _positive(p, "beta", "params"), _positive(p, "gamma", "params"))

    kspec = dict(data.get("kernel", {"type": "zero"}))
    try:
        kernel = kernel_from_spec(kspec, base_dir)
    except KernelError as exc:
        raise ConfigError(f"[kernel] {exc}") from exc

    spectrum = _spectrum(data.get("spectrum", {}))
    seed = int(data.get("seed", 0)) if seed is None else int(seed)
    if "initial_data" in data:
        ispec = {"type": "triples", "triples": data["initial_data"]}
    else:
        ispec = dict(data.get("initial", {"type": "generic"}))
    initial = _initial(ispec, spectrum.n_modes, seed)

    tt = data.get("time", {})
    T = float(tt.get("T", 10.0))
    dt = _positive(tt, "dt", "time", 0.01)
    if not (T > 0 and math.isfinite(T)):
        raise ConfigError(f"[time] T must be positive, got {T}")
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * T:
        raise ConfigError(f"[time] dt={dt} does not divide T={T}")
    rho = float(tt.get("rho", 0.0))
    if rho < 0 or not math.isfinite(rho):
        raise ConfigError(f"[time] rho must be nonnegative, got {rho}")
    rho_list = tuple(float(r) for r in tt.get("rho_list", ()))
    if rho_list and (any(b >= a for a, b in zip(rho_list, rho_list[1:])) or rho_list[-1] <= 0):
        raise ConfigError("[time] rho_list must be strictly decreasing and positive")
    quadrature = tt.get("quadrature", "trapezoid")
    if quadrature not in ("trapezoid", "hermite"):
        raise ConfigError(f"[time] quadrature must be 'trapezoid' or 'hermite', got {quadrature!r}")

    try:
        info = classify_regime(params, kernel)
    except InadmissibleKernelError as exc:
        raise ConfigError(str(exc)) from exc
    declared = data.get("regime")
    if declared is not None and declared != info.regime.value:
        raise ConfigError(f"declared regime {declared!r} but parameters give {info.regime.value!r}")

    checks = dict(data.get("checks", {}))
    unknown = set(checks) - set(CHECK_NAMES) - {"expect_convex", "expect_dafermos", "blowup_rate_tolerance"}
    if unknown:
        raise ConfigError(f"[checks] unknown keys {sorted(unknown)}")
    if checks.get("decay") not in (None, False, True, "certified", "rate"):
        raise ConfigError("[checks] decay must be true, false, 'certified' or 'rate'")
    if checks.get("convergence") and not rho_list:
        raise ConfigError("convergence check needs [time] rho_list")
    if checks.get("conserved") and (not kernel.is_zero or info.regime is not Regime.CRITICAL):
        raise ConfigError("conserved check needs g = 0 and the critical regime")
    if checks.get("dissipation") and info.regime is not Regime.SUBCRITICAL:
        raise ConfigError("dissipation check needs the subcritical regime")

    delta = data.get("delta")
    if delta is not None:
        delta = float(delta)
        if not 0 < delta < params.alpha:
            raise ConfigError(f"delta must lie in (0, alpha), got {delta}")

    return ExperimentConfig(
        name=str(data.get("name", "experiment")), params=params, kernel_spec=kspec, kernel=kernel,
        spectrum=spectrum, initial_spec=ispec, initial=initial, T=T, dt=dt, rho=rho, rho_list=rho_list,
        quadrature=quadrature, delta=delta, seed=seed, regime=info.regime, checks=checks, source=source,
        description=str(data.get("description", "")),
    )


def load_config(path_or_name, seed: int | None = None) -> ExperimentConfig:
    path = resolve_config_path(path_or_name)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return parse_config(data, path.parent, seed, str(path))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
