import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mgtmem.kernels import (
    KernelError,
    ScaledKernel,
    StaircaseKernel,
    TabulatedKernel,
    ZeroKernel,
    kernel_from_spec,
    make_exponential,
    make_oscillating,
    make_staircase,
    tail_integral,
)
from mgtmem.spectral_model import ParameterError

OSC_KAPPA = 4.0 + 12.0 / 1369.0


def oscillating_kappa_closed_form():
    # int e^{-s} cos 6s = 1/37, int e^{-s} sin 6s = 6/37
    return (148.0 * 1.0 + 6.0 * (1 / 37) + 1.0 * (6 / 37)) / 37.0


class TestExponential:
    def test_unit_mass(self):
        k = make_exponential(1, 1)
        assert k.mass_kappa == pytest.approx(1.0, abs=1e-15)
        assert k.tail_G(0.0) == pytest.approx(1.0, abs=1e-15)

    def test_mass_is_ratio(self):
        assert make_exponential(2, 4).mass_kappa == pytest.approx(0.5, abs=1e-15)

    def test_half_life(self):
        assert make_exponential(1, 1).g(math.log(2)) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("k, nu", [(0, 1), (1, 0), (-1, 1), (1, -2)])
    def test_nonpositive_parameters_rejected(self, k, nu):
        with pytest.raises((ParameterError, KernelError, ValueError)):
            make_exponential(k, nu)

    def test_tail_values(self):
        k = make_exponential(1, 1)
        assert tail_integral(k, 0.0) == pytest.approx(1.0, abs=1e-14)
        assert tail_integral(k, 1.0) == pytest.approx(math.exp(-1), abs=1e-14)


class TestOscillating:
    def test_value_at_zero(self):
        assert make_oscillating().g(0.0) == pytest.approx(154 / 37, abs=1e-12)

    def test_slope_at_zero(self):
        assert make_oscillating().gp(0.0) == pytest.approx(-4.0, abs=1e-12)

    def test_mass_against_closed_form_and_quadrature(self):
        k = make_oscillating()
        assert oscillating_kappa_closed_form() == pytest.approx(OSC_KAPPA, abs=1e-15)
        quad, _ = integrate.quad(lambda s: float(k.g(s)), 0, 50, limit=400, epsabs=1e-13)
        assert k.mass_kappa == pytest.approx(OSC_KAPPA, abs=1e-10)
        assert quad == pytest.approx(OSC_KAPPA, abs=1e-10)
        assert abs(k.mass_kappa - 4.00876) < 1e-5

    def test_tail_at_zero_is_mass(self):
        k = make_oscillating()
        assert tail_integral(k, 0.0) == pytest.approx(OSC_KAPPA, abs=1e-9)

    def test_g3_with_unit_rate(self):
        k = make_oscillating()
        s = np.linspace(0, 20, 10001)[1:]
        assert np.min(-(k.gp(s) - k.gpp(s))) >= -1e-12

    def test_nonconvex(self):
        k = make_oscillating()
        gpp = k.gpp(np.linspace(0.01, 20, 5000))
        assert gpp.min() < 0 < gpp.max()

    def test_second_derivative_formula(self):
        k = make_oscillating()
        s = np.linspace(0.1, 5, 50)
        expected = np.exp(-s) * (4 + np.sin(6 * s) - 6 * np.cos(6 * s))
        np.testing.assert_allclose(k.gpp(s), expected, atol=1e-13)


class TestStaircase:
    def test_epsilon_two(self):
        assert math.exp(StaircaseKernel.log_eps(2)) == pytest.approx(math.exp(-7) / 4, rel=1e-14)
        # the quoted 2.2800e-4 is a rounding of e^-7/4 = 2.27970e-4
        assert math.exp(StaircaseKernel.log_eps(2)) == pytest.approx(2.2800e-4, rel=2e-4)

    def test_density_bounded_by_exponential(self):
        k = make_staircase()
        s = np.linspace(0.0, 60.0, 20001)
        f = np.asarray(k.f(s))
        assert np.all(f > 0)
        assert np.all(f <= np.exp(-s) * (1 + 1e-12))

    def test_nonincreasing_outside_intervals(self):
        k = make_staircase()
        for a, b in ((0.0, 4.0), (7.0, 9.0)):
            s = np.linspace(a, b, 4001)[1:-1]
            assert np.all(np.diff(np.asarray(k.f(s))) <= 1e-18)

    def test_interval_integral_lower_bound(self):
        k = make_staircase()
        eps2 = math.exp(StaircaseKernel.log_eps(2))
        val, _ = integrate.quad(lambda y: float(k.f(y)), 5.0, 7.0, epsabs=1e-16, epsrel=1e-13)
        assert val >= 2 * eps2

    def test_slope_decreasing_on_intervals(self):
        k = make_staircase()
        for n, a, b in list(k.intervals())[:3]:
            s = np.linspace(a, b, 200)[1:-1]
            assert np.all(np.diff(np.asarray(k.gp(s))) < 0)

    def test_dafermos_fails_at_squares(self):
        k = make_staircase()
        for delta in (0.1, 0.5, 1.0):
            n = np.arange(2, 21)
            s = (n * n).astype(float)
            ratio = np.exp(np.asarray(k.log_neg_gp(s)) - np.asarray(k.log_g(s)))
            assert np.any(delta - ratio > 0), delta

    def test_log_scale_survives_underflow(self):
        k = make_staircase(30)
        assert np.isfinite(k.log_g(900.0))
        assert k.log_g(900.0) < -700


class TestTabulatedAndSpec:
    def test_tabulated_reproduces_exponential(self, tmp_path):
        s = np.linspace(0, 20, 2001)
        path = tmp_path / "g.csv"
        np.savetxt(path, np.column_stack([s, np.exp(-s)]), delimiter=",", header="s,g", comments="")
        k = kernel_from_spec({"type": "tabulated", "path": "g.csv"}, base_dir=tmp_path)
        assert isinstance(k, TabulatedKernel)
        assert k.mass_kappa == pytest.approx(1.0, rel=1e-4)
        assert k.g(1.0) == pytest.approx(math.exp(-1), rel=1e-4)

    def test_scaled_spec(self):
        k = kernel_from_spec({"type": "oscillating", "scale": 0.2})
        assert isinstance(k, ScaledKernel)
        assert k.mass_kappa == pytest.approx(0.2 * OSC_KAPPA, rel=1e-12)

    def test_zero_kernel(self):
        k = kernel_from_spec({"type": "zero"})
        assert isinstance(k, ZeroKernel) and k.is_zero and k.mass_kappa == 0.0

    def test_unknown_type(self):
        with pytest.raises(KernelError):
            kernel_from_spec({"type": "gamma"})


KERNELS = [make_exponential(1, 1), make_exponential(0.5, 3), make_oscillating(), make_staircase()]


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.spec()["type"])
def test_sign_conditions_on_dense_grid(kernel):
    s = np.linspace(1e-6, kernel.truncation_point(), 20000)
    assert np.all(np.asarray(kernel.g(s)) >= 0)
    assert np.all(np.asarray(kernel.gp(s)) <= 0)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.spec()["type"])
def test_tail_starts_at_mass_and_decreases(kernel):
    s = np.linspace(0, 30, 301)
    G = np.array([tail_integral(kernel, x) for x in s])
    assert G[0] == pytest.approx(kernel.mass_kappa, rel=1e-9)
    assert np.all(np.diff(G) <= 1e-15)
    assert G[-1] < 1e-6 * G[0]


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.spec()["type"])
@given(s=st.floats(0.0, 25.0), h=st.floats(1e-3, 3.0))
def test_tail_consistent_with_density(kernel, s, h):
    piece, _ = integrate.quad(lambda y: float(kernel.g(y)), s, s + h, epsabs=1e-15, epsrel=1e-12, limit=200,
                              points=[b for b in kernel.breakpoints if s < b < s + h] or None)
    diff = tail_integral(kernel, s) - tail_integral(kernel, s + h)
    assert abs(diff - piece) <= 1e-9 * kernel.mass_kappa


@given(s=st.floats(0.0, 30.0), t=st.floats(0.0, 30.0), rate=st.floats(-3.0, 3.0))
def test_exponential_translation_inequality(s, t, rate):
    nu = 1.0
    k = make_exponential(1.0, nu)
    lhs, rhs = -k.gp(s + t), -k.gp(s) * math.exp(rate * t)
    if rate >= -nu:
        assert lhs <= rhs * (1 + 1e-12)
    if abs(rate + nu) < 1e-15:
        assert lhs == pytest.approx(rhs, rel=1e-12)
