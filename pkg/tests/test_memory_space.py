import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mgtmem.kernels import ScaledKernel, make_exponential, make_oscillating, make_staircase
from mgtmem.memory_space import (
    DomainError,
    DomainTElement,
    GridMismatchError,
    HistoryFunction,
    generator_identity_check,
    identity_grid,
    m_inner,
    m_norm_sq,
    mild_solution,
    resolvent_solution,
    right_translate,
)
from mgtmem.spectral_model import MgtParams, Spectrum, State
from mgtmem.volterra_solver import RhoCutoff, eta_at, solve

LAM1 = np.array([1.0])


def fine_grid(kernel, ds=1e-3, s_max=40.0):
    return identity_grid(kernel, ds=ds, s_max=s_max)


class TestInnerProduct:
    def test_norm_is_self_inner(self, rng):
        k = make_oscillating()
        s = fine_grid(k, 1e-2)
        eta = HistoryFunction.from_callable(lambda x: np.sin(x) * np.exp(-0.1 * x), s, LAM1)
        assert m_inner(k, eta, eta) == m_norm_sq(k, eta)

    def test_zero_partner(self):
        k = make_exponential(1, 1)
        s = fine_grid(k, 1e-2)
        eta = HistoryFunction.from_callable(lambda x: 1 - np.exp(-x), s, LAM1)
        zero = HistoryFunction(s, np.zeros((s.size, 1)), LAM1)
        assert m_inner(k, eta, zero) == 0.0

    def test_closed_form_one_third(self):
        # int e^-s (1 - e^-s)^2 ds = 1 - 1 + 1/3
        k = make_exponential(1, 1)
        s = fine_grid(k, 1e-3)
        eta = HistoryFunction.from_callable(lambda x: 1 - np.exp(-x), s, LAM1)
        assert m_norm_sq(k, eta, constant_tail=True) == pytest.approx(1 / 3, abs=1e-7)

    def test_modes_weighted_by_eigenvalues(self):
        k = make_exponential(1, 1)
        s = fine_grid(k, 1e-2)
        lam = np.array([1.0, 4.0])
        eta = HistoryFunction.from_callable(lambda x: np.column_stack([1 - np.exp(-x)] * 2), s, lam)
        single = HistoryFunction.from_callable(lambda x: 1 - np.exp(-x), s, LAM1)
        assert m_norm_sq(k, eta) == pytest.approx(5 * m_norm_sq(k, single), rel=1e-14)

    def test_grid_mismatch(self):
        k = make_exponential(1, 1)
        a = HistoryFunction.from_callable(np.sin, np.linspace(0, 1, 11), LAM1)
        b = HistoryFunction.from_callable(np.sin, np.linspace(0, 1, 21), LAM1)
        with pytest.raises(GridMismatchError):
            m_inner(k, a, b)

    def test_values_are_read_only(self):
        eta = HistoryFunction.from_callable(np.sin, np.linspace(0, 1, 11), LAM1)
        with pytest.raises(ValueError):
            eta.values[0, 0] = 1.0


class TestDomain:
    def test_nonvanishing_at_zero_rejected(self):
        s = np.linspace(0, 5, 101)
        with pytest.raises(DomainError):
            DomainTElement.from_callables(np.cos, lambda x: -np.sin(x), s, LAM1)

    def test_extrapolated_limit(self):
        s = np.linspace(0.01, 5, 500)
        DomainTElement.from_callables(lambda x: x, np.ones_like, s, LAM1)
        with pytest.raises(DomainError):
            DomainTElement.from_callables(lambda x: x + 0.1, np.ones_like, s, LAM1)

    def test_plain_history_not_enough_for_identity(self):
        k = make_exponential(1, 1)
        eta = HistoryFunction.from_callable(np.sin, np.linspace(0, 1, 11), LAM1)
        with pytest.raises(DomainError):
            generator_identity_check(k, eta)


TEST_HISTORIES = [
    ("s_exp", lambda s: s * np.exp(-s), lambda s: (1 - s) * np.exp(-s)),
    ("one_minus_exp", lambda s: 1 - np.exp(-s), lambda s: np.exp(-s)),
    ("damped_sine", lambda s: np.sin(s) / (1 + s * s), lambda s: (np.cos(s) * (1 + s * s) - 2 * s * np.sin(s)) / (1 + s * s) ** 2),
]
KERNELS = {
    "exponential": make_exponential(1, 1),
    "oscillating": make_oscillating(),
    "staircase": make_staircase(),
}


class TestGeneratorIdentity:
    def test_zero_history(self):
        k = make_oscillating()
        s = fine_grid(k, 1e-2)
        eta = DomainTElement.from_callables(np.zeros_like, np.zeros_like, s, LAM1)
        assert tuple(generator_identity_check(k, eta)) == (0.0, 0.0, 0.0)

    def test_exponential_closed_form(self):
        # <-eta', eta>_M with eta = s e^-s and g = e^-s: -int e^-3s s (1 - s) ds = -(1/9 - 2/27) = -1/27
        k = make_exponential(1, 1)
        s = identity_grid(k, ds=1e-4)
        eta = DomainTElement.from_callables(TEST_HISTORIES[0][1], TEST_HISTORIES[0][2], s, LAM1)
        lhs, rhs, gap = generator_identity_check(k, eta)
        assert lhs == pytest.approx(-1 / 27, abs=1e-8)
        assert gap <= 1e-8

    @pytest.mark.parametrize("kname", list(KERNELS))
    @pytest.mark.parametrize("name, fn, dfn", TEST_HISTORIES, ids=[h[0] for h in TEST_HISTORIES])
    def test_second_order_convergence(self, kname, name, fn, dfn):
        k = KERNELS[kname]
        gaps = []
        for ds in (2e-3, 1e-3):
            s = identity_grid(k, ds=ds)
            gaps.append(generator_identity_check(k, DomainTElement.from_callables(fn, dfn, s, LAM1)).gap)
        assert 3.5 < gaps[0] / gaps[1] < 4.5


class TestTranslation:
    def setup_method(self):
        self.k = make_exponential(1, 1)
        self.s = np.linspace(0, 30, 3001)
        self.eta = HistoryFunction.from_callable(lambda x: np.sin(x) * np.exp(-0.05 * x), self.s, LAM1)

    def test_identity_at_zero(self):
        assert right_translate(self.k, self.eta, 0.0) is self.eta

    def test_beyond_grid_is_zero(self):
        assert not np.any(right_translate(self.k, self.eta, 31.0).values)

    @pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
    @pytest.mark.parametrize("kname, alpha, delta", [("exponential", 2.0, 0.5), ("oscillating", 2.0, 1.0),
                                                      ("staircase", 2.0, 1.0)])
    def test_growth_bound(self, t, kname, alpha, delta):
        k = KERNELS[kname]
        s = identity_grid(k, ds=2e-3, s_max=40.0)
        eta = HistoryFunction.from_callable(lambda x: np.sin(3 * x) * np.exp(-0.02 * x), s, LAM1)
        moved = right_translate(k, eta, t)
        assert m_norm_sq(k, moved) <= m_norm_sq(k, eta) * np.exp((alpha - delta) * t) * (1 + 1e-9)

    @given(t1=st.floats(0.0, 5.0), t2=st.floats(0.0, 5.0))
    def test_semigroup_law(self, t1, t2):
        a = right_translate(self.k, right_translate(self.k, self.eta, t1), t2)
        b = right_translate(self.k, self.eta, t1 + t2)
        ds = self.s[1] - self.s[0]
        mask = np.abs(self.s - (t1 + t2)) > 2 * ds
        assert np.max(np.abs(a.values[mask] - b.values[mask]), initial=0.0) <= 5 * ds

    @given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 8.0))
    def test_weighted_contraction(self, seed, t):
        k, alpha, delta = make_oscillating(), 2.0, 1.0
        s = np.linspace(0, 40, 2001)
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal(6)
        eta = HistoryFunction.from_callable(
            lambda x: sum(c * np.sin((i + 1) * x) for i, c in enumerate(coeffs)) * np.exp(-0.1 * x), s, LAM1)
        omega = (alpha - delta) / 2
        lhs = np.exp(-2 * omega * t) * m_norm_sq(k, right_translate(k, eta, t))
        assert lhs <= m_norm_sq(k, eta) * (1 + 1e-9) + 1e-14


class TestMildSolution:
    def test_homogeneous_is_translation(self):
        k = make_exponential(1, 1)
        s = np.linspace(0, 10, 1001)
        eta0 = HistoryFunction.from_callable(lambda x: x * np.exp(-x), s, LAM1)
        t, dt = 2.0, 0.01
        mild = mild_solution(k, eta0, np.zeros((201, 1)), t, dt)
        np.testing.assert_allclose(mild.values, right_translate(k, eta0, t).values, atol=1e-14)

    def test_constant_forcing(self):
        k = make_exponential(1, 1)
        s = np.linspace(0, 10, 1001)
        eta0 = HistoryFunction(s, np.zeros((s.size, 1)), LAM1)
        c, t, dt = 0.7, 3.0, 0.01
        mild = mild_solution(k, eta0, np.full((301, 1), c), t, dt)
        np.testing.assert_allclose(mild.values[:, 0], c * np.minimum(s, t), atol=1e-12)

    def test_matches_solver_history(self):
        params = MgtParams(1, 2, 1)
        k = make_exponential(0.5, 1)
        spec = Spectrum.dirichlet1d(2)
        rho, t, dt = 0.2, 2.0, 0.001
        traj = solve(params, k, spec, State([1.0, 0.4], [0.0, 0.3], [0.2, -0.1]), rho, t, dt)
        s = np.linspace(0, 6, 1201)
        eta0 = HistoryFunction(s, RhoCutoff(rho).q(s)[:, None] * traj.U[0][None, :], spec.eigenvalues)
        mild = mild_solution(k, eta0, traj.V, t, dt)
        ref = eta_at(traj, t, s[1:])
        np.testing.assert_allclose(mild.values[1:], ref, atol=2e-5)


class TestResolvent:
    @given(seed=st.integers(0, 2**32 - 1), omega=st.floats(0.0, 3.0))
    def test_contraction(self, seed, omega):
        k = ScaledKernel(make_oscillating(), 0.2)
        s = np.linspace(0, 40, 4001)
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal((5, 2))
        xi = HistoryFunction.from_callable(
            lambda x: np.column_stack([sum(c * np.cos((i + 1) * x) for i, c in enumerate(coeffs[:, j]))
                                       for j in range(2)]), s, np.array([1.0, 9.0]))
        eta = resolvent_solution(xi, omega)
        assert m_norm_sq(k, eta) <= m_norm_sq(k, xi) * (1 + 1e-9)

    def test_exact_for_constant(self):
        s = np.linspace(0, 5, 51)
        xi = HistoryFunction(s, np.ones((51, 1)), LAM1)
        eta = resolvent_solution(xi, 1.0)
        np.testing.assert_allclose(eta.values[:, 0], (1 - np.exp(-2 * s)) / 2, atol=1e-14)
