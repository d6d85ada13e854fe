import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.cocycle import QpLinearSystem, integrate_flow
from qpkam.fourier import golden_frequency, random_sl2_map, scalar_map
from qpkam.kam import ReducedForm
from qpkam.quantum import (HermiteState, InsufficientSamplesError, QuadraticSymbol,
                           explicit_hyperbolic, explicit_parabolic, fit_growth, gaussian_evolve,
                           gaussian_hermite, gaussian_sobolev, gaussian_trace, hermite_evolve,
                           hermite_functions, norm_equivalence_check, predict_growth,
                           sobolev_norm, weyl_matrix)
from qpkam.sl2 import rotation

OMEGA = golden_frequency()


def rot_gen(nu):
    return np.array([[0.0, nu], [-nu, 0.0]])


class TestSobolevNorm:
    def test_ground_state(self):
        assert sobolev_norm(HermiteState.mode(0, 8), 2) == pytest.approx(1.0)

    def test_first_mode(self):
        assert sobolev_norm(HermiteState.mode(1, 8), 1) == pytest.approx(math.sqrt(3))

    def test_superposition(self):
        c = np.zeros(8, complex)
        c[0] = c[2] = 1 / math.sqrt(2)
        assert sobolev_norm(HermiteState(c), 1) == pytest.approx(math.sqrt(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0, 3))
    def test_monotone_in_s(self, seed, s):
        c = np.random.default_rng(seed).normal(size=16) + 0j
        assert sobolev_norm(c, s + 0.5) >= sobolev_norm(c, s) * (1 - 1e-12)


class TestHermiteFunctions:
    def test_orthonormal(self):
        x = np.linspace(-20, 20, 8001)
        H = hermite_functions(30, x)
        G = H @ H.T * (x[1] - x[0])
        np.testing.assert_allclose(G, np.eye(30), atol=1e-10)

    def test_wide_grid(self):
        x = np.linspace(-60, 60, 24001)
        H = hermite_functions(600, x)
        assert np.all(np.isfinite(H))
        norms = np.sum(H ** 2, axis=1) * (x[1] - x[0])
        np.testing.assert_allclose(norms, 1.0, atol=1e-8)

    def test_overflow(self):
        with pytest.raises(OverflowError):
            hermite_functions(4, np.array([5e3]))


class TestWeyl:
    def test_free_oscillator(self):
        nu = 0.7
        H = weyl_matrix(rot_gen(nu), 10)
        np.testing.assert_allclose(H, np.diag(nu * (2 * np.arange(10) + 1) / 2))

    def test_position_squared(self):
        # h = x^2 / 2 has generator [[0, 0], [-1, 0]]
        H = weyl_matrix(np.array([[0.0, 0.0], [-1.0, 0.0]]), 10)
        assert H[0, 0].real == pytest.approx(0.25)     # <0| x^2 / 2 |0>

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_hermitian(self, a, b, c):
        H = weyl_matrix(np.array([[b, c], [-a, -b]]), 12)
        np.testing.assert_allclose(H, H.conj().T)

    def test_too_small(self):
        with pytest.raises(ValueError):
            weyl_matrix(rot_gen(1.0), 2)


class TestNormEquivalence:
    def test_ground_state(self):
        assert norm_equivalence_check(HermiteState.mode(0, 64), 1)[2]

    @pytest.mark.parametrize("s", [1, 2])
    def test_mode_ten(self, s):
        assert norm_equivalence_check(HermiteState.mode(10, 64), s)[2]

    def test_dilated_gaussian(self):
        c = gaussian_hermite(1j / 16, 512)
        assert abs(np.linalg.norm(c) - 1) < 1e-10
        assert norm_equivalence_check(HermiteState(c), 1)[2]


class TestGaussian:
    def test_identity_flow(self):
        assert gaussian_evolve(np.eye(2), 0.3 + 2j) == pytest.approx(0.3 + 2j)

    def test_coherent_state(self):
        Phis = np.array([rotation(a) for a in np.linspace(0, 7, 20)])
        np.testing.assert_allclose(gaussian_evolve(Phis, 1j), 1j, atol=1e-14)

    def test_cocycle_identity(self):
        rng = np.random.default_rng(3)
        A = integrate_flow(QpLinearSystem(OMEGA, [[0.2, 1.0], [-0.5, -0.2]]), 1.3)
        B = integrate_flow(QpLinearSystem(OMEGA, [[-0.3, 0.4], [-1.1, 0.3]]), 0.7)
        b0 = complex(rng.normal(), 1 + rng.random())
        assert gaussian_evolve(B @ A, b0) == pytest.approx(gaussian_evolve(B, gaussian_evolve(A, b0)))

    def test_norms(self):
        assert gaussian_sobolev(1j, 1) ** 2 == pytest.approx(1.0)
        assert gaussian_sobolev(2j, 1) ** 2 == pytest.approx(5 / 4)
        assert gaussian_sobolev(1 + 1j, 1) ** 2 == pytest.approx(3 / 2)
        assert gaussian_sobolev(1j, 2) == pytest.approx(1.0)

    @pytest.mark.parametrize("beta", [1j, 2j, 1 + 1j, -0.5 + 0.3j])
    def test_closed_form_matches_hermite(self, beta):
        c = gaussian_hermite(beta, 512)
        for s in (0, 1, 2):
            assert sobolev_norm(c, s) == pytest.approx(float(gaussian_sobolev(beta, s)), rel=1e-9)

    def test_rejects_lower_half_plane(self):
        with pytest.raises(ValueError):
            gaussian_evolve(np.eye(2), -1j)


class TestHermiteEvolve:
    def test_free_modes_constant(self):
        sys = QpLinearSystem(OMEGA, rot_gen(1.0))
        tr = hermite_evolve(sys, HermiteState.mode(3, 64), np.linspace(0.5, 5, 10), (1.0, 2.0))
        np.testing.assert_allclose(tr.norms[:, 0], math.sqrt(7), rtol=1e-12)
        np.testing.assert_allclose(np.abs(tr.final_state.coeffs[3]), 1.0, rtol=1e-12)

    def test_coherent_state_invariant(self):
        sys = QpLinearSystem(OMEGA, rot_gen(1.0))
        u0 = HermiteState(gaussian_hermite(1j, 64))
        tr = hermite_evolve(sys, u0, np.linspace(1, 10, 10), (1.0,))
        np.testing.assert_allclose(tr.norms[:, 0], 1.0, rtol=1e-12)

    def test_matches_gaussian_oracle(self):
        F = random_sl2_map(np.random.default_rng(0), 2, 2, 0.3)
        sys = QpLinearSystem(OMEGA, rot_gen(1.0), F)
        t = np.linspace(0.5, 8, 16)
        beta0 = 1j
        u0 = HermiteState(gaussian_hermite(beta0, 256))
        tr = hermite_evolve(sys, u0, t, (1.0,))
        ref = gaussian_trace(sys, beta0, t, (1.0,))
        np.testing.assert_allclose(tr.norms[:, 0], ref.norms[:, 0], rtol=1e-4)
        assert tr.unitarity_drift() < 1e-10

    def test_dt_guard(self):
        sys = QpLinearSystem(OMEGA, rot_gen(1.0))
        with pytest.raises(ValueError):
            hermite_evolve(sys, HermiteState.mode(0, 64), [1.0], dt=1.0)

    def test_initial_tail(self):
        sys = QpLinearSystem(OMEGA, rot_gen(1.0))
        with pytest.raises(ValueError):
            hermite_evolve(sys, HermiteState.mode(63, 64), [1.0])

    def test_leakage_truncates(self):
        sys = QpLinearSystem(OMEGA, np.diag([0.5, -0.5]))
        tr = hermite_evolve(sys, HermiteState.mode(0, 64), np.linspace(1, 40, 40))
        assert not tr.trusted[-1] and tr.t[-1] < 40
        assert tr.leaked_at == tr.t[-1]

    def test_symbol_to_system(self):
        a = scalar_map(2, 1, {(1, 0): 0.1, (-1, 0): 0.1})
        sys = QuadraticSymbol(OMEGA, 0.8, a=a).to_system()
        g = sys.generator(np.array([0.0]))[0]
        np.testing.assert_allclose(g, [[0, 0.8], [-1.0, 0]])


class TestExplicit:
    def test_hyperbolic_l2(self):
        out = explicit_hyperbolic(1j, 0.5, 1.0, 0)
        assert out["l2_t"] == pytest.approx(1.0, abs=1e-10)

    def test_hyperbolic_moment_ratio(self):
        out = explicit_hyperbolic(1j, 0.5, 1.0, 1)
        assert out["x_ratio"] == pytest.approx(math.e, rel=1e-10)
        assert out["d_ratio"] == pytest.approx(1 / math.e, rel=1e-10)

    def test_parabolic_l2(self):
        np.testing.assert_allclose(explicit_parabolic(1j, 0.7, np.linspace(0, 10, 5), 0), 1.0)

    def test_parabolic_quadrature_agrees(self):
        gauss = lambda x: np.pi ** -0.25 * np.exp(-x ** 2 / 2)
        t = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(explicit_parabolic(gauss, 0.7, t, 1),
                                   explicit_parabolic(1j, 0.7, t, 1), rtol=1e-8)


class TestGrowth:
    def test_predict(self):
        assert predict_growth(ReducedForm("Elliptic", 1.0), 3).kind == "Bounded"
        law = predict_growth(ReducedForm("Hyperbolic", 0.2), 2)
        assert law.kind == "Exponential" and law.rate == pytest.approx(0.4)
        law = predict_growth(ReducedForm("Parabolic", -1.0), 1)
        assert law.kind == "Polynomial" and law.degree == 1

    def test_exponential(self):
        t = np.linspace(0, 50, 200)
        f = fit_growth(t, np.exp(0.3 * t))
        assert f.kind == "Exponential" and f.value == pytest.approx(0.3, abs=0.01)

    def test_polynomial(self):
        t = np.linspace(1, 100, 200)
        f = fit_growth(t, t ** 2)
        assert f.kind == "Polynomial" and f.value == pytest.approx(2.0, abs=0.05)

    def test_bounded(self):
        t = np.linspace(0, 100, 200)
        y = 3.0 * (1 + 0.01 * np.random.default_rng(0).normal(size=200))
        assert fit_growth(t, y).kind == "Bounded"

    def test_insufficient(self):
        with pytest.raises(InsufficientSamplesError):
            fit_growth(np.linspace(0, 6, 30), np.ones(30))
