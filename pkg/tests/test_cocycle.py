import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.cocycle import (QpLinearSystem, constant_cocycle, fibered_rotation_number,
                           integrate_flow, lyapunov_exponent, poincare_map, rotation_number,
                           schrodinger_rotation_numbers)
from qpkam.fourier import GOLDEN, AnalyticTorusMap, golden_frequency, random_sl2_map
from qpkam.kam import forward_construct
from qpkam.sl2 import rotation
from qpkam.spectrum import amo_cocycle

OMEGA = golden_frequency()


def rot_gen(nu):
    return np.array([[0.0, nu], [-nu, 0.0]])


def small_system(seed=0, size=0.05, nu=0.8):
    F = random_sl2_map(np.random.default_rng(seed), 2, 2, size)
    return QpLinearSystem(OMEGA, rot_gen(nu), F)


class TestSystem:
    def test_rejects_trace(self):
        with pytest.raises(ValueError):
            QpLinearSystem(OMEGA, np.eye(2))

    def test_rejects_complex_forcing(self):
        F = AnalyticTorusMap.from_modes(2, 1, {(1, 0): np.array([[0, 1], [0, 0]])})
        with pytest.raises(ValueError):
            QpLinearSystem(OMEGA, rot_gen(1.0), F)

    def test_generator_is_traceless(self):
        g = small_system().generator(np.linspace(0, 10, 17))
        assert np.abs(g[:, 0, 0] + g[:, 1, 1]).max() < 1e-12


class TestFlow:
    def test_constant_rotation(self):
        Phi = integrate_flow(QpLinearSystem(OMEGA, rot_gen(0.7)), 1.0)
        want = np.array([[np.cos(0.7), np.sin(0.7)], [-np.sin(0.7), np.cos(0.7)]])
        np.testing.assert_allclose(Phi, want, atol=1e-10)

    def test_constant_hyperbolic(self):
        lam = 0.4
        Phi = integrate_flow(QpLinearSystem(OMEGA, np.diag([lam, -lam])), 2.0)
        np.testing.assert_allclose(Phi, np.diag([np.exp(2 * lam), np.exp(-2 * lam)]),
                                   rtol=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_unimodular(self, seed):
        assert abs(np.linalg.det(integrate_flow(small_system(seed), 1.0)) - 1) < 1e-10

    @settings(max_examples=8, deadline=None)
    @given(st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.integers(0, 100))
    def test_cocycle_property(self, t, s, seed):
        sys = small_system(seed, size=0.3)
        Pt = integrate_flow(sys, t, 1e-12)
        Ps = integrate_flow(sys.with_phase(np.asarray(sys.theta0) + t * OMEGA.array), s, 1e-12)
        np.testing.assert_allclose(integrate_flow(sys, t + s, 1e-12), Ps @ Pt, atol=1e-8)

    def test_poincare_map(self):
        sys = small_system(2)
        P = poincare_map(sys, np.array([0.0, 0.3, 0.6]))
        assert P.shape == (3, 2, 2)
        np.testing.assert_allclose(np.linalg.det(P), 1.0, atol=1e-10)
        np.testing.assert_allclose(P[0], integrate_flow(sys, 1.0, 1e-12), atol=1e-10)

    def test_poincare_of_rotation(self):
        nu = 0.37
        P = poincare_map(QpLinearSystem(OMEGA, rot_gen(2 * np.pi * nu)), np.array(0.2))
        np.testing.assert_allclose(P, rotation(-2 * np.pi * nu), atol=1e-10)


class TestRotationNumber:
    def test_rotation(self):
        est = rotation_number(QpLinearSystem(OMEGA, rot_gen(0.9)), T_max=400)
        assert est.rho == pytest.approx(0.9, abs=1e-8)

    def test_hyperbolic_is_zero(self):
        est = rotation_number(QpLinearSystem(OMEGA, np.diag([0.5, -0.5])), T_max=400)
        assert abs(est.rho) < 1e-3

    def test_self_consistent_in_horizon(self):
        sys = small_system(3, size=0.1)
        a = rotation_number(sys, T_max=1000, tol=1e-5)
        b = rotation_number(sys, T_max=2000, tol=1e-5)
        assert a.converged
        assert abs(a.rho - b.rho) < 1e-5

    def test_invariant_under_zero_degree_conjugation(self):
        Z = random_sl2_map(np.random.default_rng(4), 2, 1, 0.05)
        sys = forward_construct(Z, rot_gen(0.6), OMEGA, N_out=5)
        est = rotation_number(sys, T_max=1000)
        assert est.rho == pytest.approx(0.6, abs=1e-5)

    def test_resonant_shift(self):
        # conjugating A by Y = exp(pi <n,theta> A / xi) gives (1 - pi<n,w>/xi) A
        xi, n = 2.5, np.array([1, -1])
        shift = np.pi * float(n @ OMEGA.array)
        a = rotation_number(QpLinearSystem(OMEGA, rot_gen(xi)), T_max=400).rho
        b = rotation_number(QpLinearSystem(OMEGA, (1 - shift / xi) * rot_gen(xi)),
                            T_max=400).rho
        assert a - b == pytest.approx(shift, abs=1e-8)


class TestLyapunov:
    def test_hyperbolic(self):
        assert lyapunov_exponent(QpLinearSystem(OMEGA, np.diag([0.3, -0.3])),
                                 T_max=1000) == pytest.approx(0.3, abs=1e-6)

    def test_elliptic(self):
        T = 1000
        assert lyapunov_exponent(QpLinearSystem(OMEGA, rot_gen(1.1)), T) < 10 * np.log(T) / T

    def test_nonnegative(self):
        assert lyapunov_exponent(small_system(5, 0.3), 200) >= 0.0


class TestDiscrete:
    @pytest.mark.parametrize("beta", [0.1, 0.27, 0.43])
    def test_constant_rotation(self, beta):
        c = constant_cocycle(rotation(2 * np.pi * beta), (GOLDEN,))
        assert fibered_rotation_number(c, 20_000).rho == pytest.approx(beta, abs=1e-8)

    def test_not_unimodular(self):
        with pytest.raises(ValueError):
            constant_cocycle(2 * np.eye(2))

    @pytest.mark.parametrize("beta", [0.1, 0.2, 0.37])
    def test_free_amo(self, beta):
        c = amo_cocycle(0.0, GOLDEN, -2 * np.cos(2 * np.pi * beta))
        assert fibered_rotation_number(c, 20_000).rho == pytest.approx(beta, abs=1e-6)

    def test_free_amo_opposite_sign(self):
        beta = 0.2
        c = amo_cocycle(0.0, GOLDEN, 2 * np.cos(2 * np.pi * beta))
        assert fibered_rotation_number(c, 20_000).rho == pytest.approx(0.5 - beta, abs=1e-6)

    def test_free_amo_center(self):
        c = amo_cocycle(0.0, GOLDEN, 0.0)
        assert fibered_rotation_number(c, 20_000).rho == pytest.approx(0.25, abs=1e-8)

    def test_batch_matches_single(self):
        E = np.array([-1.0, 0.35, 0.76])
        V = lambda th: 0.6 * np.cos(2 * np.pi * th)
        rho, err, lyap = schrodinger_rotation_numbers(GOLDEN, V, E, N=20_000)
        for e, r in zip(E, rho):
            one = fibered_rotation_number(amo_cocycle(0.3, GOLDEN, e), 20_000)
            assert r == pytest.approx(one.rho, abs=1e-10)

    def test_gap_plateau_and_positive_lyapunov(self):
        rho, _, lyap = schrodinger_rotation_numbers(
            GOLDEN, lambda th: 0.6 * np.cos(2 * np.pi * th), [0.76], N=100_000)
        assert rho[0] == pytest.approx(GOLDEN / 2, abs=1e-4)
        assert lyap[0] > 0.05
