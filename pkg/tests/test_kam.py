import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.cocycle import QpLinearSystem, rotation_number
from qpkam.fourier import (AnalyticTorusMap, FrequencyVector, golden_frequency,
                           random_sl2_map, scalar_map)
from qpkam.kam import (DegenerateResonanceError, KamParams, ResonanceEscapeError,
                       SchemeDivergenceError, TruncationCapWarning, classify,
                       conjugate_remainder, eigen_data, forward_construct, kam_step,
                       reduce, resonance_scan, resonant_rotation, rotate_system,
                       solve_homological, verify_conjugation)
from qpkam.spectrum import SchrodingerFlow

OMEGA = golden_frequency()
TURN = 2 * np.pi


def rot_gen(nu):
    return np.array([[0.0, nu], [-nu, 0.0]])


def commutator(A, Z):
    return AnalyticTorusMap(np.einsum("ij,...jk->...ik", A, Z.coeffs)
                            - np.einsum("...ij,jk->...ik", Z.coeffs, A), Z.r)


class TestEigenData:
    def test_elliptic(self):
        e = eigen_data(rot_gen(0.8))
        assert e.kind == "elliptic" and e.xi == pytest.approx(0.8)

    def test_hyperbolic(self):
        e = eigen_data(np.diag([0.3, -0.3]))
        assert e.kind == "hyperbolic" and e.xi == pytest.approx(0.3j)

    def test_nilpotent(self):
        e = eigen_data(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert e.kind == "nilpotent" and e.xi == 0 and e.nilpotent_rank == 1

    def test_condition_number(self):
        assert eigen_data(rot_gen(1.0)).condition == pytest.approx(1.0)


class TestResonanceScan:
    def test_far(self):
        assert resonance_scan(0.3, OMEGA, 5, 1e-6) is None

    def test_exact(self):
        xi = TURN * float(np.array([1, 0]) @ OMEGA.array) / 2
        assert resonance_scan(xi, OMEGA, 1, 1e-9) == (1, 0)

    def test_near(self):
        xi = TURN * float(np.array([1, 1]) @ OMEGA.array) / 2 + 1e-9
        assert resonance_scan(xi, OMEGA, 10, 1e-6) == (1, 1)

    def test_tie_is_lexicographic(self):
        w = FrequencyVector((1.0, 1.0))
        # <(1,0),w> = <(0,1),w>: the smaller tuple wins
        assert resonance_scan(np.pi, w, 1, 1e-9) == (0, 1)


class TestHomological:
    def test_constant_forcing_gives_zero(self):
        F = AnalyticTorusMap.constant(np.array([[0.1, 0.2], [0.3, -0.1]]), 2, N=2)
        Z = solve_homological(rot_gen(0.8), F, OMEGA, 4)
        assert np.abs(Z.coeffs).max() == 0.0
        step, A_next, _ = kam_step(0, rot_gen(0.8), F, OMEGA, KamParams(), 0.5)
        np.testing.assert_allclose(A_next, rot_gen(0.8) + F.mean().real)

    def test_single_harmonic(self):
        eps, nu = 1e-3, 0.7
        w = FrequencyVector((1.0,), 0.1, 1.0)
        E12 = np.array([[0.0, 1.0], [0.0, 0.0]])
        F = AnalyticTorusMap.from_modes(1, 1, {(1,): eps / 2 * E12, (-1,): eps / 2 * E12})
        A = rot_gen(nu)
        Z = solve_homological(A, F, w, 1)
        assert set(map(tuple, Z.nonzero_modes(1e-18)[0])) == {(1,), (-1,)}
        lhs = Z.derivative_along(w) - commutator(A, Z)
        np.testing.assert_allclose(lhs.coeffs, F.coeffs, atol=1e-15)
        rem = conjugate_remainder(A, F, Z, w, A, 8)
        assert rem.weighted_norm(0.0) < 10 * eps ** 2

    @pytest.mark.parametrize("seed", range(3))
    def test_nonresonant_bound(self, seed):
        p = KamParams()
        eps = 1e-4
        F = random_sl2_map(np.random.default_rng(seed), 2, 3, eps, r=p.r0).without_mean()
        Z = solve_homological(rot_gen(0.9), F, OMEGA, p.N_j(0, eps))
        assert Z.weighted_norm(p.r0) < eps ** (2 / 3)

    def test_escape_threshold(self):
        xi = np.pi * OMEGA.array[1]
        F = random_sl2_map(np.random.default_rng(0), 2, 2, 1e-3)
        with pytest.raises(ResonanceEscapeError):
            solve_homological(rot_gen(xi), F, OMEGA, 4, thresh=1e-3)


class TestResonantRotation:
    def test_zero_label(self):
        Y = resonant_rotation((0, 0), 0.5, rot_gen(0.5), 2)
        th = np.random.default_rng(0).random((10, 2))
        np.testing.assert_allclose(Y.evaluate(th), np.broadcast_to(np.eye(2), (10, 2, 2)),
                                   atol=1e-15)

    def test_unimodular(self):
        Y = resonant_rotation((1, -1), 0.8, rot_gen(0.8), 2)
        th = np.random.default_rng(1).random((100, 2)) * 2
        np.testing.assert_allclose(np.linalg.det(Y.evaluate(th).real), 1.0, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateResonanceError):
            resonant_rotation((1, 0), 0.0, np.zeros((2, 2)), 2)

    def test_phase_shift(self):
        xi, n = 3.3, np.array([1, 0])
        F = random_sl2_map(np.random.default_rng(2), 2, 2, 1e-3)
        A_new, F_new = rotate_system(n, xi, rot_gen(xi), F, OMEGA)
        assert eigen_data(A_new).xi == pytest.approx(xi - np.pi * float(n @ OMEGA.array))
        assert F_new.is_real()
        before = rotation_number(QpLinearSystem(OMEGA, rot_gen(xi), F), T_max=800).rho
        after = rotation_number(QpLinearSystem(OMEGA, A_new, F_new), T_max=800).rho
        assert before - after == pytest.approx(np.pi * float(n @ OMEGA.array), abs=1e-5)


class TestReduce:
    def test_zero_forcing(self):
        sys = QpLinearSystem(OMEGA, rot_gen(0.7))
        tr = reduce(sys)
        assert len(tr.steps) == 0 and tr.converged
        np.testing.assert_array_equal(tr.B, sys.A0)

    def test_zero_step_is_identity(self):
        step, A_next, F_next = kam_step(0, rot_gen(0.7), AnalyticTorusMap.zeros(2, 3),
                                        OMEGA, KamParams(), 1e-4)
        np.testing.assert_array_equal(A_next, rot_gen(0.7))
        assert step.kind == "NonResonant" and F_next.weighted_norm() == 0

    def test_forward_oracle(self):
        Z = random_sl2_map(np.random.default_rng(2), 2, 1, 0.01)
        B = np.array([[0.1, 0.9], [-0.7, -0.1]])
        sys = forward_construct(Z, B, OMEGA)
        tr = reduce(sys)
        assert abs(np.linalg.det(tr.B) - np.linalg.det(B)) < 1e-8
        assert verify_conjugation(sys, tr) < 1e-8
        norms = [s.F_next_norm for s in tr.steps]
        # quadratic-type decay over the first three steps
        assert norms[1] < norms[0] ** 1.5 and norms[2] < norms[1] ** 1.5

    def test_schrodinger_elliptic(self):
        q = scalar_map(2, 1, {(1, 0): 5e-4, (-1, 0): 5e-4, (0, 1): 5e-4, (0, -1): 5e-4})
        tr = reduce(SchrodingerFlow(OMEGA, q).system_at(2.0))
        assert tr.converged and len(tr.steps) <= 8
        assert tr.residual < KamParams().stop_tol
        assert tr.classification().kind == "Elliptic"

    def test_gap_center_takes_resonant_step(self):
        F = random_sl2_map(np.random.default_rng(1), 2, 2, 1e-4, r=0.05)
        sys = QpLinearSystem(OMEGA, rot_gen(np.pi), F)
        tr = reduce(sys)
        assert any(s.kind == "Resonant" for s in tr.steps)
        assert tr.label == (1, 0)
        assert verify_conjugation(sys, tr) < 1e-8

    def test_divergence(self):
        F = random_sl2_map(np.random.default_rng(0), 2, 3, 0.5, r=0.05)
        sys = QpLinearSystem(OMEGA, rot_gen(0.9), F)
        with pytest.raises(SchemeDivergenceError):
            reduce(sys, KamParams(eps0=1e-6))
        tr = reduce(sys, KamParams(eps0=1e-6), raise_on_divergence=False)
        assert not tr.converged

    def test_cap_warning(self):
        with pytest.warns(TruncationCapWarning):
            assert KamParams(N_cap=10).N_j(0, 1e-4) == 10


class TestClassify:
    def test_elliptic(self):
        assert classify(rot_gen(0.4)).kind == "Elliptic"
        assert classify(rot_gen(0.4)).value == pytest.approx(0.4)

    def test_hyperbolic(self):
        r = classify(np.diag([0.2, -0.2]))
        assert r.kind == "Hyperbolic" and r.value == pytest.approx(0.2)

    def test_parabolic(self):
        r = classify(np.array([[0.0, 0.0], [0.3, 0.0]]))
        assert r.kind == "Parabolic" and r.value == pytest.approx(0.3)

    def test_zero(self):
        assert classify(np.zeros((2, 2)), eta=1e-12).kind == "Zero"

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-2, 2), st.floats(0.05, 3))
    def test_parabolic_invariant_under_rotation(self, angle, kappa):
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        B = R @ np.array([[0.0, 0.0], [kappa, 0.0]]) @ R.T
        r = classify(B, eta=1e-9)
        assert r.kind == "Parabolic" and abs(r.value) == pytest.approx(kappa, rel=1e-9)
