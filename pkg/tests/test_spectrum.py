import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkam.cocycle import fibered_rotation_number, poincare_map
from qpkam.fourier import GOLDEN, AnalyticTorusMap, golden_frequency, random_sl2_map, scalar_map
from qpkam.sl2 import expm_sl2
from qpkam.spectrum import (AmoEmbedded, GapAmbiguityError, GapRecord, GenericQuadratic,
                            OutOfIntervalError, PreconditionError, SchrodingerFlow, amo_cocycle,
                            amo_normal_frame, amo_nu, apply_L, detect_gaps, h_eval, invert_L,
                            label_table, local_embed, measure_check, monotonicity_violations,
                            select_ktilde, sweep)
from qpkam.spectrum.sweep import SweepCurve

OMEGA = golden_frequency()
J = np.array([[0.0, -1.0], [1.0, 0.0]])


def synthetic_curve(E, rho, omega=OMEGA.omega):
    n = len(E)
    return SweepCurve(np.asarray(E, float), np.asarray(rho, float), np.zeros(n), np.zeros(n),
                      np.zeros(n), ["Elliptic"] * n, [[] for _ in range(n)], tuple(omega),
                      "synthetic")


class TestFamilies:
    def test_generic_zero_is_constant(self):
        fam = GenericQuadratic(OMEGA, AnalyticTorusMap.zeros(2, 1))
        sys = fam.system_at(1.3)
        np.testing.assert_allclose(sys.generator(np.linspace(0, 5, 7)),
                                   np.broadcast_to([[0, 1.3], [-1.3, 0]], (7, 2, 2)))

    def test_interval(self):
        fam = GenericQuadratic(OMEGA, AnalyticTorusMap.zeros(2, 1))
        with pytest.raises(OutOfIntervalError):
            fam.system_at(10.0)

    def test_schrodinger_companion(self):
        q = scalar_map(2, 1, {(1, 0): 0.1, (-1, 0): 0.1, (0, 1): 0.05, (0, -1): 0.05})
        fam = SchrodingerFlow(OMEGA, q)
        E = 2.3
        P = fam.companion_frame(E)
        t = np.linspace(0, 3, 11)
        gen = fam.system_at(E).generator(t)
        qv = q.evaluate(t[:, None] * OMEGA.array)[:, 0, 0].real
        want = np.zeros((len(t), 2, 2))
        want[:, 0, 1] = 1.0
        want[:, 1, 0] = -E + qv
        np.testing.assert_allclose(np.linalg.inv(P) @ gen @ P, want, atol=1e-12)

    def test_amo_free_embedding_is_trivial(self):
        fam = AmoEmbedded(0.0, GOLDEN, interval=(0.2, 1.2))
        sys = fam.system_at(0.7)
        assert sys.F.weighted_norm(0.0) < 1e-10

    def test_amo_interval_precondition(self):
        with pytest.raises(ValueError):
            AmoEmbedded(0.3, GOLDEN, interval=(-1.5, 1.5))


class TestAmo:
    def test_free_center(self):
        c = amo_cocycle(0.0, GOLDEN, 0.0)
        np.testing.assert_array_equal(c.matrices(np.zeros((1, 1)))[0], [[0, -1], [1, 0]])
        assert fibered_rotation_number(c, 10_000).rho == pytest.approx(0.25, abs=1e-10)

    @pytest.mark.parametrize("beta", [0.05, 0.3, 0.45])
    def test_free_energy_to_rotation(self, beta):
        c = amo_cocycle(0.0, GOLDEN, -2 * np.cos(2 * np.pi * beta))
        assert fibered_rotation_number(c, 10_000).rho == pytest.approx(beta, abs=1e-5)

    @pytest.mark.parametrize("E", [0.0, 1.0, -1.3])
    def test_normal_frame(self, E):
        B, M = amo_normal_frame(E)
        np.testing.assert_allclose(expm_sl2(B), [[-E, -1], [1, 0]], atol=1e-12)
        np.testing.assert_allclose(np.linalg.inv(M) @ B @ M, amo_nu(E) * J, atol=1e-12)

    def test_normal_frame_edge(self):
        with pytest.raises(ValueError):
            amo_normal_frame(2.0)

    def test_discrete_sweep_plateau(self):
        fam = AmoEmbedded(0.3, GOLDEN, interval=(0.2, 1.2))
        curve = sweep(fam, np.linspace(0.2, 1.2, 201), N=50_000)
        gaps = detect_gaps(curve, k_max=1, plateau_tol=1e-4)
        assert [g.label[1:] for g in gaps] == [(1,)]
        g = gaps[0]
        assert g.value == pytest.approx(GOLDEN / 2)
        assert g.a < 0.76 < g.b
        assert g.interior_class == "Hyperbolic"


class TestGapDetection:
    def test_flat_curve(self):
        v = 0.5 * OMEGA.array[0]
        gaps = detect_gaps(synthetic_curve(np.linspace(1, 2, 11), np.full(11, v)), k_max=2)
        assert len(gaps) == 1
        assert gaps[0].label == (1, 0) and (gaps[0].a, gaps[0].b) == (1.0, 2.0)

    def test_monotone_curve(self):
        E = np.linspace(0, 1, 50)
        assert detect_gaps(synthetic_curve(E, 0.1 + 0.013 * E + 1e-5 * np.pi), k_max=2) == []

    def test_single_hit_is_crossing(self):
        E = np.linspace(0, 1, 5)
        rho = np.array([0.49, 0.495, 0.5, 0.505, 0.51])
        assert detect_gaps(synthetic_curve(E, rho), k_max=1, plateau_tol=1e-6) == []

    def test_ambiguity(self):
        w = (1.0, 1.0)
        curve = synthetic_curve(np.linspace(0, 1, 5), np.full(5, 0.5), omega=w)
        with pytest.raises(GapAmbiguityError):
            detect_gaps(curve, k_max=1)

    def test_monotonicity(self):
        curve = synthetic_curve(np.arange(5.0), [0.1, 0.2, 0.15, 0.3, 0.4])
        assert monotonicity_violations(curve) == [2]

    def test_label_table_modulus(self):
        labels = label_table((1.0, GOLDEN), 1, 0.0, 0.5, modulus=0.5)
        vals = sorted(v for _, v in labels)
        np.testing.assert_allclose(vals, sorted([0.0, GOLDEN / 2, 1 - GOLDEN / 2 - 0.5, 0.5]))

    def test_zero_forcing_sweep(self):
        fam = GenericQuadratic(OMEGA, AnalyticTorusMap.zeros(2, 1))
        E = np.linspace(0.6, 3.4, 15)
        curve = sweep(fam, E, T=200.0)
        np.testing.assert_allclose(curve.rho, E / (2 * np.pi), atol=1e-10)
        assert detect_gaps(curve, k_max=3, plateau_tol=1e-9) == []


class TestMeasure:
    def gap(self, a, b):
        return GapRecord((1, 0), 0.5, a, b, "Hyperbolic")

    def test_empty(self):
        assert measure_check([], 1e-4)

    def test_within_bound(self):
        assert measure_check([self.gap(0.0, 0.1), self.gap(1.0, 1.2)], 1e-4)

    def test_violation(self):
        assert not measure_check([self.gap(0.0, 2.0)], 1e-4)


class TestEmbeddingPieces:
    def test_h_values(self):
        assert h_eval(0.0) == pytest.approx(1.0)
        assert abs(h_eval(0.5)) == pytest.approx(2 / np.pi)

    def test_h_domain(self):
        with pytest.raises(PreconditionError):
            h_eval(0.9)

    def test_h_range(self):
        x = np.random.default_rng(0).uniform(-5 / 6, 5 / 6, 10_000)
        m = np.abs(h_eval(x))
        assert m.min() >= 3 / (5 * np.pi) - 1e-12 and m.max() <= 1 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-0.99, 0.99))
    def test_h_closed_form(self, x):
        assert abs(h_eval(x * 5 / 6)) == pytest.approx(abs(np.sinc(x * 5 / 6)), abs=1e-12)

    def test_ktilde_trivial(self):
        kt, bound = select_ktilde((0,), (GOLDEN,), (0.1, 0.1))
        assert kt == 0 and bound == pytest.approx(0.2)

    def test_ktilde_integer_crossing(self):
        # <k,mu> + 2 nu hits an integer inside the range: unique kt, bound < 1/3
        k, mu = (1,), (GOLDEN,)
        nu0 = (1 - GOLDEN) / 2
        kt, bound = select_ktilde(k, mu, (nu0 - 0.05, nu0 + 0.05))
        assert kt == -1 and bound < 1 / 3

    def test_ktilde_half_integer(self):
        k, mu = (1,), (GOLDEN,)
        nu0 = (1.5 - GOLDEN) / 2
        kt, bound = select_ktilde(k, mu, (nu0 - 0.05, nu0 + 0.05))
        assert kt == -2 and bound <= 5 / 6

    def test_ktilde_failure(self):
        with pytest.raises(PreconditionError):
            select_ktilde((0,), (GOLDEN,), (0.0, 0.5))

    def test_invert_zero(self):
        F = invert_L(AnalyticTorusMap.zeros(1, 2), 0.1, (GOLDEN,))
        assert np.abs(F.coeffs).max() == 0

    @pytest.mark.parametrize("seed", range(3))
    def test_round_trip(self, seed):
        pauli = np.array([[0.3, 0.1], [0.7, -0.3]])
        phi = AnalyticTorusMap.constant(pauli, 1, N=2)
        if seed:
            phi = phi + random_sl2_map(np.random.default_rng(seed), 1, 2, 0.5)
        F = invert_L(phi, 0.1, (GOLDEN,))
        back = apply_L(F, 0.1, (GOLDEN,), N_out=phi.N)
        np.testing.assert_allclose(back.coeffs, phi.coeffs, atol=1e-12)


class TestLocalEmbed:
    def test_zero(self):
        nu = 0.13
        res = local_embed(nu, AnalyticTorusMap.zeros(1, 2), (GOLDEN,))
        assert np.abs(res.F.coeffs).max() == 0 and res.iterations == 0

    def test_small_generator(self):
        nu = 0.13
        G = random_sl2_map(np.random.default_rng(0), 1, 2, 1e-3)
        res = local_embed(nu, G, (GOLDEN,), tol=1e-10, N=8)
        assert res.poincare_residual < 1e-8
        assert res.iterations <= 6
        assert res.within_bound

    def test_truncation_floor(self):
        # with the table order of G itself the residual stalls at the truncation error
        from qpkam.spectrum import EmbedDivergenceError
        G = random_sl2_map(np.random.default_rng(0), 1, 2, 1e-3)
        with pytest.raises(EmbedDivergenceError):
            local_embed(0.13, G, (GOLDEN,), tol=1e-10, N=2)
