import numpy as np
import pytest

from qdpair import cascade as c
from qdpair import quantum as q


def params(s=0.0, tau_x=0.051, tau_xx=0.018, k=0.892):
    return c.CascadeParams(s=s, tau_x=tau_x, tau_xx=tau_xx, k=k)


class TestCascadeState:
    def test_no_accumulated_phase(self):
        psi = c.cascade_state_at(0.0, params(s=3.7))
        assert np.allclose(psi, q.PHI_PLUS)

    def test_degenerate_splitting(self):
        psi = c.cascade_state_at(2.5, params(s=0.0))
        assert np.allclose(psi, q.PHI_PLUS)

    def test_half_period_phase(self):
        psi = c.cascade_state_at(1.0, params(s=np.pi * c.HBAR_UEV_NS))
        assert np.allclose(psi, q.PHI_MINUS, atol=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            c.cascade_state_at(-0.1, params())

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            c.CascadeParams(s=-1.0, tau_x=0.05, tau_xx=0.02, k=0.9)
        with pytest.raises(ValueError):
            c.CascadeParams(s=0.0, tau_x=0.05, tau_xx=0.02, k=1.2)
        with pytest.raises(ValueError):
            c.CascadeParams(s=0.0, tau_x=-0.05, tau_xx=0.02, k=0.9)


class TestTimeAveragedState:
    def test_no_precession_no_noise(self):
        rho = c.time_averaged_density_matrix(params(s=0.0, k=1.0))
        assert np.allclose(rho, q.pure_state_density_matrix(q.PHI_PLUS), atol=1e-12)

    def test_fully_dephased_limit(self):
        # the coherence falls as 1/(2 sqrt(1 + x^2)): ~6.5e-6 at s = 1e6 ueV
        rho = c.time_averaged_density_matrix(params(s=1e6, k=1.0))
        assert np.allclose(np.diag(rho), [0.5, 0, 0, 0.5], atol=1e-12)
        assert abs(rho[0, 3]) < 1e-5
        rho = c.time_averaged_density_matrix(params(s=1e10, k=1.0))
        assert np.allclose(rho, np.diag([0.5, 0, 0, 0.5]), atol=1e-9)

    def test_pure_noise(self):
        rho = c.time_averaged_density_matrix(params(s=1.3, k=0.0))
        assert np.allclose(rho, np.eye(4) / 4.0, atol=1e-12)

    def test_always_physical(self):
        for s in (0.0, 0.5, 3.0, 50.0):
            for k in (0.0, 0.5, 1.0):
                rho = c.time_averaged_density_matrix(params(s=s, k=k))
                q.validate_density_matrix(rho)

    def test_coherence_magnitude_and_phase(self):
        p = params(s=2.0, tau_x=0.1, k=1.0)
        x = p.s * p.tau_x / c.HBAR_UEV_NS
        rho = c.time_averaged_density_matrix(p)
        assert abs(rho[0, 3]) == pytest.approx(0.5 / np.sqrt(1 + x * x), abs=1e-12)
        assert np.angle(rho[3, 0]) == pytest.approx(np.arctan(x), abs=1e-12)


class TestAnalyticLaw:
    def test_perfect_limit(self):
        assert c.fef_analytic(params(s=0.0, k=1.0)) == pytest.approx(1.0, abs=1e-15)

    def test_zero_splitting_value(self):
        assert c.fef_analytic(params(s=0.0, k=0.892, tau_x=0.051)) == pytest.approx(0.919, abs=1e-3)

    def test_finite_splitting_value(self):
        assert c.fef_analytic(params(s=2.0, k=0.898, tau_x=0.164)) == pytest.approx(0.876, abs=1e-3)

    def test_matrix_equivalence_on_grid(self):
        for s in (0.0, 0.2, 1.0, 2.0, 5.0, 20.0):
            for tau_x in (0.02, 0.051, 0.12):
                for k in (0.8, 0.892, 1.0):
                    p = params(s=s, tau_x=tau_x, k=k)
                    assert c.fef_of_params(p) == pytest.approx(c.fef_analytic(p), abs=1e-9)

    def test_concurrence_law_on_family(self):
        for s in (0.0, 0.3, 1.5, 6.0):
            for k in (0.85, 0.95, 1.0):
                p = params(s=s, k=k)
                rho = c.time_averaged_density_matrix(p)
                expected = max(0.0, 2.0 * c.fef_analytic(p) - 1.0)
                assert q.concurrence(rho) == pytest.approx(expected, abs=1e-9)

    def test_monotonic_in_splitting(self):
        values = [c.fef_analytic(params(s=s, k=0.9)) for s in np.linspace(0, 30, 40)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_monotonic_in_coherent_fraction(self):
        values = [c.fef_analytic(params(s=1.0, k=k)) for k in np.linspace(0, 1, 30)]
        assert all(a < b for a, b in zip(values, values[1:]))


class TestCurveFit:
    def test_noiseless_round_trip(self):
        s_vals = np.linspace(0.0, 8.0, 15)
        points = [(s, c.fef_analytic(params(s=s, tau_x=0.051, k=0.892)), 0.005) for s in s_vals]
        fit = c.fit_fef_curve(points)
        assert fit.tau_x == pytest.approx(0.051, abs=1e-6)
        assert fit.k == pytest.approx(0.892, abs=1e-6)
        assert fit.n_evaluations > 0

    def test_recovers_short_lifetime_curve(self, rng):
        # samples along the measured splitting range with realistic error bars
        s_vals = np.linspace(0.0, 5.0, 12)
        truth = params(s=0.0, tau_x=0.051, k=0.892)
        points = []
        for s in s_vals:
            f = c.fef_analytic(params(s=s, tau_x=truth.tau_x, k=truth.k))
            points.append((s, f + rng.normal(0.0, 0.002), 0.01))
        fit = c.fit_fef_curve(points)
        assert fit.tau_x == pytest.approx(0.051, abs=0.008)
        assert fit.k == pytest.approx(0.892, abs=0.01)
        assert fit.tau_x_err > 0 and fit.k_err > 0

    def test_too_few_points(self):
        with pytest.raises(c.DegenerateDataError):
            c.fit_fef_curve([(0.0, 0.9, 0.01), (0.0, 0.91, 0.01)])

    def test_degenerate_splitting_values(self):
        with pytest.raises(c.DegenerateDataError):
            c.fit_fef_curve([(1.0, 0.9, 0.01), (1.0, 0.91, 0.01), (1.0, 0.89, 0.01)])


class TestMultiphotonCorrection:
    def test_no_correction_is_identity(self):
        rho = c.time_averaged_density_matrix(params(s=0.4))
        corrected = c.g2_correct_density_matrix(rho, 0.0, 0.0)
        assert np.allclose(corrected, rho, atol=1e-15)

    def test_exactly_inverts_isotropic_mixing(self):
        rho = c.time_averaged_density_matrix(params(s=0.7, k=0.95))
        eps = 0.028
        mixed = (1 - eps) * rho + eps * np.eye(4) / 4.0
        recovered = c.g2_correct_density_matrix(mixed, 0.016, 0.012)
        assert np.max(np.abs(recovered - rho)) < 1e-12

    def test_maximally_mixed_fixed_point(self):
        mixed = np.eye(4) / 4.0
        corrected = c.g2_correct_density_matrix(mixed, 0.1, 0.2)
        assert np.allclose(corrected, mixed, atol=1e-12)

    def test_scalar_algebra_value(self):
        # (0.930 - 0.028/4) / (1 - 0.028), frozen from the defining algebra
        assert c.g2_corrected_fef(0.930, 0.016, 0.012) == pytest.approx(
            0.9495884773662552, abs=1e-12
        )
        # consistent with the measured raw -> corrected shift of 0.93 -> 0.95
        assert c.g2_corrected_fef(0.930, 0.016, 0.012) == pytest.approx(0.95, abs=0.01)

    def test_matrix_and_scalar_paths_agree(self):
        rho = c.time_averaged_density_matrix(params(s=0.2, k=0.9269))
        raw = q.fully_entangled_fraction(rho)
        corrected = c.g2_correct_density_matrix(rho, 0.016, 0.012)
        assert q.fully_entangled_fraction(corrected) == pytest.approx(
            c.g2_corrected_fef(raw, 0.016, 0.012), abs=1e-12
        )

    def test_invalid_inputs(self):
        rho = np.eye(4) / 4.0
        with pytest.raises(ValueError):
            c.g2_correct_density_matrix(rho, 0.6, 0.0)
        with pytest.raises(ValueError):
            c.g2_correct_density_matrix(rho, -0.1, 0.0)


class TestScalars:
    def test_linewidth_examples(self):
        assert c.natural_linewidth(0.270) == pytest.approx(2.44, abs=0.01)
        assert c.natural_linewidth(c.HBAR_UEV_NS) == pytest.approx(1.0, abs=1e-12)
        assert c.natural_linewidth(0.040) == pytest.approx(16.5, abs=0.1)

    def test_linewidth_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            c.natural_linewidth(0.0)

    def test_purcell_examples(self):
        assert c.purcell_factor(0.014, 0.164) == pytest.approx(11.7, abs=0.1)
        assert c.purcell_factor(0.023, 0.214) == pytest.approx(9.3, abs=0.1)
        assert c.purcell_factor(0.1, 0.1) == pytest.approx(1.0, abs=1e-12)
