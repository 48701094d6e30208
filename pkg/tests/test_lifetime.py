import numpy as np
import pytest

from qdpair import lifetime as lt


def expected_trace(model, tau, rise_tau, irf_fwhm, total):
    """Trace carrying the exact expected counts (no Poisson sampling)."""
    noisy = lt.synthesize_trace(model, tau, rise_tau, irf_fwhm, 0.0, seed=0)
    n = len(noisy.bin_centers)
    offsets = np.arange(-(n - 1), n) * noisy.bin_width
    shape = lt.binned_decay_shape(model, offsets, noisy.bin_width, tau, rise_tau)
    expected = lt.convolve_irf(shape, noisy.irf) * noisy.bin_width
    expected = expected * (total / expected.sum())
    return lt.DecayTrace(bin_centers=noisy.bin_centers, counts=expected, irf=noisy.irf)


class TestSynthesis:
    def test_delta_irf_gives_pure_exponential(self):
        trace = lt.synthesize_trace("single_exp", 0.05, None, 0.0, 1e6, seed=1)
        pos = trace.bin_centers > trace.bin_width
        log_counts = np.log(np.maximum(trace.counts[pos][:40], 1.0))
        slope = np.polyfit(trace.bin_centers[pos][:40], log_counts, 1)[0]
        assert -1.0 / slope == pytest.approx(0.05, rel=0.03)
        assert trace.counts[trace.bin_centers < -trace.bin_width].sum() == 0

    def test_irf_broadens_peak(self):
        trace = lt.synthesize_trace("single_exp", 0.023, None, 0.070, 1e6, seed=2)
        above_half = trace.counts > trace.counts.max() / 2
        fwhm = above_half.sum() * trace.bin_width
        assert fwhm > 0.023

    def test_zero_counts(self):
        trace = lt.synthesize_trace("single_exp", 0.02, None, 0.05, 0.0, seed=3)
        assert trace.counts.sum() == 0

    def test_deterministic(self):
        a = lt.synthesize_trace("rise_decay", 0.023, 0.014, 0.07, 1e4, seed=9)
        b = lt.synthesize_trace("rise_decay", 0.023, 0.014, 0.07, 1e4, seed=9)
        assert np.array_equal(a.counts, b.counts)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            lt.synthesize_trace("single_exp", -0.1, None, 0.05, 100, seed=0)

    def test_area_conservation(self):
        centers = np.arange(-0.5 + 0.002, 1.3, 0.004)
        irf = lt.gaussian_irf(centers, 0.07)
        offsets = np.arange(-(len(centers) - 1), len(centers)) * 0.004
        shape = lt.binned_decay_shape("single_exp", offsets, 0.004, 0.023)
        full = np.convolve(irf, shape)
        assert abs(full.sum() - shape.sum()) < 1e-9


class TestFitting:
    def test_noiseless_single_exp_round_trip(self):
        trace = expected_trace("single_exp", 0.014, None, 0.070, 1e6)
        fit = lt.fit_decay(trace, "single_exp", compute_ci=False)
        assert fit.tau == pytest.approx(0.014, abs=1e-4)

    def test_noiseless_rise_decay_round_trip(self):
        trace = expected_trace("rise_decay", 0.023, 0.014, 0.070, 1e6)
        fit = lt.fit_decay(trace, "rise_decay", fixed_rise_tau=0.014, compute_ci=False)
        assert fit.tau == pytest.approx(0.023, abs=1e-4)

    def test_rise_decay_at_reference_conditions(self):
        taus = []
        for seed in range(20):
            trace = lt.synthesize_trace("rise_decay", 0.023, 0.014, 0.070, 1e5, seed=seed)
            fit = lt.fit_decay(trace, "rise_decay", fixed_rise_tau=0.014, compute_ci=False)
            taus.append(fit.tau)
        assert np.all(np.abs(np.array(taus) - 0.023) < 0.002)

    def test_unbiased_at_high_counts(self):
        taus = [
            lt.fit_decay(
                lt.synthesize_trace("single_exp", 0.014, None, 0.070, 1e6, seed=s),
                "single_exp",
                compute_ci=False,
            ).tau
            for s in range(10)
        ]
        assert np.mean(taus) == pytest.approx(0.014, rel=0.01)

    def test_ci_contains_estimate_and_is_ordered(self):
        trace = lt.synthesize_trace("rise_decay", 0.023, 0.014, 0.070, 1e5, seed=5)
        fit = lt.fit_decay(trace, "rise_decay", fixed_rise_tau=0.014)
        assert fit.tau_ci[0] <= fit.tau <= fit.tau_ci[1]
        assert fit.tau_ci_delta1[0] <= fit.tau <= fit.tau_ci_delta1[1]
        # 5% of a chi^2 of ~200 exceeds 1 unit, so that interval is wider
        assert fit.tau_ci[0] <= fit.tau_ci_delta1[0]
        assert fit.tau_ci[1] >= fit.tau_ci_delta1[1]

    def test_irf_dominated_trace_flags_bound(self):
        trace = lt.synthesize_trace("single_exp", 0.0004, None, 0.070, 1e5, seed=6)
        fit = lt.fit_decay(trace, "single_exp")
        assert fit.ci_at_bound
        assert fit.tau_ci[0] == pytest.approx(trace.bin_width / 10.0, abs=1e-12)

    def test_rise_decay_requires_rise_tau(self):
        trace = lt.synthesize_trace("rise_decay", 0.023, 0.014, 0.070, 1e4, seed=7)
        with pytest.raises(ValueError, match="rise"):
            lt.fit_decay(trace, "rise_decay")

    def test_empty_trace_rejected(self):
        trace = lt.synthesize_trace("single_exp", 0.02, None, 0.05, 0.0, seed=8)
        with pytest.raises(lt.DecayFitError):
            lt.fit_decay(trace, "single_exp")

    def test_unknown_model_rejected(self):
        trace = lt.synthesize_trace("single_exp", 0.02, None, 0.05, 100.0, seed=8)
        with pytest.raises(ValueError):
            lt.fit_decay(trace, "biexponential")


class TestCsv:
    def test_round_trip(self):
        trace = lt.synthesize_trace("single_exp", 0.02, None, 0.05, 1e4, seed=9)
        back = lt.DecayTrace.from_csv(trace.to_csv())
        assert np.allclose(back.bin_centers, trace.bin_centers)
        assert np.array_equal(back.counts, trace.counts)
        assert np.allclose(back.irf, trace.irf, atol=1e-15)

    def test_missing_irf_column_becomes_delta(self):
        text = "bin_center_ns,counts\n-0.1,0\n0.0,10\n0.1,5\n"
        trace = lt.DecayTrace.from_csv(text)
        assert trace.irf.sum() == pytest.approx(1.0)
        assert trace.irf[1] == 1.0

    def test_irf_must_be_normalized(self):
        with pytest.raises(ValueError, match="sum to 1"):
            lt.DecayTrace(
                bin_centers=np.array([0.0, 0.1]),
                counts=np.array([1.0, 2.0]),
                irf=np.array([1.0, 1.0]),
            )
