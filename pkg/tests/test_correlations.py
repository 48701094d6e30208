import numpy as np
import pytest

from qdpair import correlations as co
from qdpair import stream as st

DET2 = [st.DetectorConfig(jitter_fwhm=0.35, efficiency=0.4) for _ in range(2)]
DET1_HOM = [st.DetectorConfig(jitter_fwhm=0.15, efficiency=0.5)]


def antibunched_stream(p_multi=0.0, duration=0.02, seed=1, prep=1.0, det=DET2):
    src = st.SourceConfig(
        rep_rate=80e6, tau_x=0.044, tau_xx=0.018, prep_fidelity=prep,
        multiphoton_prob=p_multi, extraction_eff=0.5,
    )
    return st.simulate_stream(src, det, duration=duration, seed=seed)


def g2_analytic(p_multi, prep=1.0):
    # one photon per prepared pulse plus an extra with probability p:
    # zero-peak/side-peak ratio of the generator
    return 2 * p_multi / (prep * (1 + p_multi) ** 2)


class TestHbtHistogram:
    def test_single_photon_zero_peak_empty(self):
        events = antibunched_stream(p_multi=0.0, duration=0.005)
        hist = co.hbt_histogram(events, bin_width=0.1, window=50.0)
        centers = hist.bin_centers
        assert hist.counts[np.abs(centers) < 6.25].sum() == 0
        assert hist.counts.sum() > 0

    def test_empty_stream_gives_empty_histogram(self):
        empty = st.EventStream(
            timestamps=np.array([]), channels=np.array([], dtype=np.uint8),
            tags=np.array([], dtype=np.uint8), n_channels=2,
        )
        hist = co.hbt_histogram(empty, bin_width=0.1, window=10.0)
        assert hist.counts.sum() == 0

    def test_needs_two_channels(self):
        one = st.EventStream(
            timestamps=np.array([1.0]), channels=np.array([0], dtype=np.uint8),
            tags=np.array([0], dtype=np.uint8), n_channels=1,
        )
        with pytest.raises(ValueError):
            co.hbt_histogram(one, bin_width=0.1, window=10.0)

    def test_csv_round_trip(self):
        events = antibunched_stream(p_multi=0.05, duration=0.002)
        hist = co.hbt_histogram(events, bin_width=0.5, window=40.0)
        back = co.CorrelationHistogram.from_csv(hist.to_csv())
        assert np.array_equal(back.counts, hist.counts)
        assert back.zero_delay_bin == hist.zero_delay_bin


class TestG2:
    def test_arithmetic(self):
        # 12 counts in the zero peak over a mean side peak of 1000
        counts = np.zeros(161)
        hist = co.CorrelationHistogram(bin_width=1.0, counts=counts, zero_delay_bin=80)
        hist.counts[80] = 12
        for m in (1, 2, 3, 4, 5, 6):
            hist.counts[80 + m * 12] = 1000
            hist.counts[80 - m * 12] = 1000
        g2, err = co.g2_zero(hist, rep_period=12.0)
        assert g2 == pytest.approx(0.012, abs=1e-12)
        assert err > 0

    def test_zero_peak_empty(self):
        counts = np.zeros(161)
        hist = co.CorrelationHistogram(bin_width=1.0, counts=counts, zero_delay_bin=80)
        for m in (1, 2, 3, 4, 5, 6):
            hist.counts[80 + m * 12] = 500
            hist.counts[80 - m * 12] = 500
        g2, _ = co.g2_zero(hist, rep_period=12.0)
        assert g2 == 0.0

    def test_requires_three_side_peaks(self):
        hist = co.CorrelationHistogram(bin_width=1.0, counts=np.ones(41), zero_delay_bin=20)
        with pytest.raises(co.HistogramError):
            co.g2_zero(hist, rep_period=12.0)

    def test_matches_generator_expectation(self):
        p = 0.02
        events = antibunched_stream(p_multi=p, duration=0.05, seed=3)
        hist = co.hbt_histogram(events, bin_width=0.1, window=100.0)
        g2, err = co.g2_zero(hist, rep_period=12.5)
        assert abs(g2 - g2_analytic(p)) < 3 * err

    def test_poisson_stream_is_uncorrelated(self):
        events = st.simulate_poisson_stream(8e6, DET2, duration=0.05, seed=5)
        hist = co.hbt_histogram(events, bin_width=0.5, window=100.0)
        g2, err = co.g2_zero(hist, rep_period=12.5)
        assert abs(g2 - 1.0) < 3 * err


class TestHomSimulation:
    def test_perfect_dip(self):
        events = antibunched_stream(duration=0.01, det=DET1_HOM)
        hist = co.hom_simulate(events, delay=1.8, indistinguishability=1.0,
                               bs_reflectivity=0.5, interferometer_visibility=1.0,
                               copolarized=True, seed=2)
        centers = hist.bin_centers
        assert hist.counts[np.abs(centers) < 0.9].sum() == 0
        assert hist.counts[np.abs(centers - 1.8) < 0.9].sum() > 0

    def test_five_peak_cluster(self):
        events = antibunched_stream(duration=0.01, det=DET1_HOM)
        hist = co.hom_simulate(events, delay=1.8, indistinguishability=0.5,
                               bs_reflectivity=0.5, seed=3)
        centers = hist.bin_centers
        areas = [
            hist.counts[np.abs(centers - off) < 0.9].sum()
            for off in (-3.6, -1.8, 0.0, 1.8, 3.6)
        ]
        assert all(a > 0 for a in areas)
        # outer peaks carry one routing combination, inner ones two
        assert areas[1] > areas[0] and areas[3] > areas[4]

    def test_cross_polarized_matches_path_enumeration(self):
        events = antibunched_stream(duration=0.02, det=DET1_HOM, seed=7)
        r = 0.48
        hist = co.hom_simulate(events, delay=1.8, indistinguishability=1.0,
                               bs_reflectivity=r, copolarized=False, seed=8)
        centers = hist.bin_centers
        zero_area = hist.counts[np.abs(centers) < 0.9].sum()
        # both photons of a cycle must be detected and take complementary
        # arms (1/4); a coincidence then occurs with R^2 + T^2
        period = 12.5
        pulse = np.round(events.timestamps / period).astype(int)
        cycles = set()
        first = set(pulse[pulse % 2 == 0] // 2)
        second = set(pulse[pulse % 2 == 1] // 2)
        n_pairs = len(first & second)
        expected = n_pairs * 0.25 * (r * r + (1 - r) ** 2)
        assert zero_area == pytest.approx(expected, rel=0.1)

    def test_distinguishable_equals_cross_polarized(self):
        events = antibunched_stream(duration=0.02, det=DET1_HOM, seed=9)
        h_m0 = co.hom_simulate(events, delay=1.8, indistinguishability=0.0,
                               bs_reflectivity=0.48, copolarized=True, seed=10)
        h_cross = co.hom_simulate(events, delay=1.8, indistinguishability=1.0,
                                  bs_reflectivity=0.48, copolarized=False, seed=10)
        za = h_m0.counts[np.abs(h_m0.bin_centers) < 0.9].sum()
        zb = h_cross.counts[np.abs(h_cross.bin_centers) < 0.9].sum()
        assert za == pytest.approx(zb, rel=4 / np.sqrt(min(za, zb)))

    def test_reflectivity_bounds(self):
        events = antibunched_stream(duration=0.001, det=DET1_HOM)
        with pytest.raises(ValueError):
            co.hom_simulate(events, bs_reflectivity=1.0)

    def test_needs_rep_period(self):
        events = st.simulate_poisson_stream(1e6, DET1_HOM, duration=0.001, seed=1)
        with pytest.raises(ValueError, match="repetition"):
            co.hom_simulate(events)


class TestVisibility:
    def test_area_ratio_arithmetic(self, rng):
        # synthetic histograms with known zero-peak area ratio 0.4
        centers = np.arange(-1001, 1002) * 0.006
        delay = 1.8

        def make(scale_zero):
            counts = np.zeros_like(centers)
            for off, area in zip((-3.6, -1.8, 0.0, 1.8, 3.6), (500, 1000, scale_zero, 1000, 500)):
                shape = co._two_sided_exp_gauss(centers - off, 0.05, 0.15)
                counts += area * shape * 0.006
            return co.CorrelationHistogram(
                bin_width=0.006, counts=rng.poisson(np.maximum(counts, 0) * 50) / 50.0,
                zero_delay_bin=1001,
            )

        v, err = co.hom_visibility(make(400.0), make(1000.0), delay=delay)
        assert v == pytest.approx(0.60, abs=0.02)

    def test_simulated_round_trip(self):
        # overlap chosen so the ideal visibility is 2RT m /(R^2+T^2) = 0.598
        r = 0.5
        m = 0.598
        events = antibunched_stream(duration=0.04, det=DET1_HOM, seed=11)
        h_co = co.hom_simulate(events, delay=1.8, indistinguishability=m,
                               bs_reflectivity=r, copolarized=True, seed=12)
        h_cross = co.hom_simulate(events, delay=1.8, indistinguishability=m,
                                  bs_reflectivity=r, copolarized=False, seed=13)
        v, err = co.hom_visibility(h_co, h_cross, delay=1.8)
        assert v == pytest.approx(0.598, abs=max(3 * err, 0.01))

    def test_visibility_never_exceeds_overlap_bound(self):
        for m, r, vs, seed in ((0.8, 0.5, 1.0, 1), (0.6, 0.45, 0.9, 2)):
            events = antibunched_stream(duration=0.02, det=DET1_HOM, seed=seed)
            h_co = co.hom_simulate(events, delay=1.8, indistinguishability=m,
                                   bs_reflectivity=r, interferometer_visibility=vs,
                                   copolarized=True, seed=seed + 50)
            h_cross = co.hom_simulate(events, delay=1.8, indistinguishability=m,
                                      bs_reflectivity=r, interferometer_visibility=vs,
                                      copolarized=False, seed=seed + 100)
            v, err = co.hom_visibility(h_co, h_cross, delay=1.8)
            bound = m * vs**2 * 2 * r * (1 - r) / (r**2 + (1 - r) ** 2)
            assert v <= bound + 3 * err


class TestScalars:
    def test_indistinguishability_examples(self):
        assert co.indistinguishability_from_hom(0.60, 0.025, 0.48, 0.96) == pytest.approx(0.71, abs=0.02)
        assert co.indistinguishability_from_hom(0.61, 0.025, 0.48, 0.96) == pytest.approx(0.72, abs=0.02)
        assert co.indistinguishability_from_hom(1.0, 0.0, 0.5, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_upper_bound_examples(self):
        assert co.hom_upper_bound(0.044, 0.018) == pytest.approx(0.710, abs=0.005)
        assert co.hom_upper_bound(0.1, 0.1) == pytest.approx(0.5, abs=1e-12)
        assert co.hom_upper_bound(0.120, 0.049) == pytest.approx(0.71, abs=0.005)

    def test_upper_bound_monotone_and_bounded(self):
        ratios = np.linspace(0.1, 10, 40)
        values = [co.hom_upper_bound(r, 1.0) for r in ratios]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert all(0 < v < 1 for v in values)

    def test_upper_bound_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            co.hom_upper_bound(0.0, 0.1)
