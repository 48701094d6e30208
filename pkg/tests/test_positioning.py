import numpy as np
import pytest

from qdpair import positioning as pos

SPOTS = [
    (6200.0, 7300.0, 150.0, 300.0),
    (13500.0, 11000.0, 150.0, 300.0),
    (19000.0, 18000.0, 150.0, 300.0),
]
GRID = 10000.0


def render(spots=None, seed=0, photon_scale=1.0, **kw):
    return pos.render_image(
        SPOTS if spots is None else spots, grid_pitch=GRID, seed=seed,
        photon_scale=photon_scale, **kw,
    )


def frame_truth(x, y):
    # first marker lines sit at half the grid pitch
    return x - GRID / 2, y - GRID / 2


class TestRendering:
    def test_markers_only(self):
        img = render(spots=[], photon_scale=0.0)
        col = img.pixels.mean(axis=0)
        assert col[50] > col[25]
        assert img.truth["x_lines_nm"] == [5000.0, 15000.0, 25000.0]

    def test_spot_peak_at_center(self):
        img = render(spots=[(12000.0, 8000.0, 150.0, 500.0)], photon_scale=0.0)
        row, col = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
        assert col * 100.0 == pytest.approx(12000.0, abs=50.0)
        assert row * 100.0 == pytest.approx(8000.0, abs=50.0)

    def test_rendered_fwhm_matches_sigma(self):
        sigma = 150.0
        img = render(spots=[(12800.0, 8800.0, sigma, 500.0)], photon_scale=0.0,
                     marker_amplitude=0.0, background=0.0)
        profile = img.pixels[88, :]
        above = profile > profile.max() / 2
        xs = np.flatnonzero(above)
        # linear interpolation at the half-maximum crossings
        lo = xs[0] - (profile[xs[0]] - profile.max() / 2) / (profile[xs[0]] - profile[xs[0] - 1])
        hi = xs[-1] + (profile[xs[-1]] - profile.max() / 2) / (profile[xs[-1]] - profile[xs[-1] + 1])
        fwhm_nm = (hi - lo) * 100.0
        assert fwhm_nm == pytest.approx(2.355 * sigma, rel=0.02)

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            render(spots=[(1000.0, 1000.0, -5.0, 10.0)])

    def test_pgm_round_trip(self):
        img = render(seed=4)
        back = pos.SyntheticImage.from_pgm(img.to_pgm(), pixel_pitch=100.0, truth=img.truth)
        assert np.array_equal(back.pixels, img.pixels)


class TestLocalization:
    def test_noiseless_accuracy(self):
        img = render(spots=[SPOTS[0]], photon_scale=0.0)
        found, _ = pos.locate_qds(img)
        assert len(found) == 1
        tx, ty = frame_truth(SPOTS[0][0], SPOTS[0][1])
        assert found[0].x == pytest.approx(tx, abs=0.1)
        assert found[0].y == pytest.approx(ty, abs=0.1)

    def test_all_spots_found_with_noise(self):
        img = render(seed=1)
        found, _ = pos.locate_qds(img)
        clean = [s for s in found if not s.contaminated]
        assert len(clean) == 3
        for spot, truth in zip(sorted(clean, key=lambda s: s.y), sorted(SPOTS, key=lambda t: t[1])):
            tx, ty = frame_truth(truth[0], truth[1])
            assert spot.x == pytest.approx(tx, abs=20.0)
            assert spot.y == pytest.approx(ty, abs=20.0)

    def test_spot_on_marker_line_flagged(self):
        img = render(spots=[(6200.0, 5100.0, 150.0, 300.0)], seed=2)
        found, _ = pos.locate_qds(img)
        assert len(found) == 1
        assert found[0].contaminated

    def test_no_markers_raises(self):
        img = render(spots=[], photon_scale=0.0, marker_amplitude=0.0)
        with pytest.raises(pos.NoMarkersError):
            pos.locate_qds(img)

    def test_translation_equivariance(self):
        delta = 400.0
        shifted = [(x + delta, y + delta, s, a) for x, y, s, a in SPOTS]
        found_a, _ = pos.locate_qds(render(seed=3))
        found_b, _ = pos.locate_qds(render(spots=shifted, seed=3))
        a = sorted([(s.x, s.y) for s in found_a if not s.contaminated])
        b = sorted([(s.x, s.y) for s in found_b if not s.contaminated])
        for (xa, ya), (xb, yb) in zip(a, b):
            assert xb - xa == pytest.approx(delta, abs=10.0)
            assert yb - ya == pytest.approx(delta, abs=10.0)

    def test_localization_scales_with_photon_count(self):
        # precision should improve as 1/sqrt(N) over a 10x amplitude range
        def spread(amplitude, seeds):
            xs = []
            for seed in seeds:
                img = render(spots=[(12800.0, 8800.0, 150.0, amplitude)], seed=seed)
                found, _ = pos.locate_qds(img)
                assert len(found) == 1
                xs.append(found[0].x)
            return np.std(xs)

        lo = spread(60.0, range(16))
        hi = spread(600.0, range(16, 32))
        assert lo / hi == pytest.approx(np.sqrt(10.0), rel=0.45)


class TestRepeatability:
    def test_identical_noiseless_frames(self):
        frames = [render(photon_scale=0.0) for _ in range(3)]
        stats = pos.repeatability(frames)
        assert max(stats["per_spot_std_nm"]) < 1e-9

    def test_two_frames_warns(self):
        frames = [render(seed=s) for s in (0, 1)]
        stats = pos.repeatability(frames)
        assert stats["warnings"]

    def test_mismatched_layout_rejected(self):
        frames = [render(seed=0), render(spots=SPOTS[:2], seed=1)]
        with pytest.raises(pos.LayoutMismatchError):
            pos.repeatability(frames)

    def test_requires_two_frames(self):
        with pytest.raises(ValueError):
            pos.repeatability([render(seed=0)])

    def test_reports_distribution_and_mode(self):
        frames = [render(seed=s) for s in range(6)]
        stats = pos.repeatability(frames)
        assert len(stats["per_spot_std_nm"]) == 3
        assert stats["mode_nm"] > 0
        assert stats["median_nm"] > 0
