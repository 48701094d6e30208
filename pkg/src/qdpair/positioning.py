"""Synthetic cryo-microscope frames and sub-pixel emitter localization.

Frames contain a square grid of bright marker lines plus isotropic 2D
Gaussian emission spots on a flat background, with Poisson counting noise.
Localization fits the marker lines with straight lines to establish the
frame of reference and each spot with a 2D Gaussian in a local crop window;
repeating the procedure over many frames of the same layout measures the
positioning precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter
from scipy.optimize import least_squares


class NoMarkersError(RuntimeError):
    pass


class LayoutMismatchError(ValueError):
    pass


@dataclass
class SyntheticImage:
    """Pixel intensities plus the ground truth that generated them."""

    pixels: np.ndarray  # (rows, cols), photons
    pixel_pitch: float  # nm per pixel
    truth: dict = field(default_factory=dict)

    def to_pgm(self) -> bytes:
        """16-bit binary PGM (big-endian sample order per the PNM spec)."""
        img = np.clip(np.round(self.pixels), 0, 65535).astype(">u2")
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode()
        return header + img.tobytes()

    @classmethod
    def from_pgm(cls, data: bytes, pixel_pitch: float, truth: dict | None = None) -> "SyntheticImage":
        if not data.startswith(b"P5"):
            raise ValueError("expected a binary PGM (P5) image")
        fields = []
        pos = 2
        while len(fields) < 3:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                while data[pos : pos + 1] not in (b"\n", b""):
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(data[start:pos]))
        pos += 1
        width, height, maxval = fields
        dtype = ">u2" if maxval > 255 else "u1"
        img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
        return cls(
            pixels=img.reshape(height, width).astype(float),
            pixel_pitch=pixel_pitch,
            truth=truth or {},
        )

    def truth_json(self) -> str:
        return json.dumps(
            {"pixel_pitch_nm": self.pixel_pitch, **self.truth}, indent=2, sort_keys=True
        )


def render_image(
    spots,
    grid_pitch: float,
    shape: tuple[int, int] = (256, 256),
    pixel_pitch: float = 100.0,
    marker_width: float = 200.0,
    marker_amplitude: float = 30.0,
    background: float = 20.0,
    photon_scale: float = 1.0,
    seed: int = 0,
) -> SyntheticImage:
    """Render marker lines plus Gaussian spots with Poisson noise.

    ``spots`` is a sequence of (x_nm, y_nm, sigma_nm, amplitude_photons);
    marker lines sit at grid_pitch/2 + k * grid_pitch along both axes.
    ``photon_scale`` multiplies the whole intensity field before Poisson
    sampling; zero disables the noise and returns the intensity itself.
    """
    rows, cols = shape
    y = np.arange(rows)[:, None] * pixel_pitch
    x = np.arange(cols)[None, :] * pixel_pitch
    intensity = np.full(shape, float(background))

    x_lines = [grid_pitch / 2 + k * grid_pitch for k in range(int(cols * pixel_pitch // grid_pitch) + 1)]
    y_lines = [grid_pitch / 2 + k * grid_pitch for k in range(int(rows * pixel_pitch // grid_pitch) + 1)]
    x_lines = [v for v in x_lines if v < cols * pixel_pitch]
    y_lines = [v for v in y_lines if v < rows * pixel_pitch]
    for xl in x_lines:
        intensity += marker_amplitude * np.exp(-0.5 * ((x - xl) / marker_width) ** 2)
    for yl in y_lines:
        intensity += marker_amplitude * np.exp(-0.5 * ((y - yl) / marker_width) ** 2)

    for sx, sy, sigma, amp in spots:
        if sigma <= 0:
            raise ValueError("spot sigma must be positive")
        intensity += amp * np.exp(-0.5 * (((x - sx) ** 2 + (y - sy) ** 2) / sigma**2))

    if photon_scale > 0:
        rng = np.random.default_rng(seed)
        pixels = rng.poisson(intensity * photon_scale).astype(float)
    else:
        pixels = intensity
    return SyntheticImage(
        pixels=pixels,
        pixel_pitch=pixel_pitch,
        truth={
            "spots": [list(map(float, s)) for s in spots],
            "x_lines_nm": x_lines,
            "y_lines_nm": y_lines,
            "marker_width_nm": marker_width,
            "background": background,
            "photon_scale": photon_scale,
        },
    )


@dataclass(frozen=True)
class LocatedSpot:
    """One fitted emitter in marker-frame coordinates (nm)."""

    x: float
    y: float
    sigma: float
    x_err: float
    y_err: float
    amplitude: float
    contaminated: bool = False
    overlapping: bool = False


@dataclass(frozen=True)
class MarkerFrame:
    """Fitted reference lines: x(y) = x0 + mx * y and y(x) = y0 + my * x."""

    x0: float
    mx: float
    y0: float
    my: float

    def to_frame(self, x: float, y: float) -> tuple[float, float]:
        return (x - (self.x0 + self.mx * y), y - (self.y0 + self.my * x))


def _detect_lines(profile: np.ndarray, min_separation: int) -> list[int]:
    base = np.median(profile)
    peak = profile.max()
    if peak <= base * 1.05:
        return []
    thresh = base + 0.3 * (peak - base)
    idx = []
    for i in range(1, len(profile) - 1):
        if profile[i] >= thresh and profile[i] >= profile[i - 1] and profile[i] > profile[i + 1]:
            if not idx or i - idx[-1] >= min_separation:
                idx.append(i)
    return idx


def _fit_line(img: np.ndarray, approx: int, width_px: float, axis: int, background: float):
    """Weighted centroid per row (or column) then a straight-line fit.

    axis=0: vertical line, centroids along x for each y; returns (x0, slope).
    """
    data = img if axis == 0 else img.T
    half = max(2, int(round(3 * width_px)))
    lo = max(0, approx - half)
    hi = min(data.shape[1], approx + half + 1)
    cols = np.arange(lo, hi)
    strip = np.clip(data[:, lo:hi] - background, 0.0, None)
    weights = strip.sum(axis=1)
    good = weights > 0
    centroids = np.full(data.shape[0], np.nan)
    centroids[good] = (strip[good] @ cols) / weights[good]
    rows = np.arange(data.shape[0])[good]
    if len(rows) < 2:
        raise NoMarkersError("marker line has no usable cross sections")
    slope, intercept = np.polyfit(rows, centroids[good], 1)
    return intercept, slope


def _ridge_parameters(profile: np.ndarray, approx: int, width_px: float):
    """Amplitude and width of one marker ridge from a 1D mean profile."""
    base = float(np.median(profile))
    half = max(3, int(round(4 * width_px)))
    lo = max(0, approx - half)
    hi = min(len(profile), approx + half + 1)
    xs = np.arange(lo, hi).astype(float)
    seg = profile[lo:hi] - base

    def resid(p):
        amp, center, width = p
        return amp * np.exp(-0.5 * ((xs - center) / width) ** 2) - seg

    p0 = [max(seg.max(), 1e-3), float(approx), max(width_px, 0.5)]
    fit = least_squares(resid, p0, bounds=([0.0, lo, 0.1], [np.inf, hi, 10 * max(width_px, 1.0)]))
    return float(fit.x[0]), float(fit.x[2])


def _gauss2d_residuals(p, xs, ys, data):
    x0, y0, sigma, amp, off = p
    model = off + amp * np.exp(-0.5 * (((xs - x0) ** 2 + (ys - y0) ** 2) / sigma**2))
    return (model - data).ravel()


def locate_qds(
    image: SyntheticImage,
    nominal_sigma: float = 150.0,
    detection_threshold: float = 5.0,
) -> tuple[list[LocatedSpot], MarkerFrame]:
    """Find marker lines and emission spots; return spots in marker frame.

    The frame of reference is the intersection of the first vertical and
    first horizontal marker line.  Spots overlapping a marker line are
    flagged as contaminated; nearby detections are flagged as overlapping.
    """
    img = image.pixels.astype(float)
    pitch = image.pixel_pitch
    background = float(np.median(img))
    width_px = image.truth.get("marker_width_nm", 200.0) / pitch

    col_profile = gaussian_filter(img.mean(axis=0), 1.0)
    row_profile = gaussian_filter(img.mean(axis=1), 1.0)
    min_sep = max(3, int(2 * width_px))
    x_peaks = _detect_lines(col_profile, min_sep)
    y_peaks = _detect_lines(row_profile, min_sep)
    if not x_peaks or not y_peaks:
        raise NoMarkersError("no marker lines detected above contrast threshold")

    # straight-line fits of every ridge; the first vertical/horizontal pair
    # defines the frame of reference
    v_lines = [_fit_line(img, xp, width_px, axis=0, background=background) for xp in x_peaks]
    h_lines = [_fit_line(img, yp, width_px, axis=1, background=background) for yp in y_peaks]
    frame = MarkerFrame(
        x0=v_lines[0][0] * pitch, mx=v_lines[0][1], y0=h_lines[0][0] * pitch, my=h_lines[0][1]
    )

    # subtract the fitted marker ridges so spots survive even on a line
    ys_full, xs_full = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    residual = img.astype(float).copy()
    for (intercept, slope), xp in zip(v_lines, x_peaks):
        amp, w = _ridge_parameters(col_profile, xp, width_px)
        centerline = intercept + slope * ys_full
        residual -= amp * np.exp(-0.5 * ((xs_full - centerline) / w) ** 2)
    for (intercept, slope), yp in zip(h_lines, y_peaks):
        amp, w = _ridge_parameters(row_profile, yp, width_px)
        centerline = intercept + slope * xs_full
        residual -= amp * np.exp(-0.5 * ((ys_full - centerline) / w) ** 2)

    sigma_px = nominal_sigma / pitch
    smooth = gaussian_filter(residual, sigma_px / 2.0)
    local_max = (smooth == maximum_filter(smooth, size=int(2 * sigma_px) + 1)) & (
        smooth > background + detection_threshold * np.sqrt(background + 1.0)
    )
    peaks = np.argwhere(local_max)

    def near_line(px, py):
        on_v = any(abs(px - (b + m * py)) < 3 * width_px for b, m in v_lines)
        on_h = any(abs(py - (b + m * px)) < 3 * width_px for b, m in h_lines)
        return on_v or on_h

    spots: list[LocatedSpot] = []
    half = int(round(3.5 * sigma_px))
    centers = []
    for py, px in peaks:
        overlapping = any(
            (py - q[0]) ** 2 + (px - q[1]) ** 2 < (4 * sigma_px) ** 2 for q in centers
        )
        centers.append((py, px))
        contaminated = near_line(px, py)
        lo_y, hi_y = max(0, py - half), min(img.shape[0], py + half + 1)
        lo_x, hi_x = max(0, px - half), min(img.shape[1], px + half + 1)
        crop = residual[lo_y:hi_y, lo_x:hi_x]
        ys, xs = np.mgrid[lo_y:hi_y, lo_x:hi_x]
        p0 = [float(px), float(py), sigma_px, float(residual[py, px] - background), background]
        fit = least_squares(
            _gauss2d_residuals,
            p0,
            args=(xs.astype(float), ys.astype(float), crop),
            bounds=([lo_x, lo_y, 0.3, 0.0, 0.0], [hi_x, hi_y, 10 * sigma_px, np.inf, np.inf]),
            x_scale=[1.0, 1.0, 1.0, max(p0[3], 1.0), max(background, 1.0)],
        )
        if not fit.success:
            continue
        x_fit, y_fit, sig_fit, amp_fit, _ = fit.x
        dof = max(crop.size - 5, 1)
        s2 = float(np.sum(fit.fun**2)) / dof
        jtj = fit.jac.T @ fit.jac
        try:
            cov = s2 * np.linalg.inv(jtj)
        except np.linalg.LinAlgError:
            cov = s2 * np.linalg.pinv(jtj)
        fx, fy = frame.to_frame(x_fit * pitch, y_fit * pitch)
        spots.append(
            LocatedSpot(
                x=float(fx),
                y=float(fy),
                sigma=float(sig_fit * pitch),
                x_err=float(np.sqrt(max(cov[0, 0], 0.0)) * pitch),
                y_err=float(np.sqrt(max(cov[1, 1], 0.0)) * pitch),
                amplitude=float(amp_fit),
                contaminated=contaminated,
                overlapping=overlapping,
            )
        )
    spots.sort(key=lambda s: (s.y, s.x))
    return spots, frame


def repeatability(images, match_radius: float = 300.0) -> dict:
    """Per-spot standard deviation of fitted positions across frames.

    All frames must show the same layout; spots are matched to the first
    frame's detections by proximity.  The per-spot figure is the rms of the
    x and y standard deviations, in nm.
    """
    images = list(images)
    if len(images) < 2:
        raise ValueError("need at least 2 frames")
    reference, _ = locate_qds(images[0])
    reference = [s for s in reference if not s.contaminated]
    if not reference:
        raise LayoutMismatchError("no clean spots in the reference frame")
    tracks: list[list[tuple[float, float]]] = [[(s.x, s.y)] for s in reference]
    for image in images[1:]:
        found, _ = locate_qds(image)
        found = [s for s in found if not s.contaminated]
        if len(found) != len(reference):
            raise LayoutMismatchError(
                f"frame has {len(found)} spots, reference has {len(reference)}"
            )
        for ref, track in zip(reference, tracks):
            dists = [np.hypot(s.x - ref.x, s.y - ref.y) for s in found]
            j = int(np.argmin(dists))
            if dists[j] > match_radius:
                raise LayoutMismatchError(
                    f"no match within {match_radius} nm for spot at ({ref.x:.0f}, {ref.y:.0f})"
                )
            track.append((found[j].x, found[j].y))

    stds = []
    for track in tracks:
        arr = np.array(track)
        stds.append(float(np.sqrt(np.mean(np.var(arr, axis=0, ddof=1)))))
    hist_bins = np.arange(0.0, max(stds) + 2.0, 1.0)
    hist, edges = np.histogram(stds, bins=hist_bins)
    mode = float(edges[int(np.argmax(hist))] + 0.5) if len(hist) else float("nan")
    result = {
        "per_spot_std_nm": stds,
        "mode_nm": mode,
        "median_nm": float(np.median(stds)),
        "n_frames": len(images),
        "warnings": [],
    }
    if len(images) < 10:
        result["warnings"].append(
            f"only {len(images)} frames; standard deviations are noisy"
        )
    return result
