"""Coincidence analyses: HBT histograms, side-peak-normalized g2(0), and
Hong-Ou-Mandel interference with peak-shape fitting.

The HOM simulator works at the level of pairwise click probabilities: the
laser pulse train is treated as doubled excitation cycles separated by the
interferometer arm imbalance; photons meeting at the output beam splitter in
the same nominal time slot interfere with an effective overlap
M * V_s^2 (co-polarized signal pairs) or 0 (anything else).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfcx

from .stream import EventStream, TAG_SIGNAL


class HistogramError(ValueError):
    """The histogram does not support the requested analysis."""


class PeakFitError(RuntimeError):
    """A correlation-peak fit failed to converge."""


@dataclass
class CorrelationHistogram:
    """Symmetric coincidence histogram around zero delay.

    counts[i] covers delays centered at (i - zero_delay_bin) * bin_width.
    """

    bin_width: float
    counts: np.ndarray
    zero_delay_bin: int

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(len(self.counts)) - self.zero_delay_bin) * self.bin_width

    @property
    def span(self) -> float:
        return (len(self.counts) - self.zero_delay_bin - 0.5) * self.bin_width

    def to_csv(self) -> str:
        lines = ["bin_center_ns,counts"]
        for c, n in zip(self.bin_centers, self.counts):
            lines.append(f"{float(c)!r},{int(n)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "CorrelationHistogram":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "bin_center_ns,counts":
            raise ValueError("expected header: bin_center_ns,counts")
        centers, counts = [], []
        for ln in lines[1:]:
            c, n = ln.split(",")
            centers.append(float(c))
            counts.append(float(n))
        centers = np.array(centers)
        if len(centers) < 2:
            raise ValueError("histogram needs at least two bins")
        width = float(np.median(np.diff(centers)))
        zero = int(np.argmin(np.abs(centers)))
        return cls(bin_width=width, counts=np.array(counts), zero_delay_bin=zero)


def _range_concat(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Concatenate arange(lo[i], hi[i]) for all i without a Python loop."""
    lengths = hi - lo
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = np.repeat(lo, lengths)
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return starts + offsets


def hbt_histogram(
    stream: EventStream,
    bin_width: float,
    window: float,
    channels: tuple[int, int] = (0, 1),
) -> CorrelationHistogram:
    """Coincidence histogram of (t_b - t_a) for all cross-channel pairs
    within +/- window (ns)."""
    if stream.n_channels < 2:
        raise ValueError("HBT analysis needs a stream with >= 2 channels")
    if bin_width <= 0 or window <= 0:
        raise ValueError("bin_width and window must be positive")
    t_a = stream.channel_times(channels[0])
    t_b = stream.channel_times(channels[1])
    half = int(np.floor(window / bin_width))
    edges = (np.arange(2 * half + 2) - half - 0.5) * bin_width
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    if len(t_a) and len(t_b):
        for lo_i in range(0, len(t_a), 100_000):
            starts = t_a[lo_i : lo_i + 100_000]
            lo = np.searchsorted(t_b, starts + edges[0])
            hi = np.searchsorted(t_b, starts + edges[-1])
            idx = _range_concat(lo, hi)
            dt = t_b[idx] - np.repeat(starts, hi - lo)
            counts += np.histogram(dt, bins=edges)[0]
    return CorrelationHistogram(bin_width=bin_width, counts=counts, zero_delay_bin=half)


def _peak_mask(centers: np.ndarray, position: float, half_width: float) -> np.ndarray:
    return np.abs(centers - position) < half_width


def g2_zero(hist: CorrelationHistogram, rep_period: float) -> tuple[float, float]:
    """Zero-delay peak area normalized to the mean side-peak area.

    Side peaks are the repetitions of the pulse train at multiples of
    ``rep_period``; at least three full side peaks per side must fit in the
    histogram.  The error is propagated from Poisson counting statistics.
    """
    if rep_period <= 0:
        raise ValueError("rep_period must be positive")
    centers = hist.bin_centers
    m_max = int(np.floor(hist.span / rep_period - 0.5))
    if m_max < 3:
        raise HistogramError(
            f"histogram spans only {m_max} side peaks per side; need >= 3"
        )
    zero_area = float(hist.counts[_peak_mask(centers, 0.0, rep_period / 2)].sum())
    side_areas = [
        float(hist.counts[_peak_mask(centers, m * rep_period, rep_period / 2)].sum())
        for m in range(1, m_max + 1)
    ] + [
        float(hist.counts[_peak_mask(centers, -m * rep_period, rep_period / 2)].sum())
        for m in range(1, m_max + 1)
    ]
    side_mean = float(np.mean(side_areas))
    if side_mean <= 0:
        raise HistogramError("side peaks are empty; cannot normalize")
    g2 = zero_area / side_mean
    var_side_mean = float(np.sum(side_areas)) / len(side_areas) ** 2
    err = np.sqrt(zero_area / side_mean**2 + (zero_area * np.sqrt(var_side_mean) / side_mean**2) ** 2)
    return g2, float(err)


def hom_upper_bound(tau_x: float, tau_xx: float) -> float:
    """Lifetime-ratio limit on two-photon interference visibility: r/(1+r)
    with r = tau_x / tau_xx."""
    if tau_x <= 0 or tau_xx <= 0:
        raise ValueError("lifetimes must be positive")
    r = tau_x / tau_xx
    return r / (1.0 + r)


def indistinguishability_from_hom(
    v_meas: float,
    g2: float,
    bs_reflectivity: float,
    interferometer_visibility: float,
) -> float:
    """Correct a raw HOM visibility for setup imperfections.

    M = (V + 2 g2) * (R^2 + T^2) / (2 R T) / V_s^2, with T = 1 - R.
    Model-based correction; kept in one place so it can be swapped.
    """
    r = bs_reflectivity
    if not 0 < r < 1:
        raise ValueError("bs_reflectivity must lie in (0, 1)")
    if not 0 < interferometer_visibility <= 1:
        raise ValueError("interferometer_visibility must lie in (0, 1]")
    t = 1.0 - r
    return (v_meas + 2.0 * g2) * (r * r + t * t) / (2.0 * r * t) / interferometer_visibility**2


def hom_simulate(
    stream: EventStream,
    delay: float = 1.8,
    indistinguishability: float = 1.0,
    bs_reflectivity: float = 0.5,
    interferometer_visibility: float = 1.0,
    copolarized: bool = True,
    seed: int = 0,
    bin_width: float = 0.05,
    window: float | None = None,
) -> CorrelationHistogram:
    """Route a pulsed photon stream through the unbalanced interferometer.

    Consecutive pulses are grouped into excitation cycles whose two members
    are mapped onto sub-pulses ``delay`` ns apart (the arm imbalance), so
    photons taking complementary arms meet at the output beam splitter.
    Interference applies the effective overlap M * V_s^2 to co-polarized
    signal pairs and 0 otherwise; the returned histogram shows the
    five-peak cluster at 0, +/-delay, +/-2*delay.
    """
    if delay <= 0:
        raise ValueError("delay must be positive")
    r = bs_reflectivity
    if not 0 < r < 1:
        raise ValueError("bs_reflectivity must lie in (0, 1)")
    if stream.rep_period_ns is None:
        raise ValueError("stream carries no repetition period; regenerate with simulate_stream")
    t_bs = 1.0 - r
    m_signal = (
        indistinguishability * interferometer_visibility**2 if copolarized else 0.0
    )

    period = stream.rep_period_ns
    rng = np.random.default_rng(seed)
    t = stream.timestamps
    pulse_idx = np.round(t / period).astype(np.int64)
    residual = t - pulse_idx * period
    cycle = pulse_idx // 2
    sub = (pulse_idx % 2).astype(np.int64)

    arm = rng.integers(0, 2, len(t))  # 0 = short, 1 = long arm
    slot = sub + arm  # nominal arrival slot in units of `delay`
    port = arm  # short arm feeds port 0 of the output splitter
    is_signal = stream.tags == TAG_SIGNAL

    key = cycle * 3 + slot
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    group_start = np.flatnonzero(np.r_[True, key_sorted[1:] != key_sorted[:-1]])
    group_size = np.diff(np.r_[group_start, len(key_sorted)])

    detector = np.zeros(len(t), dtype=np.uint8)

    singles = order[group_start[group_size == 1]]
    u = rng.random(len(singles))
    # from port 0 transmit to D0 with prob T; from port 1 reflect to D0 with prob R
    p_d0 = np.where(port[singles] == 0, t_bs, r)
    detector[singles] = np.where(u < p_d0, 0, 1)

    pair_start = group_start[group_size == 2]
    i1 = order[pair_start]
    i2 = order[pair_start + 1]
    same_port = port[i1] == port[i2]
    m_pair = np.where(
        is_signal[i1] & is_signal[i2], m_signal, 0.0
    )
    # outcome categories: both->D0, both->D1, split i1->D0, split i1->D1
    p_b0 = np.where(same_port, np.where(port[i1] == 0, t_bs**2, r**2), r * t_bs * (1 + m_pair))
    p_b1 = np.where(same_port, np.where(port[i1] == 0, r**2, t_bs**2), r * t_bs * (1 + m_pair))
    p_fwd = np.where(
        same_port,
        r * t_bs,
        np.clip(np.where(port[i1] == 0, t_bs**2, r**2) - r * t_bs * m_pair, 0.0, None),
    )
    u = rng.random(len(i1))
    c1 = u < p_b0
    c2 = ~c1 & (u < p_b0 + p_b1)
    c3 = ~c1 & ~c2 & (u < p_b0 + p_b1 + p_fwd)
    detector[i1] = np.where(c1, 0, np.where(c2, 1, np.where(c3, 0, 1)))
    detector[i2] = np.where(c1, 0, np.where(c2, 1, np.where(c3, 1, 0)))

    # slots with three or more photons are rare; route each independently
    for start, size in zip(group_start[group_size > 2], group_size[group_size > 2]):
        members = order[start : start + size]
        u = rng.random(size)
        p_d0 = np.where(port[members] == 0, t_bs, r)
        detector[members] = np.where(u < p_d0, 0, 1)

    out_times = cycle * (2.0 * period) + slot * delay + residual
    out_order = np.argsort(out_times, kind="stable")
    routed = EventStream(
        timestamps=out_times[out_order],
        channels=detector[out_order],
        tags=stream.tags[out_order],
        n_channels=2,
        duration=stream.duration,
        rep_period_ns=2.0 * period,
    )
    if window is None:
        window = 2.0 * delay + 2.5
    return hbt_histogram(routed, bin_width=bin_width, window=window)


def _two_sided_exp_gauss(t, tau, sigma):
    """Unit-area symmetric exponential convolved with a Gaussian."""

    def emg(x):
        x = np.asarray(x, dtype=float)
        b = (sigma / tau - x / sigma) / np.sqrt(2.0)
        out = np.empty_like(x)
        pos = b >= 0
        out[pos] = erfcx(b[pos]) * np.exp(-x[pos] ** 2 / (2.0 * sigma**2))
        xn = x[~pos]
        # for b < 0 use erfcx(b) = 2 exp(b^2) - erfcx(-b); the exponent
        # sigma^2/(2 tau^2) - x/tau is negative on this branch
        out[~pos] = 2.0 * np.exp(sigma**2 / (2.0 * tau**2) - xn / tau) - erfcx(
            -b[~pos]
        ) * np.exp(-(xn**2) / (2.0 * sigma**2))
        return (0.5 / tau) * out

    return 0.5 * (emg(t) + emg(-t))


@dataclass(frozen=True)
class PeakFit:
    """Five-peak cluster fit of a HOM coincidence histogram."""

    areas: tuple[float, ...]
    area_errors: tuple[float, ...]
    center: float
    tau: float
    sigma: float
    chi2: float


def fit_hom_peaks(hist: CorrelationHistogram, delay: float) -> PeakFit:
    """Fit five exponential-decay x Gaussian peaks at 0, +/-delay, +/-2*delay."""
    centers = hist.bin_centers
    counts = hist.counts.astype(float)
    offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * delay

    area0 = []
    for off in offsets:
        sel = np.abs(centers - off) < delay / 2
        area0.append(max(counts[sel].sum(), 1.0))

    def model(params):
        areas, c0, tau, sigma = params[:5], params[5], params[6], params[7]
        out = np.zeros_like(centers)
        for a, off in zip(areas, offsets):
            out += a * _two_sided_exp_gauss(centers - c0 - off, tau, sigma) * hist.bin_width
        return out

    def residuals(params):
        return (model(params) - counts) / np.sqrt(counts + 1.0)

    p0 = np.array(area0 + [0.0, delay / 20.0, delay / 10.0])
    lower = [0.0] * 5 + [-delay / 2, 1e-4, 1e-3]
    upper = [np.inf] * 5 + [delay / 2, delay, delay]
    fit = least_squares(residuals, p0, bounds=(lower, upper), max_nfev=20000)
    if not fit.success:
        raise PeakFitError(f"five-peak fit failed: {fit.message}")
    # covariance from the Jacobian at the optimum
    jtj = fit.jac.T @ fit.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return PeakFit(
        areas=tuple(float(v) for v in fit.x[:5]),
        area_errors=tuple(float(v) for v in errs[:5]),
        center=float(fit.x[5]),
        tau=float(fit.x[6]),
        sigma=float(fit.x[7]),
        chi2=float(np.sum(fit.fun**2)),
    )


def hom_visibility(
    co: CorrelationHistogram,
    cross: CorrelationHistogram,
    delay: float = 1.8,
) -> tuple[float, float]:
    """Raw two-photon interference visibility from co- and cross-polarized
    coincidence histograms: V = 1 - A_co(0) / A_cross(0), areas from the
    five-peak fits."""
    fit_co = fit_hom_peaks(co, delay)
    fit_cross = fit_hom_peaks(cross, delay)
    a_co, e_co = fit_co.areas[2], fit_co.area_errors[2]
    a_cross, e_cross = fit_cross.areas[2], fit_cross.area_errors[2]
    if a_cross <= 0:
        raise PeakFitError("cross-polarized zero-delay peak has no area")
    ratio = a_co / a_cross
    err = np.hypot(e_co / a_cross, a_co * e_cross / a_cross**2)
    return 1.0 - ratio, float(err)
