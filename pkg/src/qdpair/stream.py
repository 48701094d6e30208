"""Time-tagged Monte Carlo simulation of the pulsed emission/detection chain.

Each laser pulse can prepare the emitter (two-state blinking telegraph times
preparation fidelity), which then emits the cascade photons with exponential
delays.  Extraction and detector efficiencies thin the photon record, clicks
acquire Gaussian timing jitter, and per-channel deadtime suppresses near
coincident clicks.  Generation is chunked with independent RNG substreams
per fixed-size pulse block, so the output is identical no matter how many
workers process the blocks.

Also holds the photon-rate bookkeeping used to quote detector-corrected
arrival rates and extraction efficiencies.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

TAG_SIGNAL = 0
TAG_MULTIPHOTON = 1
TAG_BACKGROUND = 2
TAG_NAMES = {TAG_SIGNAL: "signal", TAG_MULTIPHOTON: "multiphoton", TAG_BACKGROUND: "background"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}

CHUNK_PULSES = 1 << 20

_SIGMA_PER_FWHM = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


class SaturationError(ValueError):
    """Measured rate is at or beyond the deadtime-limited ceiling."""


class CalibrationError(ValueError):
    """Rate accounting produced an unphysical efficiency."""


@dataclass(frozen=True)
class SourceConfig:
    """Pulsed cascade source parameters.

    rep_rate: laser repetition rate, Hz
    tau_x / tau_xx: exciton and biexciton lifetimes, ns
    prep_fidelity: probability a pulse prepares the emitter
    multiphoton_prob: probability of one extra same-window photon
    blink_on_rate / blink_off_rate: telegraph rates (1/s) for OFF->ON and
        ON->OFF switching; both zero disables blinking (always ON)
    extraction_eff: photon collection probability upstream of the detectors
    """

    rep_rate: float = 80e6
    tau_x: float = 0.044
    tau_xx: float = 0.018
    prep_fidelity: float = 1.0
    multiphoton_prob: float = 0.0
    blink_on_rate: float = 0.0
    blink_off_rate: float = 0.0
    extraction_eff: float = 1.0

    def __post_init__(self):
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive")
        if self.tau_x <= 0 or self.tau_xx <= 0:
            raise ValueError("lifetimes must be positive")
        for name in ("prep_fidelity", "multiphoton_prob", "extraction_eff"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.blink_on_rate < 0 or self.blink_off_rate < 0:
            raise ValueError("blink rates must be >= 0")

    def on_fraction(self) -> float:
        if self.blink_on_rate == 0 and self.blink_off_rate == 0:
            return 1.0
        return self.blink_on_rate / (self.blink_on_rate + self.blink_off_rate)


@dataclass(frozen=True)
class DetectorConfig:
    """Single-photon detector: timing jitter FWHM (ns), efficiency, deadtime (ns)."""

    jitter_fwhm: float = 0.35
    efficiency: float = 1.0
    deadtime: float = 0.0

    def __post_init__(self):
        if self.jitter_fwhm < 0 or self.deadtime < 0:
            raise ValueError("jitter and deadtime must be >= 0")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")


@dataclass
class EventStream:
    """Time-ordered detector click record.

    timestamps are in ns; channels index the detector list used during
    generation; tags mark the ground truth of each click.
    """

    timestamps: np.ndarray
    channels: np.ndarray
    tags: np.ndarray
    n_channels: int
    duration: float = 0.0  # seconds of simulated wall time
    rep_period_ns: float | None = None

    def __len__(self) -> int:
        return len(self.timestamps)

    def channel_times(self, channel: int) -> np.ndarray:
        return self.timestamps[self.channels == channel]

    def to_csv(self) -> str:
        lines = ["timestamp_ns,channel,truth_tag"]
        for t, ch, tag in zip(self.timestamps, self.channels, self.tags):
            lines.append(f"{float(t)!r},{int(ch)},{TAG_NAMES[int(tag)]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "EventStream":
        times, chans, tags = [], [], []
        lines = text.splitlines()
        if not lines or lines[0].strip() != "timestamp_ns,channel,truth_tag":
            raise ValueError("expected header: timestamp_ns,channel,truth_tag")
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                t, ch, tag = line.split(",")
                times.append(float(t))
                chans.append(int(ch))
                tags.append(TAG_CODES[tag.strip()])
            except (ValueError, KeyError) as exc:
                raise ValueError(f"malformed event row at line {lineno}: {line!r} ({exc})") from exc
        return cls(
            timestamps=np.array(times, dtype=float),
            channels=np.array(chans, dtype=np.uint8),
            tags=np.array(tags, dtype=np.uint8),
            n_channels=int(max(chans) + 1 if chans else 0),
        )

    MAGIC = b"QDEV"

    def to_binary(self) -> bytes:
        """Framed binary record: header, then per event a little-endian
        u64 timestamp in picoseconds, u8 channel, u8 tag."""
        buf = io.BytesIO()
        rep_ps = int(round((self.rep_period_ns or 0.0) * 1000))
        dur_ps = int(round(self.duration * 1e12))
        buf.write(self.MAGIC)
        buf.write(struct.pack("<BBHQQQ", 1, self.n_channels, 0, len(self.timestamps), rep_ps, dur_ps))
        ts_ps = np.round(self.timestamps * 1000.0).astype(np.uint64)
        records = np.zeros(len(ts_ps), dtype=[("t", "<u8"), ("ch", "u1"), ("tag", "u1")])
        records["t"] = ts_ps
        records["ch"] = self.channels
        records["tag"] = self.tags
        buf.write(records.tobytes())
        return buf.getvalue()

    @classmethod
    def from_binary(cls, data: bytes) -> "EventStream":
        if data[:4] != cls.MAGIC:
            raise ValueError("not an event stream: bad magic")
        version, n_channels, _, count, rep_ps, dur_ps = struct.unpack_from("<BBHQQQ", data, 4)
        if version != 1:
            raise ValueError(f"unsupported event stream version {version}")
        records = np.frombuffer(data, dtype=[("t", "<u8"), ("ch", "u1"), ("tag", "u1")], count=count, offset=32)
        return cls(
            timestamps=records["t"].astype(float) / 1000.0,
            channels=records["ch"].copy(),
            tags=records["tag"].copy(),
            n_channels=n_channels,
            duration=dur_ps / 1e12,
            rep_period_ns=rep_ps / 1000.0 if rep_ps else None,
        )


def _blink_on_mask(source: SourceConfig, pulse_times_s: np.ndarray, seed_seq) -> np.ndarray:
    """ON/OFF state of the telegraph process at each pulse time."""
    if source.blink_on_rate == 0 and source.blink_off_rate == 0:
        return np.ones(len(pulse_times_s), dtype=bool)
    rng = np.random.default_rng(seed_seq)
    duration = pulse_times_s[-1] if len(pulse_times_s) else 0.0
    start_on = rng.random() < source.on_fraction()
    boundaries = []
    t, state = 0.0, start_on
    while t <= duration:
        rate = source.blink_off_rate if state else source.blink_on_rate
        if rate == 0:
            break
        t += rng.exponential(1.0 / rate)
        boundaries.append(t)
        state = not state
    switches = np.searchsorted(np.array(boundaries), pulse_times_s, side="right")
    return (switches % 2 == 0) == start_on


def simulate_stream(
    source: SourceConfig,
    detectors,
    duration: float,
    seed: int,
    monitor: str = "x",
) -> EventStream:
    """Simulate detector clicks for ``duration`` seconds of pulsed operation.

    ``monitor`` selects which cascade line reaches the detectors ("x", "xx",
    or "both"); photons are routed uniformly at random over the detector
    list, which models a balanced splitter for a two-detector HBT setup.
    Deterministic for a fixed seed.
    """
    detectors = list(detectors)
    if not detectors:
        raise ValueError("need at least one detector")
    if monitor not in ("x", "xx", "both"):
        raise ValueError(f"monitor must be 'x', 'xx' or 'both', got {monitor!r}")
    if duration <= 0:
        raise ValueError("duration must be positive")

    n_pulses = int(round(duration * source.rep_rate))
    period_ns = 1e9 / source.rep_rate
    eff = np.array([source.extraction_eff * d.efficiency for d in detectors])
    jitter_sigma = np.array([d.jitter_fwhm * _SIGMA_PER_FWHM for d in detectors])

    n_chunks = max(1, -(-n_pulses // CHUNK_PULSES))
    root = np.random.SeedSequence(seed)
    blink_seed, *chunk_seeds = root.spawn(n_chunks + 1)

    pulse_times_s = np.arange(n_pulses) * (1.0 / source.rep_rate)
    on_mask_all = _blink_on_mask(source, pulse_times_s, blink_seed)

    parts = []
    for ci in range(n_chunks):
        lo = ci * CHUNK_PULSES
        hi = min(n_pulses, lo + CHUNK_PULSES)
        n = hi - lo
        rng = np.random.default_rng(chunk_seeds[ci])
        base_ns = np.arange(lo, hi) * period_ns

        prepared = on_mask_all[lo:hi] & (rng.random(n) < source.prep_fidelity)
        d_xx = rng.exponential(source.tau_xx, n)
        d_x = d_xx + rng.exponential(source.tau_x, n)
        extra = prepared & (rng.random(n) < source.multiphoton_prob)
        e_xx = rng.exponential(source.tau_xx, n)
        e_x = e_xx + rng.exponential(source.tau_x, n)

        times, tags = [], []
        def emit(delays, mask, tag):
            times.append(base_ns[mask] + delays[mask])
            tags.append(np.full(mask.sum(), tag, dtype=np.uint8))

        if monitor in ("x", "both"):
            emit(d_x, prepared, TAG_SIGNAL)
            emit(e_x, extra, TAG_MULTIPHOTON)
        if monitor in ("xx", "both"):
            emit(d_xx, prepared, TAG_SIGNAL)
            emit(e_xx, extra, TAG_MULTIPHOTON)

        t = np.concatenate(times) if times else np.empty(0)
        g = np.concatenate(tags) if tags else np.empty(0, dtype=np.uint8)
        order = np.argsort(t, kind="stable")
        t, g = t[order], g[order]

        ch = rng.integers(0, len(detectors), len(t)).astype(np.uint8)
        detected = rng.random(len(t)) < eff[ch]
        jit = rng.standard_normal(len(t)) * jitter_sigma[ch]
        t = t[detected] + jit[detected]
        parts.append((t, ch[detected], g[detected]))

    t_all = np.concatenate([p[0] for p in parts])
    ch_all = np.concatenate([p[1] for p in parts])
    tag_all = np.concatenate([p[2] for p in parts])
    order = np.argsort(t_all, kind="stable")
    t_all, ch_all, tag_all = t_all[order], ch_all[order], tag_all[order]

    keep = _apply_deadtime(t_all, ch_all, [d.deadtime for d in detectors])
    return EventStream(
        timestamps=t_all[keep],
        channels=ch_all[keep],
        tags=tag_all[keep],
        n_channels=len(detectors),
        duration=duration,
        rep_period_ns=period_ns,
    )


def _apply_deadtime(times, channels, deadtimes) -> np.ndarray:
    """Non-paralyzable deadtime: after an accepted click on a channel, reject
    clicks on that channel until the deadtime has elapsed."""
    keep = np.ones(len(times), dtype=bool)
    for ch, dead in enumerate(deadtimes):
        if dead <= 0:
            continue
        idx = np.flatnonzero(channels == ch)
        t = times[idx]
        kept = np.zeros(len(t), dtype=bool)
        i = 0
        while i < len(t):
            kept[i] = True
            i = int(np.searchsorted(t, t[i] + dead, side="left"))
        keep[idx] = kept
    return keep


def simulate_poisson_stream(rate: float, detectors, duration: float, seed: int) -> EventStream:
    """Laser-like reference stream: Poisson arrivals split over the detectors."""
    detectors = list(detectors)
    if not detectors:
        raise ValueError("need at least one detector")
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate * duration)
    t = np.sort(rng.random(n)) * duration * 1e9
    ch = rng.integers(0, len(detectors), n).astype(np.uint8)
    eff = np.array([d.efficiency for d in detectors])
    sig = np.array([d.jitter_fwhm * _SIGMA_PER_FWHM for d in detectors])
    detected = rng.random(n) < eff[ch]
    t = t[detected] + rng.standard_normal(n)[detected] * sig[ch[detected]]
    ch = ch[detected]
    order = np.argsort(t, kind="stable")
    t, ch = t[order], ch[order]
    keep = _apply_deadtime(t, ch, [d.deadtime for d in detectors])
    return EventStream(
        timestamps=t[keep],
        channels=ch[keep],
        tags=np.full(int(keep.sum()), TAG_BACKGROUND, dtype=np.uint8),
        n_channels=len(detectors),
        duration=duration,
        rep_period_ns=None,
    )


def arriving_rate(measured_rate: float, detector_efficiency: float, deadtime: float) -> float:
    """Invert the detector saturation model to the photon rate at the detector.

    The detector registers r_meas = eta * r / (1 + eta * r * tau); solving
    for r gives r = r_meas / (eta * (1 - r_meas * tau)).  ``deadtime`` is in
    ns, rates in Hz.
    """
    if not 0 < detector_efficiency <= 1:
        raise ValueError("detector_efficiency must lie in (0, 1]")
    if measured_rate < 0 or deadtime < 0:
        raise ValueError("rate and deadtime must be >= 0")
    tau_s = deadtime * 1e-9
    headroom = 1.0 - measured_rate * tau_s
    if headroom <= 0:
        raise SaturationError(
            f"measured rate {measured_rate:.3e} Hz is at the deadtime ceiling "
            f"of {1.0 / tau_s:.3e} Hz"
        )
    return measured_rate / (detector_efficiency * headroom)


def extraction_efficiency(
    arriving_rate_hz: float,
    rep_rate: float,
    setup_transmission: float,
    prep_fidelity: float,
) -> float:
    """Fraction of emitted photons collected by the first lens.

    arriving_rate / (rep_rate * setup_transmission * prep_fidelity); values
    above one indicate an inconsistent calibration and raise.
    """
    if min(arriving_rate_hz, rep_rate, setup_transmission, prep_fidelity) <= 0:
        raise ValueError("all rate-accounting inputs must be positive")
    eta = arriving_rate_hz / (rep_rate * setup_transmission * prep_fidelity)
    if eta > 1.0 + 1e-9:
        raise CalibrationError(
            f"extraction efficiency {eta:.3f} > 1; calibration inputs are inconsistent"
        )
    return eta
