"""Impairment pipeline between transmitter and receiver.

Order is fixed and relied on by the estimators' sign conventions:
timing offset, then multipath fading, then carrier frequency offset,
then AWGN. SNR is per receive antenna over the occupied bandwidth of
one tone, so with unit tone power the per-sample noise variance is
(rate / tone_bw) / snr_linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigurationError
from .uplink_tx import ComplexGrid

JAKES_ORDER = 32
FRACTIONAL_DELAY_TAPS = 31
FADING_UPDATE_S = 5.0e-4  # hold tap gains over half-millisecond spans


@dataclass(frozen=True)
class ChannelProfile:
    """Tapped delay line with a classical Doppler spectrum."""

    name: str
    delays_ns: np.ndarray
    powers_db: np.ndarray
    doppler_hz: float

    def __post_init__(self):
        d = np.asarray(self.delays_ns, dtype=np.float64)
        if np.any(np.diff(d) < 0) or np.any(d < 0):
            raise ConfigurationError("taps: delays must be non-negative ascending")

    @property
    def linear_powers(self) -> np.ndarray:
        """Tap powers normalized to unit total gain."""
        p = 10.0 ** (np.asarray(self.powers_db, dtype=np.float64) / 10.0)
        return p / p.sum()

    @property
    def coherence_time_s(self) -> float:
        return math.inf if self.doppler_hz == 0 else 0.423 / self.doppler_hz


def _profile_from_text(name: str, text: str, doppler_hz: float) -> ChannelProfile:
    delays, powers = [], []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        d, p = line.split()
        delays.append(float(d))
        powers.append(float(p))
    return ChannelProfile(name, np.array(delays), np.array(powers), doppler_hz)


def load_profile(path, doppler_hz: float, name: str = "custom") -> ChannelProfile:
    """Read `delay_ns power_db` lines from a profile data file."""
    with open(path, "r", encoding="utf-8") as fh:
        return _profile_from_text(name, fh.read(), doppler_hz)


def _packaged_profile(fname: str, name: str, doppler_hz: float) -> ChannelProfile:
    try:
        text = resources.files("nbiot_uplink.data").joinpath(fname).read_text()
    except FileNotFoundError as exc:
        raise ConfigurationError(f"profile data file {fname} missing") from exc
    return _profile_from_text(name, text, doppler_hz)


def epa(doppler_hz: float = 5.0) -> ChannelProfile:
    return _packaged_profile("epa.txt", f"epa{doppler_hz:g}", doppler_hz)


def etu(doppler_hz: float = 1.0) -> ChannelProfile:
    return _packaged_profile("etu.txt", f"etu{doppler_hz:g}", doppler_hz)


def static_profile() -> ChannelProfile:
    """Single unit tap, zero Doppler: degenerates to a wire."""
    return ChannelProfile("static", np.array([0.0]), np.array([0.0]), 0.0)


@dataclass
class ImpairmentConfig:
    """Front-to-back impairment settings for one trial."""

    snr_db: float = math.inf
    cfo_hz: float = 0.0
    timing_offset_samples: float = 0.0
    n_rx: int = 1

    def __post_init__(self):
        if self.n_rx not in (1, 2, 4):
            raise ConfigurationError(f"n_rx: {self.n_rx} not in (1, 2, 4)")


# ---------------------------------------------------------------------------
# individual impairments
# ---------------------------------------------------------------------------

def apply_cfo(grid: ComplexGrid, cfo_hz: float) -> ComplexGrid:
    """Rotate sample n by exp(j*2*pi*xi*n), xi = cfo / rate."""
    if cfo_hz == 0.0:
        return grid.copy_with(grid.samples.copy())
    if not math.isfinite(cfo_hz):
        raise ConfigurationError("cfo_hz: must be finite")
    xi = cfo_hz / grid.rate_hz
    ramp = np.exp(2j * np.pi * xi * np.arange(grid.n_samples))
    return grid.copy_with(grid.samples * ramp)


def fractional_delay_filter(frac: float, n_taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Windowed-sinc interpolator delaying by ``frac`` in [0, 1)."""
    center = (n_taps - 1) // 2
    m = np.arange(n_taps)
    h = np.sinc(m - center - frac) * np.kaiser(n_taps, 8.0)
    return h / h.sum()


def apply_timing_offset(grid: ComplexGrid, tau_samples: float) -> ComplexGrid:
    """Delay the waveform: integer sample shift plus band-limited
    interpolation of the fractional part. Zero-padded at the edges."""
    if tau_samples < 0:
        raise ConfigurationError("timing_offset: must be non-negative")
    d = int(np.floor(tau_samples))
    frac = tau_samples - d
    out = np.zeros_like(grid.samples)
    if frac < 1e-12:
        if d < grid.n_samples:
            out[:, d:] = grid.samples[:, :grid.n_samples - d]
        return grid.copy_with(out)
    h = fractional_delay_filter(frac)
    center = (h.size - 1) // 2
    for a in range(grid.n_antennas):
        full = np.convolve(grid.samples[a], h)
        shifted = full[center:center + grid.n_samples]
        if d < grid.n_samples:
            out[a, d:] = shifted[:grid.n_samples - d]
    return grid.copy_with(out)


@dataclass
class FadingState:
    """Sum-of-sinusoids Rayleigh processes, one per (antenna, tap)."""

    profile: ChannelProfile
    n_rx: int
    angles: np.ndarray  # (n_rx, n_taps, order) Doppler cosines
    phases: np.ndarray  # (n_rx, n_taps, order)

    @classmethod
    def draw(cls, profile: ChannelProfile, n_rx: int, rng) -> "FadingState":
        n_taps = profile.delays_ns.size
        shape = (n_rx, n_taps, JAKES_ORDER)
        angles = np.cos(2.0 * np.pi * rng.random(shape))
        phases = 2.0 * np.pi * rng.random(shape)
        return cls(profile, n_rx, angles, phases)

    def gains(self, t_seconds: np.ndarray) -> np.ndarray:
        """Tap gains at the given instants, shape (n_rx, n_taps, n_t)."""
        if self.profile.doppler_hz == 0.0:
            g = np.sqrt(self.profile.linear_powers)[None, :, None]
            return np.broadcast_to(
                g.astype(np.complex128),
                (self.n_rx, g.shape[1], t_seconds.size)).copy()
        w = 2.0 * np.pi * self.profile.doppler_hz
        phase = (w * self.angles[..., None] * t_seconds
                 + self.phases[..., None])
        s = np.exp(1j * phase).sum(axis=2) / np.sqrt(JAKES_ORDER)
        return s * np.sqrt(self.profile.linear_powers)[None, :, None]


def apply_fading(grid: ComplexGrid, profile: ChannelProfile, n_rx: int,
                 rng, state: FadingState | None = None) -> ComplexGrid:
    """Tapped-delay-line fading onto ``n_rx`` uncorrelated antennas.

    Tap delays are rounded to the sample grid (sub-sample NB-IoT
    spreads collapse onto shared bins but stay independent processes);
    gains update every half millisecond and hold in between.
    """
    if state is None:
        state = FadingState.draw(profile, n_rx, rng)
    rate = grid.rate_hz
    delays = np.round(profile.delays_ns * 1e-9 * rate).astype(np.int64)
    n = grid.n_samples
    hop = max(1, int(round(FADING_UPDATE_S * rate)))
    t_idx = np.arange(0, n, hop)
    gains = state.gains(t_idx / rate)  # (n_rx, n_taps, n_updates)
    seg = np.minimum(np.arange(n) // hop, t_idx.size - 1)

    x = grid.samples[0] if grid.n_antennas == 1 else None
    out = np.zeros((n_rx, n), dtype=np.complex128)
    for a in range(n_rx):
        for tap in range(delays.size):
            src = x if x is not None else grid.samples[a % grid.n_antennas]
            d = delays[tap]
            if d >= n:
                continue
            delayed = np.concatenate([np.zeros(d, dtype=np.complex128), src[:n - d]])
            out[a] += delayed * gains[a, tap, seg]
    return ComplexGrid(out, rate, grid.tone_bw_hz, grid.tone_power)


def apply_awgn(grid: ComplexGrid, snr_db: float, rng) -> ComplexGrid:
    """Circularly-symmetric noise at the per-antenna in-band SNR."""
    if math.isinf(snr_db) and snr_db > 0:
        return grid.copy_with(grid.samples.copy())
    snr = 10.0 ** (snr_db / 10.0)
    sigma2 = grid.tone_power * (grid.rate_hz / grid.tone_bw_hz) / snr
    noise = rng.normal(0.0, np.sqrt(sigma2 / 2.0), (*grid.samples.shape, 2))
    return grid.copy_with(grid.samples + noise[..., 0] + 1j * noise[..., 1])


def apply_impairments(grid: ComplexGrid, impairments: ImpairmentConfig,
                      profile: ChannelProfile | None, rng) -> ComplexGrid:
    """Full pipeline: delay, fading, CFO, AWGN (order is frozen)."""
    out = grid
    if impairments.timing_offset_samples:
        out = apply_timing_offset(out, impairments.timing_offset_samples)
    if profile is not None:
        out = apply_fading(out, profile, impairments.n_rx, rng)
    elif impairments.n_rx != out.n_antennas:
        out = out.copy_with(np.repeat(out.samples, impairments.n_rx, axis=0))
    if impairments.cfo_hz:
        out = apply_cfo(out, impairments.cfo_hz)
    return apply_awgn(out, impairments.snr_db, rng)
