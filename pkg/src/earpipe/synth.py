"""Synthetic signal generators with ground truth.

Pink noise is synthesized in the frequency domain (amplitude falling as
1/sqrt(f), uniformly random phases) and scaled to an exact target RMS,
so the energy bookkeeping of a mixed channel is predictable. ECG is a
train of Gaussian R-wave bumps at jittered beat times; the true beat
times are returned alongside the trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cardiac import BeatSeries
from .ingest import Event, Recording


@dataclass(frozen=True)
class EegSynthSpec:
    rate: float = 125.0
    duration_s: float = 60.0
    seed: int = 0
    n_channels: int = 16
    pink_noise_rms: float = 3.0
    band_components: tuple = ()  # (freq_hz, amplitude_uv) pairs
    line_noise: tuple | None = None  # (freq_hz, amplitude_uv)

    def __post_init__(self):
        if self.rate <= 0 or self.duration_s <= 0:
            raise ValueError("rate and duration must be positive")
        if self.n_channels < 1:
            raise ValueError("need at least one channel")
        if self.pink_noise_rms < 0:
            raise ValueError("noise RMS cannot be negative")
        for f, a in self.band_components:
            if not 0 < f < self.rate / 2:
                raise ValueError(f"component at {f} Hz outside (0, Nyquist)")
            if a < 0:
                raise ValueError("component amplitude cannot be negative")


def _pink_noise(n: int, rng: np.random.Generator, rms: float) -> np.ndarray:
    if rms == 0:
        return np.zeros(n)
    n_bins = n // 2 + 1
    amp = np.zeros(n_bins)
    amp[1:] = 1.0 / np.sqrt(np.arange(1, n_bins, dtype=float))
    phases = rng.uniform(0.0, 2.0 * np.pi, n_bins)
    spec = amp * np.exp(1j * phases)
    spec[0] = 0.0
    if n % 2 == 0:
        spec[-1] = spec[-1].real
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x * (rms / sd) if sd > 0 else x


def gen_eeg(spec: EegSynthSpec) -> Recording:
    """Generate multichannel EEG-like data.

    Each channel carries its own pink-noise realization plus the
    requested sinusoidal band components (per-channel random phase) and
    optional line interference. Deterministic for a given seed; meta
    carries the ground-truth amplitudes.
    """
    n = int(round(spec.duration_s * spec.rate))
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n) / spec.rate
    data = np.empty((spec.n_channels, n))
    for c in range(spec.n_channels):
        x = _pink_noise(n, rng, spec.pink_noise_rms)
        for f, a in spec.band_components:
            x = x + a * np.sin(2.0 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
        if spec.line_noise is not None:
            lf, la = spec.line_noise
            x = x + la * np.sin(2.0 * np.pi * lf * t + rng.uniform(0.0, 2.0 * np.pi))
        data[c] = x
    labels = [f"ch{i + 1}" for i in range(spec.n_channels)]
    truth = {
        "pink_noise_rms": spec.pink_noise_rms,
        "band_components": [list(bc) for bc in spec.band_components],
        "line_noise": list(spec.line_noise) if spec.line_noise else None,
        "seed": spec.seed,
    }
    return Recording(rate=spec.rate, labels=labels, data=data, meta={"truth": truth})


@dataclass(frozen=True)
class EcgSynthSpec:
    rate: float = 250.0
    duration_s: float = 60.0
    seed: int = 0
    bpm: float = 60.0
    r_amplitude_uv: float = 600.0
    rr_jitter_ms: float = 20.0
    r_width_ms: float = 20.0  # Gaussian sigma of the R bump

    def __post_init__(self):
        if self.rate <= 0 or self.duration_s <= 0:
            raise ValueError("rate and duration must be positive")
        if not 30.0 <= self.bpm <= 220.0:
            raise ValueError(f"bpm {self.bpm} outside a plausible 30-220 range")
        if self.r_amplitude_uv < 0 or self.rr_jitter_ms < 0:
            raise ValueError("amplitude and jitter cannot be negative")


def gen_ecg(spec: EcgSynthSpec) -> tuple[Recording, BeatSeries]:
    """Generate a single-channel ECG trace plus its true beat times.

    Beat k sits at (k + 1/2) * 60/bpm plus independent Gaussian jitter,
    so successive R-R intervals have SD sqrt(2) * rr_jitter_ms and a
    duration of m periods carries m beats. Amplitude 0 produces a flat
    trace while still reporting the planted beats.
    """
    n = int(round(spec.duration_s * spec.rate))
    rng = np.random.default_rng(spec.seed)
    period = 60.0 / spec.bpm
    base = np.arange(period / 2, spec.duration_s - period / 2 + 1e-9, period)
    jitter = rng.normal(0.0, spec.rr_jitter_ms / 1000.0, len(base))
    beats = np.sort(base + jitter)
    beats = beats[(beats > 0.1) & (beats < spec.duration_s - 0.1)]

    t = np.arange(n) / spec.rate
    sigma_s = spec.r_width_ms / 1000.0
    x = np.zeros(n)
    half = max(1, int(round(6 * sigma_s * spec.rate)))
    for b in beats:
        center = int(round(b * spec.rate))
        lo = max(0, center - half)
        hi = min(n, center + half + 1)
        x[lo:hi] += spec.r_amplitude_uv * np.exp(-((t[lo:hi] - b) ** 2) / (2.0 * sigma_s**2))
    rec = Recording(
        rate=spec.rate,
        labels=["ecg"],
        data=x[None, :],
        meta={"truth": {"bpm": spec.bpm, "beats": beats.tolist(), "seed": spec.seed}},
    )
    return rec, BeatSeries(beat_times=beats, rate=spec.rate)


def mix_sources(sources, mixing=None, seed: int | None = None) -> Recording:
    """Mix source rows into sensor channels: channels = mixing @ sources.

    sources may be a list of Recordings (rows concatenated; rates must
    agree) or a (k, n) array plus an explicit rate via a Recording. When
    mixing is None a random full-rank square matrix is drawn from seed.
    The true matrix is kept in meta["mixing"].
    """
    if isinstance(sources, (list, tuple)):
        if not sources:
            raise ValueError("no sources given")
        rate = sources[0].rate
        n = sources[0].n_samples
        rows = []
        for s in sources:
            if s.rate != rate or s.n_samples != n:
                raise ValueError("all sources must share rate and length")
            rows.append(s.data)
        src = np.vstack(rows)
    else:
        raise ValueError("sources must be a list of Recordings")

    k = src.shape[0]
    if mixing is None:
        if seed is None:
            raise ValueError("random mixing requires an explicit seed")
        rng = np.random.default_rng(seed)
        mixing = rng.standard_normal((k, k))
    mixing = np.asarray(mixing, dtype=float)
    if mixing.ndim != 2 or mixing.shape[1] != k:
        raise ValueError(f"mixing must be (channels, {k}), got {mixing.shape}")
    if np.linalg.matrix_rank(mixing) < min(mixing.shape):
        raise ValueError("mixing matrix is singular")
    data = mixing @ src
    labels = [f"ch{i + 1}" for i in range(data.shape[0])]
    return Recording(rate=rate, labels=labels, data=data,
                     meta={"mixing": mixing.tolist()})


@dataclass(frozen=True)
class BergerSpec:
    """Two-segment fixture: identical pink noise, alpha scaled 3:1."""

    rate: float = 125.0
    segment_s: float = 60.0
    seed: int = 0
    n_channels: int = 16
    pink_noise_rms: float = 3.0
    alpha_open_uv: float = 1.5
    alpha_ratio: float = 3.0
    alpha_band_hz: tuple = (8.0, 12.0)
    psd_segment: int = 256
    line_noise: tuple | None = None


def berger_session(spec: BergerSpec = BergerSpec()) -> Recording:
    """Eyes-open / eyes-closed session with a known alpha contrast.

    Both segments share one pink-noise realization per channel; an
    alpha-band comb (one sinusoid per PSD bin center inside the band,
    per-channel random phases) is scaled by alpha_ratio in the closed
    segment. Every channel therefore shows the same known power ratio.
    """
    n_seg = int(round(spec.segment_s * spec.rate))
    rng = np.random.default_rng(spec.seed)
    t = np.arange(2 * n_seg) / spec.rate
    envelope = np.ones(2 * n_seg)
    envelope[n_seg:] = spec.alpha_ratio

    df = spec.rate / spec.psd_segment
    k_lo = int(np.ceil(spec.alpha_band_hz[0] / df))
    k_hi = int(np.floor(spec.alpha_band_hz[1] / df))
    comb_freqs = np.arange(k_lo, k_hi + 1) * df

    data = np.empty((spec.n_channels, 2 * n_seg))
    for c in range(spec.n_channels):
        noise = _pink_noise(n_seg, rng, spec.pink_noise_rms)
        x = np.concatenate([noise, noise])  # identical noise in both segments
        alpha = np.zeros(2 * n_seg)
        for f in comb_freqs:
            alpha += np.sin(2.0 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
        x = x + spec.alpha_open_uv * envelope * alpha
        if spec.line_noise is not None:
            lf, la = spec.line_noise
            x = x + la * np.sin(2.0 * np.pi * lf * t + rng.uniform(0.0, 2.0 * np.pi))
        data[c] = x
    events = [
        Event("eyes_open", 0.0, spec.segment_s),
        Event("eyes_closed", spec.segment_s, 2 * spec.segment_s),
    ]
    truth = {
        "alpha_open_uv": spec.alpha_open_uv,
        "alpha_ratio": spec.alpha_ratio,
        "comb_freqs": comb_freqs.tolist(),
        "pink_noise_rms": spec.pink_noise_rms,
        "seed": spec.seed,
    }
    return Recording(
        rate=spec.rate,
        labels=[f"ch{i + 1}" for i in range(spec.n_channels)],
        data=data,
        events=events,
        meta={"truth": truth},
    )
