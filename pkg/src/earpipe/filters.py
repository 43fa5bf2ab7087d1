"""Linear cleaning steps: FIR filtering, baseline removal, line-noise fitting.

Filters are windowed-sinc FIR kernels applied as a single zero-phase
pass: the linear convolution is computed against the zero-padded signal
and shifted back by the group delay (order/2), so a symmetric kernel
introduces no net lag. Mains interference is removed by sliding-window
least-squares fits of sine/cosine pairs at the line frequency rather
than by a notch, which leaves the neighbouring spectrum untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Recording

FIR_KINDS = ("lowpass", "highpass")
FIR_WINDOWS = ("hann", "hamming")


@dataclass(frozen=True)
class FirSpec:
    kind: str
    cutoff_hz: float
    order: int
    window: str = "hann"

    def __post_init__(self):
        if self.kind not in FIR_KINDS:
            raise ValueError(f"kind must be one of {FIR_KINDS}, got {self.kind!r}")
        if self.window not in FIR_WINDOWS:
            raise ValueError(f"window must be one of {FIR_WINDOWS}, got {self.window!r}")
        if self.order <= 0 or self.order % 2 != 0:
            raise ValueError(f"order must be a positive even integer, got {self.order}")
        if self.cutoff_hz <= 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff_hz}")


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    group_delay: int
    spec: FirSpec

    @property
    def n_taps(self) -> int:
        return len(self.taps)


def design_fir(spec: FirSpec, rate: float) -> FirFilter:
    """Design a windowed-sinc FIR kernel.

    The ideal sinc response at the cutoff is multiplied by the chosen
    window and normalized to unit DC gain; a highpass is obtained by
    spectral inversion of the complementary lowpass. Taps depend only on
    the spec and rate, never on data. The -6 dB point of the result sits
    at the cutoff frequency.
    """
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    nyq = rate / 2.0
    if spec.cutoff_hz >= nyq:
        raise ValueError(
            f"cutoff {spec.cutoff_hz} Hz must lie below the Nyquist frequency {nyq} Hz"
        )
    n = spec.order + 1
    m = np.arange(n) - spec.order / 2.0
    fc = spec.cutoff_hz / rate
    taps = 2.0 * fc * np.sinc(2.0 * fc * m)
    win = np.hanning(n) if spec.window == "hann" else np.hamming(n)
    taps = taps * win
    taps = 0.5 * (taps + taps[::-1])  # force exact symmetry
    taps /= taps.sum()
    if spec.kind == "highpass":
        taps = -taps
        taps[spec.order // 2] += 1.0
    return FirFilter(taps=taps, group_delay=spec.order // 2, spec=spec)


def apply_zero_phase_array(x: np.ndarray, fir: FirFilter) -> np.ndarray:
    """Filter one or more rows with zero net delay.

    Accepts (n,) or (channels, n). The input is implicitly zero-padded,
    so the first and last group_delay samples carry edge transients.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    n = rows.shape[1]
    if n <= fir.n_taps:
        raise ValueError(
            f"segment length {n} too short for a {fir.n_taps}-tap filter; "
            f"need more than {fir.n_taps} samples"
        )
    d = fir.group_delay
    out = np.empty_like(rows)
    for i in range(rows.shape[0]):
        full = np.convolve(rows[i], fir.taps)
        out[i] = full[d : d + n]
    return out[0] if single else out


def apply_zero_phase(rec: Recording, fir: FirFilter) -> Recording:
    out = rec.copy()
    out.data = apply_zero_phase_array(rec.data, fir)
    out.meta["edge_samples"] = max(out.meta.get("edge_samples", 0), fir.group_delay)
    return out


def baseline_correct(rec: Recording) -> Recording:
    """Subtract each channel's mean over the whole recording."""
    if rec.n_samples == 0:
        raise ValueError("cannot baseline-correct an empty recording")
    out = rec.copy()
    out.data = rec.data - rec.data.mean(axis=1, keepdims=True)
    return out


def _line_design_matrix(t: np.ndarray, f0: float, harmonics: int) -> np.ndarray:
    cols = []
    for h in range(1, harmonics + 1):
        w = 2.0 * np.pi * h * f0 * t
        cols.append(np.sin(w))
        cols.append(np.cos(w))
    return np.stack(cols, axis=1)


def remove_line_noise(
    rec: Recording,
    f0: float = 50.0,
    win_s: float = 4.0,
    step_s: float = 1.0,
    harmonics: int = 1,
) -> Recording:
    """Subtract a sliding-window sinusoidal fit at the line frequency.

    Within each window the amplitude and phase of the interference are
    estimated by least squares against sin/cos regressors at f0 (and at
    the requested number of harmonics); the per-window estimates are
    blended by raised-cosine overlap-add before subtraction. A window
    longer than the segment degrades to a single whole-segment fit.
    """
    if not 0 < f0 < rec.rate / 2:
        raise ValueError(f"line frequency {f0} Hz outside (0, Nyquist)")
    if harmonics < 1:
        raise ValueError(f"harmonics must be >= 1, got {harmonics}")
    if win_s <= 0 or step_s <= 0:
        raise ValueError("window and step must be positive")
    n = rec.n_samples
    if n == 0:
        raise ValueError("cannot filter an empty recording")
    t = np.arange(n) / rec.rate
    out = rec.copy()

    w_len = int(round(win_s * rec.rate))
    if w_len >= n:
        design = _line_design_matrix(t, f0, harmonics)
        beta, *_ = np.linalg.lstsq(design, rec.data.T, rcond=None)
        out.data = rec.data - (design @ beta).T
        return out

    hop = max(1, int(round(step_s * rec.rate)))
    starts = list(range(0, n - w_len + 1, hop))
    if starts[-1] != n - w_len:
        starts.append(n - w_len)
    # strictly positive taper so every covered sample gets weight
    k = np.arange(w_len)
    taper = np.sin(np.pi * (k + 0.5) / w_len) ** 2

    est = np.zeros_like(rec.data)
    wsum = np.zeros(n)
    for s in starts:
        seg = rec.data[:, s : s + w_len]
        design = _line_design_matrix(t[s : s + w_len], f0, harmonics)
        beta, *_ = np.linalg.lstsq(design, seg.T, rcond=None)
        est[:, s : s + w_len] += taper * (design @ beta).T
        wsum[s : s + w_len] += taper
    est /= np.maximum(wsum, np.finfo(float).tiny)
    out.data = rec.data - est
    return out
