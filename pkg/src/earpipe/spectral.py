"""Power spectral density estimation and band summaries.

Welch's method with mean-detrended, Hamming-windowed segments. Power is
scaled as a one-sided density, 1/(rate * sum(w^2)) per segment with
doubling of all bins except DC and Nyquist, then averaged across
segments, so that sum(psd) * df approximates the signal variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import Recording

DB_EPS = 1e-15
DB_FLOOR = -150.0


@dataclass(frozen=True)
class BandDefinition:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if self.lo_hz < 0 or self.hi_hz <= self.lo_hz:
            raise ValueError(f"band {self.name}: bad bounds [{self.lo_hz}, {self.hi_hz}]")


DEFAULT_BANDS = (
    BandDefinition("theta", 4.0, 7.0),
    BandDefinition("alpha", 8.0, 12.0),
    BandDefinition("beta", 13.0, 30.0),
    BandDefinition("gamma", 31.0, 40.0),
)


@dataclass
class PsdEstimate:
    freqs: np.ndarray
    power: np.ndarray  # (channels, bins)
    rate: float
    segment_length: int
    window_count: int
    scale: str = "linear"  # "linear" (density) or "db"
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.power = np.atleast_2d(np.asarray(self.power, dtype=float))


def welch_psd(
    x: np.ndarray,
    rate: float,
    seg: int = 256,
    overlap: int = 64,
    window: str = "hamming",
) -> PsdEstimate:
    """Welch periodogram average of a single channel.

    Segments hop by seg - overlap samples; each is mean-detrended,
    Hamming-windowed and transformed; squared magnitudes are scaled by
    1/(rate * sum(w^2)) and one-sided-doubled except at DC and Nyquist.
    The mean across segments is returned. With overlap=0 and len(x)==seg
    this reduces to a single periodogram.
    """
    if window != "hamming":
        raise ValueError(f"only the hamming window is supported, got {window!r}")
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if seg < 8:
        raise ValueError(f"segment length {seg} too small")
    if not 0 <= overlap < seg:
        raise ValueError(f"overlap {overlap} must satisfy 0 <= overlap < seg ({seg})")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("welch_psd expects a single channel; use welch_psd_recording")
    n = len(x)
    if n < seg:
        raise ValueError(f"need at least seg={seg} samples, got {n}")

    hop = seg - overlap
    count = 1 + (n - seg) // hop
    w = np.hamming(seg)
    norm = 1.0 / (rate * np.sum(w * w))
    acc = np.zeros(seg // 2 + 1)
    for j in range(count):
        s = j * hop
        d = x[s : s + seg]
        d = d - d.mean()
        spect = np.fft.rfft(d * w)
        p = (spect.real**2 + spect.imag**2) * norm
        p[1:] *= 2.0
        if seg % 2 == 0:
            p[-1] *= 0.5
        acc += p
    acc /= count
    freqs = np.fft.rfftfreq(seg, d=1.0 / rate)
    return PsdEstimate(
        freqs=freqs,
        power=acc[None, :],
        rate=rate,
        segment_length=seg,
        window_count=count,
    )


def welch_psd_recording(
    rec: Recording,
    seg: int = 256,
    overlap: int = 64,
    exclude_spans: list[tuple[float, float]] | None = None,
) -> PsdEstimate:
    """Per-channel Welch PSD of a recording.

    exclude_spans lists [start_s, end_s) intervals (in the recording's
    own timebase, t0 = 0) whose overlapping segments are skipped, e.g.
    windows flagged by artifact rejection.
    """
    hop = seg - overlap
    n = rec.n_samples
    if n < seg:
        raise ValueError(f"need at least seg={seg} samples, got {n}")
    count = 1 + (n - seg) // hop
    keep: list[int] = []
    for j in range(count):
        s = j * hop
        t_lo = s / rec.rate
        t_hi = (s + seg) / rec.rate
        bad = False
        for a, b in exclude_spans or ():
            if t_lo < b and a < t_hi:
                bad = True
                break
        if not bad:
            keep.append(s)
    if not keep:
        raise ValueError("every segment overlaps an excluded span; nothing to average")

    w = np.hamming(seg)
    norm = 1.0 / (rec.rate * np.sum(w * w))
    acc = np.zeros((rec.n_channels, seg // 2 + 1))
    for s in keep:
        d = rec.data[:, s : s + seg]
        d = d - d.mean(axis=1, keepdims=True)
        spect = np.fft.rfft(d * w, axis=1)
        p = (spect.real**2 + spect.imag**2) * norm
        p[:, 1:] *= 2.0
        if seg % 2 == 0:
            p[:, -1] *= 0.5
        acc += p
    acc /= len(keep)
    return PsdEstimate(
        freqs=np.fft.rfftfreq(seg, d=1.0 / rec.rate),
        power=acc,
        rate=rec.rate,
        segment_length=seg,
        window_count=len(keep),
        labels=list(rec.labels),
    )


def to_db(psd: PsdEstimate) -> PsdEstimate:
    """10*log10 of the power density, floored at -150 dB."""
    if psd.scale == "db":
        raise ValueError("estimate is already in dB")
    power = 10.0 * np.log10(np.maximum(psd.power, DB_EPS))
    power = np.maximum(power, DB_FLOOR)
    return PsdEstimate(
        freqs=psd.freqs.copy(),
        power=power,
        rate=psd.rate,
        segment_length=psd.segment_length,
        window_count=psd.window_count,
        scale="db",
        labels=list(psd.labels),
    )


def band_power(psd: PsdEstimate, bands=DEFAULT_BANDS) -> dict:
    """Median dB power per band, per channel.

    Bounds are inclusive of bin centers, so the gaps between canonical
    bands (7-8 Hz, 12-13 Hz) stay unassigned. Requires a dB-scaled
    estimate.
    """
    if psd.scale != "db":
        raise ValueError("band_power expects a dB-scaled estimate; call to_db first")
    nyq = psd.rate / 2.0
    out: dict[str, np.ndarray] = {}
    for band in bands:
        if band.hi_hz > nyq + 1e-12:
            raise ValueError(f"band {band.name} upper edge {band.hi_hz} Hz beyond Nyquist {nyq} Hz")
        mask = (psd.freqs >= band.lo_hz - 1e-12) & (psd.freqs <= band.hi_hz + 1e-12)
        if not mask.any():
            raise ValueError(f"band {band.name} contains no frequency bins")
        out[band.name] = np.median(psd.power[:, mask], axis=1)
    return out


def parse_band_spec(text: str) -> tuple[BandDefinition, ...]:
    """Parse 'name:lo:hi,name:lo:hi,...' into band definitions."""
    bands = []
    for part in text.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ValueError(f"bad band spec {part!r}; expected name:lo:hi")
        bands.append(BandDefinition(bits[0], float(bits[1]), float(bits[2])))
    return tuple(bands)


@dataclass
class QcReport:
    labels: list[str]
    rms_uv: np.ndarray
    amplitude_typical: np.ndarray  # bool per channel
    hf_ratio: np.ndarray
    line_ratio: np.ndarray
    line_freq_hz: float

    def to_dict(self) -> dict:
        return {
            "line_freq_hz": self.line_freq_hz,
            "channels": [
                {
                    "label": self.labels[i],
                    "rms_uv": float(self.rms_uv[i]),
                    "amplitude_typical": bool(self.amplitude_typical[i]),
                    "hf_ratio": float(self.hf_ratio[i]),
                    "line_ratio": float(self.line_ratio[i]),
                }
                for i in range(len(self.labels))
            ],
        }


def qc_report(rec: Recording, psd: PsdEstimate, line_freq_hz: float = 50.0) -> QcReport:
    """Per-channel data-quality summary.

    RMS amplitudes between 1 and 20 microvolts count as typical for
    around-the-ear recordings. The high-frequency ratio is the linear
    power mass in 31-62 Hz over the total; the line ratio is the mass
    within +/-1 Hz of the line frequency over the total.
    """
    if psd.scale != "linear":
        raise ValueError("qc_report expects a linear-scale estimate")
    if psd.power.shape[0] != rec.n_channels:
        raise ValueError("PSD channel count does not match the recording")
    rms = np.sqrt(np.mean(rec.data**2, axis=1))
    total = psd.power.sum(axis=1)
    total = np.where(total > 0, total, np.inf)
    hf_mask = (psd.freqs >= 31.0) & (psd.freqs <= 62.0)
    line_mask = np.abs(psd.freqs - line_freq_hz) <= 1.0
    hf = psd.power[:, hf_mask].sum(axis=1) / total
    line = psd.power[:, line_mask].sum(axis=1) / total
    return QcReport(
        labels=list(rec.labels),
        rms_uv=rms,
        amplitude_typical=(rms >= 1.0) & (rms <= 20.0),
        hf_ratio=hf,
        line_ratio=line,
        line_freq_hz=line_freq_hz,
    )


@dataclass(frozen=True)
class BandPowerRow:
    participant: str
    condition: str
    channel: str
    band: str
    power_db: float


def write_band_table(rows: list[BandPowerRow], path) -> None:
    """Write band-power rows; duplicate key tuples are rejected."""
    seen = set()
    for r in rows:
        key = (r.participant, r.condition, r.channel, r.band)
        if key in seen:
            raise ValueError(f"duplicate band-power row for {key}")
        seen.add(key)
    with open(path, "w", newline="") as fh:
        fh.write("participant,condition,channel,band,power_db\n")
        for r in rows:
            fh.write(f"{r.participant},{r.condition},{r.channel},{r.band},{r.power_db:.6f}\n")


def read_band_table(path) -> list[BandPowerRow]:
    import csv as _csv

    rows = []
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        need = {"participant", "condition", "channel", "band", "power_db"}
        if reader.fieldnames is None or need - set(reader.fieldnames):
            raise ValueError(f"{path}: expected header participant,condition,channel,band,power_db")
        for row in reader:
            rows.append(
                BandPowerRow(
                    row["participant"],
                    row["condition"],
                    row["channel"],
                    row["band"],
                    float(row["power_db"]),
                )
            )
    return rows
