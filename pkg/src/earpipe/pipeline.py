"""End-to-end processing driven by an INI config.

Stage order per segment: channel mean subtraction, linked-mastoid
re-referencing, line-noise removal, 1 Hz highpass, 45 Hz lowpass, then
ICA (for ECG pickup) and burst rejection on the filtered data, Welch
PSD with flagged windows excluded, and median band powers. Every
randomized stage takes an explicit seed from the config, so two runs of
the same config produce byte-identical reports; wall-clock metadata
goes to a separate sidecar file.
"""

from __future__ import annotations

import configparser
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import (
    AsrConfig,
    CalibrationError,
    asr_calibrate,
    asr_process,
    ecg_component_score,
    ica_decompose,
    select_ecg_ic,
)
from .cardiac import BeatSeries, match_beats, paired_rr, pan_tompkins, rr_outlier_filter, rr_periods
from .filters import FirSpec, apply_zero_phase, baseline_correct, design_fir, remove_line_noise
from .ingest import (
    Recording,
    cut_segments,
    frames_to_recording,
    load_events_csv,
    load_session_csv,
    parse_stream,
)
from .montage import (
    builtin_montage_path,
    load_montage_csv,
    relabel_by_montage,
    rereference_linked_mastoid,
    validate as validate_montage,
)
from .spectral import (
    BandPowerRow,
    DEFAULT_BANDS,
    parse_band_spec,
    qc_report,
    to_db,
    band_power,
    welch_psd_recording,
    write_band_table,
)
from .stats import bland_altman


class ConfigError(ValueError):
    """Bad configuration; the CLI maps this to exit code 2."""


class DataError(ValueError):
    """Missing or malformed input data; the CLI maps this to exit code 3."""


def _as_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot read boolean value {text!r}")


@dataclass
class StageToggles:
    baseline: bool = True
    rereference: bool = True
    line: bool = True
    highpass: bool = True
    lowpass: bool = True
    ica: bool = True
    asr: bool = True


@dataclass
class PipelineConfig:
    session: str | None = None
    raw: str | None = None
    events: str | None = None
    montage: str | None = None
    participant: str = "P01"
    reference_rr: str | None = None
    surveys: str | None = None
    rate: float = 125.0
    out_dir: str = "out"

    stages: StageToggles = field(default_factory=StageToggles)

    hp_cutoff_hz: float = 1.0
    hp_order: int = 500
    lp_cutoff_hz: float = 45.0
    lp_order: int = 100
    fir_window: str = "hann"
    line_freq_hz: float = 50.0
    line_harmonics: int = 1
    line_win_s: float = 4.0
    line_step_s: float = 1.0
    asr_burst_k: float = 12.0
    asr_window_criterion: float = 0.15
    asr_calib_win_s: float = 1.0
    asr_proc_win_s: float = 0.5
    ica_max_iter: int = 2000
    ica_seed: int | None = None
    ica_components: int | None = None
    ica_input: str = "filtered"  # filtered | asr
    reref_left: str = "L5"
    reref_right: str = "R5"
    psd_segment: int = 256
    psd_overlap: int = 64
    psd_average: str = "per_segment"  # per_segment | pooled
    bands: tuple = DEFAULT_BANDS

    detect_ecg: bool = True
    match_tolerance_s: float = 0.15
    exclude_conditions: tuple = ("eyes_open", "eyes_closed")

    def validate(self) -> list[str]:
        problems: list[str] = []
        if (self.session is None) == (self.raw is None):
            problems.append("input: exactly one of 'session' or 'raw' must be set")
        if self.events is None:
            problems.append("input: 'events' file is required")
        if self.hp_order <= 0 or self.hp_order % 2:
            problems.append(f"pipeline: hp_order must be positive and even, got {self.hp_order}")
        if self.lp_order <= 0 or self.lp_order % 2:
            problems.append(f"pipeline: lp_order must be positive and even, got {self.lp_order}")
        if self.fir_window not in ("hann", "hamming"):
            problems.append(f"pipeline: fir_window must be hann or hamming, got {self.fir_window}")
        if self.stages.ica and self.ica_seed is None:
            problems.append("pipeline: ica_seed is required while the ica stage is enabled")
        if self.ica_input not in ("filtered", "asr"):
            problems.append(f"pipeline: ica_input must be filtered or asr, got {self.ica_input}")
        if self.psd_average not in ("per_segment", "pooled"):
            problems.append(
                f"pipeline: psd_average must be per_segment or pooled, got {self.psd_average}"
            )
        if not 0 <= self.psd_overlap < self.psd_segment:
            problems.append(
                f"pipeline: psd_overlap {self.psd_overlap} must satisfy "
                f"0 <= overlap < segment ({self.psd_segment})"
            )
        if self.asr_burst_k <= 0:
            problems.append(f"pipeline: asr_burst_k must be positive, got {self.asr_burst_k}")
        if not 0 < self.asr_window_criterion <= 1:
            problems.append(
                f"pipeline: asr_window_criterion must lie in (0, 1], got "
                f"{self.asr_window_criterion}"
            )
        if self.line_harmonics < 1:
            problems.append(f"pipeline: line_harmonics must be >= 1, got {self.line_harmonics}")
        if self.match_tolerance_s <= 0:
            problems.append("analysis: match_tolerance_s must be positive")
        for f_hz, name in ((self.hp_cutoff_hz, "hp_cutoff_hz"), (self.lp_cutoff_hz, "lp_cutoff_hz")):
            if f_hz <= 0:
                problems.append(f"pipeline: {name} must be positive, got {f_hz}")
        return problems


_INPUT_KEYS = {
    "session": str,
    "raw": str,
    "events": str,
    "montage": str,
    "participant": str,
    "reference_rr": str,
    "surveys": str,
    "rate": float,
}
_PIPELINE_KEYS = {
    "hp_cutoff_hz": float,
    "hp_order": int,
    "lp_cutoff_hz": float,
    "lp_order": int,
    "fir_window": str,
    "line_freq_hz": float,
    "line_harmonics": int,
    "line_win_s": float,
    "line_step_s": float,
    "asr_burst_k": float,
    "asr_window_criterion": float,
    "asr_calib_win_s": float,
    "asr_proc_win_s": float,
    "ica_max_iter": int,
    "ica_seed": int,
    "ica_components": int,
    "ica_input": str,
    "reref_left": str,
    "reref_right": str,
    "psd_segment": int,
    "psd_overlap": int,
    "psd_average": str,
}
_ANALYSIS_KEYS = {
    "detect_ecg": "bool",
    "match_tolerance_s": float,
    "exclude_conditions": "csv",
}


def load_config(path) -> PipelineConfig:
    """Parse an INI config into a PipelineConfig, raising ConfigError with
    every problem found."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None

    cfg = PipelineConfig()
    problems: list[str] = []
    known = {"input", "output", "stages", "pipeline", "analysis"}
    for section in parser.sections():
        if section not in known:
            problems.append(f"unknown section [{section}]")

    if parser.has_section("input"):
        for key, value in parser.items("input"):
            if key not in _INPUT_KEYS:
                problems.append(f"input: unknown key {key!r}")
                continue
            try:
                setattr(cfg, key, _INPUT_KEYS[key](value))
            except ValueError:
                problems.append(f"input: bad value for {key}: {value!r}")
    if parser.has_section("output"):
        for key, value in parser.items("output"):
            if key == "dir":
                cfg.out_dir = value
            else:
                problems.append(f"output: unknown key {key!r}")
    if parser.has_section("stages"):
        stage_names = {f.name for f in fields(StageToggles)}
        for key, value in parser.items("stages"):
            if key not in stage_names:
                problems.append(f"stages: unknown stage {key!r}")
                continue
            try:
                setattr(cfg.stages, key, _as_bool(value))
            except ConfigError as exc:
                problems.append(f"stages: {exc}")
    if parser.has_section("pipeline"):
        for key, value in parser.items("pipeline"):
            if key == "bands":
                try:
                    cfg.bands = parse_band_spec(value)
                except ValueError as exc:
                    problems.append(f"pipeline: {exc}")
                continue
            if key not in _PIPELINE_KEYS:
                problems.append(f"pipeline: unknown key {key!r}")
                continue
            try:
                setattr(cfg, key, _PIPELINE_KEYS[key](value))
            except ValueError:
                problems.append(f"pipeline: bad value for {key}: {value!r}")
    if parser.has_section("analysis"):
        for key, value in parser.items("analysis"):
            if key not in _ANALYSIS_KEYS:
                problems.append(f"analysis: unknown key {key!r}")
                continue
            kind = _ANALYSIS_KEYS[key]
            try:
                if kind == "bool":
                    setattr(cfg, key, _as_bool(value))
                elif kind == "csv":
                    setattr(cfg, key, tuple(v.strip() for v in value.split(",") if v.strip()))
                else:
                    setattr(cfg, key, kind(value))
            except (ValueError, ConfigError):
                problems.append(f"analysis: bad value for {key}: {value!r}")

    problems.extend(cfg.validate())
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def _load_inputs(cfg: PipelineConfig):
    if cfg.session is not None:
        try:
            rec = load_session_csv(cfg.session)
        except FileNotFoundError:
            raise DataError(f"session file not found: {cfg.session}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    else:
        try:
            with open(cfg.raw, "rb") as fh:
                blob = fh.read()
        except FileNotFoundError:
            raise DataError(f"raw stream not found: {cfg.raw}") from None
        frames, _ = parse_stream(blob, rate=cfg.rate)
        rec = frames_to_recording(frames, cfg.rate)
    try:
        events = load_events_csv(cfg.events)
    except FileNotFoundError:
        raise DataError(f"events file not found: {cfg.events}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    montage_path = cfg.montage if cfg.montage else builtin_montage_path()
    try:
        monmap = load_montage_csv(montage_path)
    except FileNotFoundError:
        raise DataError(f"montage file not found: {montage_path}") from None
    violations = validate_montage(monmap)
    if violations:
        raise DataError(f"montage violates constraints: {', '.join(violations)}")
    return rec, events, monmap


def _check_rates(cfg: PipelineConfig, rate: float):
    nyq = rate / 2.0
    problems = []
    if cfg.stages.highpass and cfg.hp_cutoff_hz >= nyq:
        problems.append(f"hp_cutoff_hz {cfg.hp_cutoff_hz} >= Nyquist {nyq}")
    if cfg.stages.lowpass and cfg.lp_cutoff_hz >= nyq:
        problems.append(f"lp_cutoff_hz {cfg.lp_cutoff_hz} >= Nyquist {nyq}")
    if cfg.stages.line and cfg.line_freq_hz * cfg.line_harmonics >= nyq:
        problems.append(
            f"line_freq_hz {cfg.line_freq_hz} x {cfg.line_harmonics} harmonics >= Nyquist {nyq}"
        )
    for band in cfg.bands:
        if band.hi_hz > nyq:
            problems.append(f"band {band.name} upper edge {band.hi_hz} beyond Nyquist {nyq}")
    if problems:
        raise ConfigError("; ".join(problems))


def clean_segment(rec: Recording, cfg: PipelineConfig, monmap) -> Recording:
    """Apply the linear cleaning chain to one segment."""
    out = rec
    if cfg.stages.baseline:
        out = baseline_correct(out)
    if cfg.stages.rereference:
        rows_needed = max(monmap.channel(cfg.reref_left), monmap.channel(cfg.reref_right))
        if rec.n_channels < rows_needed:
            raise DataError(
                f"re-referencing needs channel {rows_needed} but the recording "
                f"has {rec.n_channels}; disable the rereference stage for reduced montages"
            )
        out = rereference_linked_mastoid(out, monmap, cfg.reref_left, cfg.reref_right)
    if cfg.stages.line:
        out = remove_line_noise(
            out,
            f0=cfg.line_freq_hz,
            win_s=cfg.line_win_s,
            step_s=cfg.line_step_s,
            harmonics=cfg.line_harmonics,
        )
    if cfg.stages.highpass:
        fir = design_fir(FirSpec("highpass", cfg.hp_cutoff_hz, cfg.hp_order, cfg.fir_window), out.rate)
        out = apply_zero_phase(out, fir)
    if cfg.stages.lowpass:
        fir = design_fir(FirSpec("lowpass", cfg.lp_cutoff_hz, cfg.lp_order, cfg.fir_window), out.rate)
        out = apply_zero_phase(out, fir)
    return out


@dataclass
class SegmentResult:
    condition: str
    cleaned: Recording
    flagged: list
    psd_db_bands: dict
    qc: dict
    ica_selected: int | None
    ica_score: float | None
    beats: BeatSeries | None
    rr_rows: list  # (beat_time_s, rr_ms, flag)


def process_segment(seg_rec: Recording, condition: str, cfg: PipelineConfig, monmap, seg_index: int):
    cleaned = clean_segment(seg_rec, cfg, monmap)

    flagged = []
    asr_out = cleaned
    if cfg.stages.asr:
        asr_cfg = AsrConfig(
            burst_k=cfg.asr_burst_k,
            window_criterion=cfg.asr_window_criterion,
            calib_win_s=cfg.asr_calib_win_s,
            proc_win_s=cfg.asr_proc_win_s,
        )
        try:
            model = asr_calibrate(cleaned, asr_cfg)
        except CalibrationError as exc:
            raise DataError(f"segment {seg_index} ({condition}): {exc}") from None
        asr_out, flagged = asr_process(cleaned, model, asr_cfg)

    selected = None
    score = None
    beats = None
    rr_rows: list = []
    if cfg.stages.ica:
        ica_source_rec = asr_out if cfg.ica_input == "asr" else cleaned
        ica = ica_decompose(
            ica_source_rec,
            n_components=cfg.ica_components,
            seed=cfg.ica_seed + seg_index,
            max_iter=cfg.ica_max_iter,
        )
        if cfg.detect_ecg:
            selected = select_ecg_ic(ica, cleaned.rate)
            if selected is not None:
                src = ica.sources[selected]
                score = ecg_component_score(src, cleaned.rate)
                fwd = pan_tompkins(src, cleaned.rate)
                rev = pan_tompkins(-src, cleaned.rate)
                beats = fwd if len(fwd) >= len(rev) else rev
                if len(beats) >= 2:
                    rr = rr_periods(beats)
                    mask = rr_outlier_filter(rr).kept_mask
                    for i in range(len(rr)):
                        rr_rows.append(
                            (
                                float(rr.anchored_at_s[i]),
                                float(rr.intervals_ms[i]),
                                "ok" if mask[i] else "outlier",
                            )
                        )

    exclude = [(f.start_s, f.end_s) for f in flagged]
    psd_lin = welch_psd_recording(
        asr_out, seg=cfg.psd_segment, overlap=cfg.psd_overlap, exclude_spans=exclude
    )
    qc = qc_report(asr_out, psd_lin, line_freq_hz=cfg.line_freq_hz).to_dict()
    return SegmentResult(
        condition=condition,
        cleaned=asr_out,
        flagged=flagged,
        psd_db_bands={},  # bands are computed per condition after averaging
        qc=qc,
        ica_selected=selected,
        ica_score=score,
        beats=beats,
        rr_rows=rr_rows,
    ), psd_lin


def _json_dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the full chain and write all reports into cfg.out_dir."""
    t_start = time.time()
    rec, events, monmap = _load_inputs(cfg)
    _check_rates(cfg, rec.rate)
    if rec.n_channels == len(monmap.channel_of):
        rec = relabel_by_montage(rec, monmap)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    segments = cut_segments(rec, events)
    if not segments:
        raise DataError("no events to process")
    for seg in segments:
        if seg.report.actual_samples == 0:
            raise DataError(f"event {seg.condition} yields an empty segment")

    seg_results: list[SegmentResult] = []
    psds: list = []
    integrity = []
    for i, seg in enumerate(segments):
        res, psd_lin = process_segment(seg.recording, seg.condition, cfg, monmap, i)
        seg_results.append(res)
        psds.append(psd_lin)
        integrity.append({"condition": seg.condition, **seg.report.to_dict()})

    # band powers per condition: average linear PSDs across a condition's
    # segments (or pool samples before the PSD), then dB and median bands
    labels = list(rec.labels)
    conditions: list[str] = []
    for s in segments:
        if s.condition not in conditions:
            conditions.append(s.condition)
    band_rows: list[BandPowerRow] = []
    for cond in conditions:
        idx = [i for i, s in enumerate(segments) if s.condition == cond]
        if cfg.psd_average == "pooled":
            joined = np.concatenate([seg_results[i].cleaned.data for i in idx], axis=1)
            pooled = Recording(rate=rec.rate, labels=list(rec.labels), data=joined)
            exclude: list = []
            offset = 0.0
            for i in idx:
                for f in seg_results[i].flagged:
                    exclude.append((offset + f.start_s, offset + f.end_s))
                offset += seg_results[i].cleaned.duration_s
            psd = welch_psd_recording(
                pooled, seg=cfg.psd_segment, overlap=cfg.psd_overlap, exclude_spans=exclude
            )
        else:
            psd = psds[idx[0]]
            if len(idx) > 1:
                power = np.mean([psds[i].power for i in idx], axis=0)
                psd = type(psd)(
                    freqs=psd.freqs,
                    power=power,
                    rate=psd.rate,
                    segment_length=psd.segment_length,
                    window_count=sum(psds[i].window_count for i in idx),
                    labels=psd.labels,
                )
        bands = band_power(to_db(psd), cfg.bands)
        for band_name, values in bands.items():
            for ch in range(rec.n_channels):
                band_rows.append(
                    BandPowerRow(
                        participant=cfg.participant,
                        condition=cond,
                        channel=labels[ch],
                        band=band_name,
                        power_db=float(values[ch]),
                    )
                )
    write_band_table(band_rows, out_dir / "bands.csv")

    qc_payload = {
        "participant": cfg.participant,
        "rate": rec.rate,
        "segments": [
            {
                "condition": r.condition,
                "qc": r.qc,
                "asr_flagged_windows": [
                    {
                        "index": f.index,
                        "start_s": f.start_s,
                        "end_s": f.end_s,
                        "bad_fraction": f.bad_fraction,
                    }
                    for f in r.flagged
                ],
                "ecg_component": r.ica_selected,
                "ecg_score": r.ica_score,
            }
            for r in seg_results
        ],
    }
    _json_dump(qc_payload, out_dir / "qc.json")
    _json_dump({"segments": integrity}, out_dir / "integrity.json")

    with open(out_dir / "rr.csv", "w", newline="") as fh:
        fh.write("beat_time_s,rr_ms,flag\n")
        for i, seg in enumerate(segments):
            offset = seg.report.first_t
            for t_beat, rr_ms, flag in seg_results[i].rr_rows:
                fh.write(f"{offset + t_beat:.6f},{rr_ms:.3f},{flag}\n")

    ba_payload: dict
    if cfg.reference_rr:
        ref_beats = load_rr_beats(cfg.reference_rr)
        alt_times = []
        for i, seg in enumerate(segments):
            res = seg_results[i]
            if res.beats is not None:
                alt_times.extend((seg.report.first_t + res.beats.beat_times).tolist())
        if len(alt_times) >= 3:
            alt_beats = BeatSeries(beat_times=np.array(alt_times), rate=rec.rate)
            match = match_beats(ref_beats, alt_beats, cfg.match_tolerance_s)
            rr_ref, rr_alt = paired_rr(match, ref_beats, alt_beats)
            if len(rr_ref) >= 2:
                ba = bland_altman(rr_ref, rr_alt)
                ba_payload = {
                    "status": "ok",
                    "matched_pairs": len(match.pairs),
                    "unmatched_ref": match.unmatched_ref,
                    "unmatched_alt": match.unmatched_alt,
                    "rr_pairs": len(rr_ref),
                    **ba.to_dict(),
                }
            else:
                ba_payload = {"status": "not_computed", "reason": "too few matched R-R pairs"}
        else:
            ba_payload = {"status": "not_computed", "reason": "no ECG component detected"}
    else:
        ba_payload = {"status": "not_computed", "reason": "no reference R-R series configured"}
    _json_dump(ba_payload, out_dir / "bland_altman.json")

    regression_payload = _run_regressions(cfg, band_rows)
    _json_dump(regression_payload, out_dir / "regression.json")

    _json_dump(
        {
            "version": __version__,
            "elapsed_s": round(time.time() - t_start, 3),
            "finished_unix": time.time(),
            "n_segments": len(segments),
        },
        out_dir / "run_meta.json",
    )
    return {
        "out_dir": str(out_dir),
        "n_segments": len(segments),
        "conditions": conditions,
        "band_rows": len(band_rows),
    }


def load_rr_beats(path) -> BeatSeries:
    """Rebuild a beat series from an rr.csv file (anchors plus final beat)."""
    times: list[float] = []
    rr_last = None
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"R-R file not found: {path}") from None
    with fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["beat_time_s", "rr_ms"]:
            raise DataError(f"{path}: expected header beat_time_s,rr_ms[,flag]")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            times.append(float(parts[0]))
            rr_last = float(parts[1])
    if not times:
        raise DataError(f"{path}: no intervals")
    beats = times + [times[-1] + rr_last / 1000.0]
    # the source rate is not recorded in rr.csv and nothing downstream needs it
    return BeatSeries(beat_times=np.array(beats), rate=0.0)


def _run_regressions(cfg: PipelineConfig, band_rows) -> dict:
    if not cfg.surveys:
        return {"status": "not_computed", "reason": "no surveys configured"}
    from .analysis import session_regressions  # local import to avoid a cycle

    try:
        return session_regressions(cfg, band_rows)
    except FileNotFoundError:
        raise DataError(f"surveys file not found: {cfg.surveys}") from None
