"""Command line front end.

Exit codes: 0 on success, 2 for configuration problems (bad flags,
malformed or inconsistent config files), 3 for data problems (missing
or unreadable inputs). Diagnostics go to stderr as a single JSON object
so callers can parse failures; result summaries go to stdout.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cardiac import pan_tompkins, rr_outlier_filter, rr_periods, match_beats, paired_rr
from .ingest import (
    cut_segments,
    frames_to_recording,
    load_events_csv,
    load_session_csv,
    parse_stream,
    save_events_csv,
    save_session_csv,
    Event,
)
from .pipeline import ConfigError, DataError, PipelineConfig, load_config, load_rr_beats, run_pipeline
from .spectral import (
    BandPowerRow,
    DEFAULT_BANDS,
    band_power,
    parse_band_spec,
    to_db,
    welch_psd_recording,
    write_band_table,
    read_band_table,
)
from .stats import bland_altman
from .synth import BergerSpec, EcgSynthSpec, EegSynthSpec, berger_session, gen_ecg, gen_eeg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(payload: dict) -> None:
    print(json.dumps(_jsonable(payload), sort_keys=True))


def _pair(text: str, what: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"{what}: expected value:value, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


# --- synth spec parsing ------------------------------------------------------


def _read_synth_spec(path, seed_override: int | None):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"spec syntax: {exc}") from None
    if not parser.has_section("synth"):
        raise ConfigError("spec needs a [synth] section with kind and seed")
    kind = parser.get("synth", "kind", fallback=None)
    if kind not in ("eeg", "ecg", "berger"):
        raise ConfigError(f"[synth] kind must be eeg, ecg or berger, got {kind!r}")
    seed_text = parser.get("synth", "seed", fallback=None)
    if seed_override is not None:
        seed = seed_override
    elif seed_text is None:
        raise ConfigError("[synth] seed is required; randomized output must be reproducible")
    else:
        try:
            seed = int(seed_text)
        except ValueError:
            raise ConfigError(f"[synth] seed must be an integer, got {seed_text!r}") from None

    def get(section, key, cast, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] bad value for {key}: {raw!r}") from None

    try:
        if kind == "eeg":
            comps = ()
            if parser.has_option("eeg", "components"):
                comps = tuple(
                    _pair(p.strip(), "[eeg] components")
                    for p in parser.get("eeg", "components").split(",")
                    if p.strip()
                )
            line = None
            if parser.has_option("eeg", "line"):
                line = _pair(parser.get("eeg", "line"), "[eeg] line")
            spec = EegSynthSpec(
                rate=get("eeg", "rate", float, 125.0),
                duration_s=get("eeg", "duration_s", float, 60.0),
                seed=seed,
                n_channels=get("eeg", "n_channels", int, 16),
                pink_noise_rms=get("eeg", "pink_noise_rms", float, 3.0),
                band_components=comps,
                line_noise=line,
            )
        elif kind == "ecg":
            spec = EcgSynthSpec(
                rate=get("ecg", "rate", float, 250.0),
                duration_s=get("ecg", "duration_s", float, 60.0),
                seed=seed,
                bpm=get("ecg", "bpm", float, 60.0),
                r_amplitude_uv=get("ecg", "r_amplitude_uv", float, 600.0),
                rr_jitter_ms=get("ecg", "rr_jitter_ms", float, 20.0),
                r_width_ms=get("ecg", "r_width_ms", float, 20.0),
            )
        else:
            band = (8.0, 12.0)
            if parser.has_option("berger", "alpha_band"):
                band = _pair(parser.get("berger", "alpha_band"), "[berger] alpha_band")
            line = None
            if parser.has_option("berger", "line"):
                line = _pair(parser.get("berger", "line"), "[berger] line")
            spec = BergerSpec(
                rate=get("berger", "rate", float, 125.0),
                segment_s=get("berger", "segment_s", float, 60.0),
                seed=seed,
                n_channels=get("berger", "n_channels", int, 16),
                pink_noise_rms=get("berger", "pink_noise_rms", float, 3.0),
                alpha_open_uv=get("berger", "alpha_open_uv", float, 1.5),
                alpha_ratio=get("berger", "alpha_ratio", float, 3.0),
                alpha_band_hz=band,
                psd_segment=get("berger", "psd_segment", int, 256),
                line_noise=line,
            )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return kind, spec


# --- subcommands -------------------------------------------------------------


def cmd_parse(args) -> int:
    try:
        with open(args.raw, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise DataError(f"raw stream not found: {args.raw}") from None
    frames, report = parse_stream(blob, rate=args.rate)
    # zero decoded frames is a valid outcome (empty or unrecoverable input):
    # the session CSV is then header-only and the integrity report says why
    rec = frames_to_recording(frames, args.rate)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_session_csv(rec, out / "session.csv")
    _dump_json(report.to_dict(), out / "integrity.json")
    _emit(
        {
            "command": "parse",
            "frames": rec.n_samples,
            "dropped_packets": report.dropped_packets,
            "resyncs": report.resyncs,
            "out_dir": str(out),
        }
    )
    return 0


def cmd_synth(args, seed_override: int | None) -> int:
    kind, spec = _read_synth_spec(args.spec, seed_override)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "ecg":
        rec, beats = gen_ecg(spec)
        rr = rr_periods(beats) if len(beats) >= 2 else None
        with open(out / "rr_truth.csv", "w", newline="") as fh:
            fh.write("beat_time_s,rr_ms,flag\n")
            if rr is not None:
                for i in range(len(rr)):
                    fh.write(f"{rr.anchored_at_s[i]:.6f},{rr.intervals_ms[i]:.3f},ok\n")
        truth = {"kind": kind, "beat_times_s": beats.beat_times, "bpm": spec.bpm}
    else:
        rec = berger_session(spec) if kind == "berger" else gen_eeg(spec)
        truth = {"kind": kind, **rec.meta.get("truth", {})}
    save_session_csv(rec, out / "session.csv")
    events = rec.events or [Event("all", 0.0, rec.duration_s)]
    save_events_csv(events, out / "events.csv")
    _dump_json(truth, out / "truth.json")
    _emit(
        {
            "command": "synth",
            "kind": kind,
            "rate": rec.rate,
            "channels": rec.n_channels,
            "samples": rec.n_samples,
            "out_dir": str(out),
        }
    )
    return 0


def cmd_run(args, seed_override: int | None, line_override: float | None) -> int:
    if args.config is None:
        raise ConfigError("run needs a config: pass --config either globally or after 'run'")
    cfg = load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if seed_override is not None:
        cfg.ica_seed = seed_override
    if line_override is not None:
        cfg.line_freq_hz = line_override
    summary = run_pipeline(cfg)
    _emit({"command": "run", **summary})
    return 0


def cmd_bands(args) -> int:
    try:
        rec = load_session_csv(args.session)
    except FileNotFoundError:
        raise DataError(f"session file not found: {args.session}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    bands = parse_band_spec(args.bands) if args.bands else DEFAULT_BANDS
    if args.events:
        try:
            events = load_events_csv(args.events)
        except FileNotFoundError:
            raise DataError(f"events file not found: {args.events}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    else:
        events = [Event("all", 0.0, rec.duration_s)]
    rows: list[BandPowerRow] = []
    for seg in cut_segments(rec, events):
        if seg.recording.n_samples <= args.segment:
            raise DataError(
                f"segment {seg.condition}: {seg.recording.n_samples} samples is too short "
                f"for {args.segment}-sample windows"
            )
        try:
            psd = to_db(welch_psd_recording(seg.recording, seg=args.segment, overlap=args.overlap))
            per_band = band_power(psd, bands)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name, values in per_band.items():
            for ch in range(seg.recording.n_channels):
                rows.append(
                    BandPowerRow(
                        participant=args.participant,
                        condition=seg.condition,
                        channel=rec.labels[ch],
                        band=name,
                        power_db=float(values[ch]),
                    )
                )
    write_band_table(rows, args.out)
    _emit({"command": "bands", "rows": len(rows), "out": args.out})
    return 0


def cmd_ecg(args) -> int:
    try:
        rec = load_session_csv(args.session)
    except FileNotFoundError:
        raise DataError(f"session file not found: {args.session}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.channel in rec.labels:
        row = rec.labels.index(args.channel)
    else:
        try:
            row = int(args.channel) - 1
        except ValueError:
            raise ConfigError(f"channel must be a label or 1-based index, got {args.channel!r}") from None
        if not 0 <= row < rec.n_channels:
            raise ConfigError(f"channel index {args.channel} outside 1..{rec.n_channels}")
    x = rec.data[row]
    try:
        fwd = pan_tompkins(x, rec.rate)
        rev = pan_tompkins(-x, rec.rate)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    beats = fwd if len(fwd) >= len(rev) else rev
    if len(beats) < 2:
        raise DataError("fewer than 2 beats detected")
    rr = rr_periods(beats)
    mask = rr_outlier_filter(rr).kept_mask
    with open(args.out, "w", newline="") as fh:
        fh.write("beat_time_s,rr_ms,flag\n")
        for i in range(len(rr)):
            flag = "ok" if mask[i] else "outlier"
            fh.write(f"{rr.anchored_at_s[i]:.6f},{rr.intervals_ms[i]:.3f},{flag}\n")
    _emit(
        {
            "command": "ecg",
            "beats": len(beats),
            "intervals": len(rr),
            "outliers": int((~mask).sum()),
            "out": args.out,
        }
    )
    return 0


def cmd_agree(args) -> int:
    ref = load_rr_beats(args.ref)
    alt = load_rr_beats(args.alt)
    match = match_beats(ref, alt, args.tolerance)
    rr_ref, rr_alt = paired_rr(match, ref, alt)
    if len(rr_ref) < 2:
        raise DataError(
            f"only {len(rr_ref)} paired R-R intervals at tolerance {args.tolerance}s"
        )
    report = bland_altman(rr_ref, rr_alt)
    payload = {
        "matched_beats": len(match.pairs),
        "unmatched_ref": match.unmatched_ref,
        "unmatched_alt": match.unmatched_alt,
        "rr_pairs": len(rr_ref),
        "tolerance_s": args.tolerance,
        **report.to_dict(),
    }
    if args.out:
        _dump_json(payload, args.out)
    _emit({"command": "agree", **payload})
    return 0


def _inline_scores(path) -> dict:
    """Scores carried as tlx_total/flow_mean columns inside a band table."""
    import csv

    found: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        if "tlx_total" not in names or "flow_mean" not in names:
            return found
        for row in reader:
            key = (row["participant"], row["condition"])
            found.setdefault(key, []).append(
                (float(row["tlx_total"]), float(row["flow_mean"]))
            )
    return {
        key: (
            float(np.mean([t for t, _ in vals])),
            float(np.mean([f for _, f in vals])),
        )
        for key, vals in found.items()
    }


def cmd_analyze(args) -> int:
    from .analysis import analyze_tables, read_scores

    rows: list[BandPowerRow] = []
    inline: dict = {}
    for path in args.bands:
        try:
            rows.extend(read_band_table(path))
            inline.update(_inline_scores(path))
        except FileNotFoundError:
            raise DataError(f"band table not found: {path}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    if not rows:
        raise DataError("band tables contain no rows")
    scores = inline or None
    if args.scores:
        try:
            scores = read_scores(args.scores)
        except FileNotFoundError:
            raise DataError(f"scores file not found: {args.scores}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    exclude = args.exclude_condition if args.exclude_condition is not None else ["eyes_open", "eyes_closed"]
    payload = analyze_tables(rows, scores, exclude=tuple(exclude))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(payload, out / "analysis.json")
    _emit(
        {
            "command": "analyze",
            "rows": len(rows),
            "bands": payload["bands"],
            "out_dir": str(out),
        }
    )
    return 0


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earpipe",
        description="Around-the-ear EEG/ECG processing: parse, clean, "
        "score bands, recover heartbeats, compare and analyze.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="pipeline INI config (used by run)")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument(
        "--line-freq",
        type=float,
        choices=(50.0, 60.0),
        default=None,
        help="override the mains frequency from the config",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="decode a raw amplifier byte stream to a session CSV")
    p.add_argument("--raw", required=True, help="raw packet stream file")
    p.add_argument("--rate", type=float, default=125.0, help="nominal frame rate in Hz")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth", help="generate synthetic sessions from a spec file")
    p.add_argument("--spec", required=True, help="INI spec with [synth] kind/seed")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("run", help="run the full cleaning and scoring chain")
    p.add_argument("--config", default=argparse.SUPPRESS, help="pipeline INI config")
    p.add_argument("--out-dir", default=None, help="override [output] dir")

    p = sub.add_parser("bands", help="band powers from a session CSV without cleaning")
    p.add_argument("--session", required=True)
    p.add_argument("--events", default=None)
    p.add_argument("--bands", default=None, help="name:lo:hi[,name:lo:hi...]")
    p.add_argument("--segment", type=int, default=256)
    p.add_argument("--overlap", type=int, default=64)
    p.add_argument("--participant", default="P01")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ecg", help="detect beats on one channel and write R-R intervals")
    p.add_argument("--session", required=True)
    p.add_argument("--channel", required=True, help="channel label or 1-based index")
    p.add_argument("--out", required=True)

    p = sub.add_parser("agree", help="compare two R-R series (Bland-Altman)")
    p.add_argument("--ref", required=True, help="reference rr.csv")
    p.add_argument("--alt", required=True, help="alternative rr.csv")
    p.add_argument("--tolerance", type=float, default=0.15, help="beat match tolerance in s")
    p.add_argument("--out", default=None, help="also write the report to this JSON file")

    p = sub.add_parser("analyze", help="group regressions and contrasts over band tables")
    p.add_argument("--bands", required=True, nargs="+", help="one or more band table CSVs")
    p.add_argument("--scores", default=None, help="questionnaire scores CSV")
    p.add_argument(
        "--exclude-condition",
        action="append",
        default=None,
        help="condition left out of the score regressions, repeatable "
        "(default: eyes_open and eyes_closed; contrasts always keep all)",
    )
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "parse":
            return cmd_parse(args)
        if args.command == "synth":
            return cmd_synth(args, args.seed)
        if args.command == "run":
            return cmd_run(args, args.seed, args.line_freq)
        if args.command == "bands":
            return cmd_bands(args)
        if args.command == "ecg":
            return cmd_ecg(args)
        if args.command == "agree":
            return cmd_agree(args)
        if args.command == "analyze":
            return cmd_analyze(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except DataError as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
