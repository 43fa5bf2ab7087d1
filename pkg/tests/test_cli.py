import json

import numpy as np
import pytest

from earpipe.cli import main
from earpipe.ingest import encode_stream, load_session_csv
from earpipe.spectral import read_band_table


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def write_spec(path, body):
    path.write_text(body)
    return str(path)


# ----------------------------------------------------------------- parse


def test_parse_round_trip(tmp_path, capsys):
    counts = np.arange(32 * 16).reshape(32, 16) - 256
    raw = tmp_path / "stream.bin"
    raw.write_bytes(encode_stream(counts))
    code, out, _ = run_cli(capsys, "parse", "--raw", str(raw), "--out-dir", str(tmp_path / "o"))
    assert code == 0
    summary = last_json(out)
    assert summary["frames"] == 32
    assert summary["resyncs"] == 0
    rec = load_session_csv(tmp_path / "o" / "session.csv")
    assert rec.data.shape == (16, 32)
    report = json.loads((tmp_path / "o" / "integrity.json").read_text())
    assert report["dropped_packets"] == 0


def test_parse_empty_file(tmp_path, capsys):
    raw = tmp_path / "empty.bin"
    raw.write_bytes(b"")
    code, out, _ = run_cli(capsys, "parse", "--raw", str(raw), "--out-dir", str(tmp_path / "o"))
    assert code == 0
    assert last_json(out)["frames"] == 0
    lines = (tmp_path / "o" / "session.csv").read_text().splitlines()
    assert len(lines) == 2  # rate comment + column header, no data rows
    assert lines[0].startswith("#rate=") and lines[1].startswith("t_s,")


def test_parse_missing_file(tmp_path, capsys):
    code, _, err = run_cli(capsys, "parse", "--raw", str(tmp_path / "nope.bin"),
                           "--out-dir", str(tmp_path / "o"))
    assert code == 3
    assert json.loads(err)["error"] == "data"


# ----------------------------------------------------------------- synth


def test_synth_requires_seed(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.ini", "[synth]\nkind = eeg\n\n[eeg]\nduration_s = 2\n")
    code, _, err = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "o"))
    assert code == 2
    diag = json.loads(err)
    assert diag["error"] == "config" and "seed" in diag["message"]
    # the global --seed flag satisfies the requirement
    code, _, _ = run_cli(capsys, "--seed", "5", "synth", "--spec", spec,
                         "--out-dir", str(tmp_path / "o"))
    assert code == 0


def test_synth_unknown_kind(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.ini", "[synth]\nkind = mri\nseed = 1\n")
    code, _, err = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "o"))
    assert code == 2
    assert "kind" in json.loads(err)["message"]


def test_synth_berger_deterministic(tmp_path, capsys):
    spec = write_spec(
        tmp_path / "b.ini",
        "[synth]\nkind = berger\nseed = 3\n\n[berger]\nsegment_s = 5\nn_channels = 2\n",
    )
    code, _, _ = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "a"))
    assert code == 0
    code, _, _ = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "b"))
    assert code == 0
    assert (tmp_path / "a" / "session.csv").read_bytes() == (tmp_path / "b" / "session.csv").read_bytes()
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    assert truth["alpha_ratio"] == 3.0
    events = (tmp_path / "a" / "events.csv").read_text()
    assert "eyes_open" in events and "eyes_closed" in events


def test_synth_ecg_truth_files(tmp_path, capsys):
    spec = write_spec(
        tmp_path / "e.ini",
        "[synth]\nkind = ecg\nseed = 7\n\n[ecg]\nduration_s = 20\nbpm = 72\n",
    )
    code, out, _ = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "o"))
    assert code == 0
    assert last_json(out)["channels"] == 1
    truth = json.loads((tmp_path / "o" / "truth.json").read_text())
    assert truth["bpm"] == 72.0
    assert len(truth["beat_times_s"]) >= 20
    rr_lines = (tmp_path / "o" / "rr_truth.csv").read_text().splitlines()
    assert rr_lines[0] == "beat_time_s,rr_ms,flag"
    assert len(rr_lines) == len(truth["beat_times_s"])  # header + (n-1) intervals


# ------------------------------------------------------------------- run


def synth_berger(tmp_path, capsys, segment_s=10, out="data"):
    spec = write_spec(
        tmp_path / "fixture.ini",
        f"[synth]\nkind = berger\nseed = 11\n\n[berger]\nsegment_s = {segment_s}\n",
    )
    code, _, _ = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / out))
    assert code == 0
    return tmp_path / out


def test_run_needs_config(capsys):
    code, _, err = run_cli(capsys, "run")
    assert code == 2
    assert json.loads(err)["error"] == "config"


def test_run_end_to_end(tmp_path, capsys):
    data = synth_berger(tmp_path, capsys)
    cfg = write_spec(
        tmp_path / "run.ini",
        f"""
[input]
session = {data / 'session.csv'}
events = {data / 'events.csv'}

[output]
dir = {tmp_path / 'out'}

[pipeline]
ica_seed = 2
""",
    )
    # config accepted both as a global flag and as a subcommand flag
    code, out, _ = run_cli(capsys, "--config", cfg, "run")
    assert code == 0
    assert last_json(out)["n_segments"] == 2
    code, _, _ = run_cli(capsys, "run", "--config", cfg, "--out-dir", str(tmp_path / "out2"))
    assert code == 0
    rows = read_band_table(tmp_path / "out" / "bands.csv")
    alpha = {
        cond: np.median([r.power_db for r in rows if r.band == "alpha" and r.condition == cond])
        for cond in ("eyes_open", "eyes_closed")
    }
    assert alpha["eyes_closed"] > alpha["eyes_open"]


def test_run_bad_config_exits_2(tmp_path, capsys):
    cfg = write_spec(tmp_path / "bad.ini", "[input]\nsession = x.csv\n")
    code, _, err = run_cli(capsys, "run", "--config", cfg)
    assert code == 2
    assert json.loads(err)["error"] == "config"


def test_line_freq_choices():
    with pytest.raises(SystemExit) as exc:
        main(["--line-freq", "55", "run"])
    assert exc.value.code == 2


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


# ----------------------------------------------------------------- bands


def test_bands_subcommand(tmp_path, capsys):
    spec = write_spec(
        tmp_path / "s.ini",
        "[synth]\nkind = eeg\nseed = 1\n\n"
        "[eeg]\nduration_s = 10\nn_channels = 2\ncomponents = 10:4\n",
    )
    run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "d"))
    out_csv = tmp_path / "bands.csv"
    code, out, _ = run_cli(
        capsys, "bands",
        "--session", str(tmp_path / "d" / "session.csv"),
        "--bands", "alpha:8:12,beta:13:30",
        "--out", str(out_csv),
    )
    assert code == 0
    rows = read_band_table(out_csv)
    assert len(rows) == 2 * 2  # 1 condition x 2 channels x 2 bands
    assert {r.condition for r in rows} == {"all"}
    by_band = {b: np.mean([r.power_db for r in rows if r.band == b]) for b in ("alpha", "beta")}
    assert by_band["alpha"] > by_band["beta"]


def test_bands_segment_too_long(tmp_path, capsys):
    spec = write_spec(
        tmp_path / "s.ini",
        "[synth]\nkind = eeg\nseed = 1\n\n[eeg]\nduration_s = 1\nn_channels = 1\n",
    )
    run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / "d"))
    code, _, err = run_cli(
        capsys, "bands",
        "--session", str(tmp_path / "d" / "session.csv"),
        "--segment", "256",
        "--out", str(tmp_path / "bands.csv"),
    )
    assert code == 3
    assert "too short" in json.loads(err)["message"]


# ------------------------------------------------------------- ecg, agree


def synth_ecg(tmp_path, capsys, out="ecgdata"):
    spec = write_spec(
        tmp_path / "ecg.ini",
        "[synth]\nkind = ecg\nseed = 4\n\n[ecg]\nduration_s = 30\nbpm = 75\n",
    )
    code, _, _ = run_cli(capsys, "synth", "--spec", spec, "--out-dir", str(tmp_path / out))
    assert code == 0
    return tmp_path / out


def test_ecg_then_agree(tmp_path, capsys):
    data = synth_ecg(tmp_path, capsys)
    rr_out = tmp_path / "rr.csv"
    code, out, _ = run_cli(
        capsys, "ecg",
        "--session", str(data / "session.csv"),
        "--channel", "ecg",
        "--out", str(rr_out),
    )
    assert code == 0
    assert last_json(out)["beats"] >= 30

    code, out, _ = run_cli(
        capsys, "agree",
        "--ref", str(data / "rr_truth.csv"),
        "--alt", str(rr_out),
        "--out", str(tmp_path / "agree.json"),
    )
    assert code == 0
    report = last_json(out)
    assert report["rr_pairs"] >= 20
    assert abs(report["mean_diff_ms"]) < 5.0
    saved = json.loads((tmp_path / "agree.json").read_text())
    assert saved["mean_diff_ms"] == report["mean_diff_ms"]


def test_ecg_channel_by_index_matches_label(tmp_path, capsys):
    data = synth_ecg(tmp_path, capsys)
    run_cli(capsys, "ecg", "--session", str(data / "session.csv"),
            "--channel", "ecg", "--out", str(tmp_path / "by_label.csv"))
    run_cli(capsys, "ecg", "--session", str(data / "session.csv"),
            "--channel", "1", "--out", str(tmp_path / "by_index.csv"))
    assert (tmp_path / "by_label.csv").read_bytes() == (tmp_path / "by_index.csv").read_bytes()


def test_ecg_bad_channel(tmp_path, capsys):
    data = synth_ecg(tmp_path, capsys)
    code, _, err = run_cli(capsys, "ecg", "--session", str(data / "session.csv"),
                           "--channel", "bogus", "--out", str(tmp_path / "x.csv"))
    assert code == 2
    assert json.loads(err)["error"] == "config"


def test_agree_missing_file(tmp_path, capsys):
    data = synth_ecg(tmp_path, capsys)
    code, _, err = run_cli(capsys, "agree", "--ref", str(data / "rr_truth.csv"),
                           "--alt", str(tmp_path / "nope.csv"))
    assert code == 3
    assert json.loads(err)["error"] == "data"


def test_agree_disjoint_series(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("beat_time_s,rr_ms,flag\n1.0,1000.0,ok\n2.0,1000.0,ok\n")
    b.write_text("beat_time_s,rr_ms,flag\n100.0,1000.0,ok\n101.0,1000.0,ok\n")
    code, _, err = run_cli(capsys, "agree", "--ref", str(a), "--alt", str(b))
    assert code == 3
    assert "paired" in json.loads(err)["message"]


# --------------------------------------------------------------- analyze


def analysis_table(tmp_path, inline_scores=True):
    lines = ["participant,condition,channel,band,power_db" +
             (",tlx_total,flow_mean" if inline_scores else "")]
    rng = np.random.default_rng(0)
    tlx = {"easy": 40.0, "medium": 70.0, "hard": 100.0}
    flow = {"easy": 3.0, "medium": 5.5, "hard": 3.5}
    for p in ("P1", "P2", "P3"):
        for cond in ("easy", "medium", "hard"):
            for ch in ("L1", "R1"):
                power = 10.0 + 2.0 * tlx[cond] / 40.0 + rng.normal(0, 0.2)
                row = f"{p},{cond},{ch},alpha,{power:.4f}"
                if inline_scores:
                    row += f",{tlx[cond]},{flow[cond]}"
                lines.append(row)
    path = tmp_path / "table.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_analyze_inline_scores(tmp_path, capsys):
    table = analysis_table(tmp_path)
    code, out, _ = run_cli(capsys, "analyze", "--bands", str(table),
                           "--out-dir", str(tmp_path / "o"))
    assert code == 0
    payload = json.loads((tmp_path / "o" / "analysis.json").read_text())
    assert payload["bands"] == ["alpha"]
    workload = payload["workload_linear"]["alpha"]
    assert workload["status"] == "ok"
    slope = next(c for c in workload["coefficients"] if c["name"] == "slope")
    assert slope["estimate"] > 0
    assert payload["contrasts"]["alpha"]["status"] == "ok"
    assert len(payload["contrasts"]["alpha"]["pairs"]) == 3


def test_analyze_without_scores(tmp_path, capsys):
    table = analysis_table(tmp_path, inline_scores=False)
    code, _, _ = run_cli(capsys, "analyze", "--bands", str(table),
                         "--out-dir", str(tmp_path / "o"))
    assert code == 0
    payload = json.loads((tmp_path / "o" / "analysis.json").read_text())
    assert payload["workload_linear"]["status"] == "not_computed"
    assert payload["contrasts"]["alpha"]["status"] == "ok"


def test_analyze_exclude_condition(tmp_path, capsys):
    table = analysis_table(tmp_path)
    code, _, _ = run_cli(capsys, "analyze", "--bands", str(table),
                         "--exclude-condition", "hard",
                         "--out-dir", str(tmp_path / "o"))
    assert code == 0
    payload = json.loads((tmp_path / "o" / "analysis.json").read_text())
    # hard is dropped from the regressions but contrasts keep every pair
    assert payload["workload_linear"]["alpha"]["n"] == 6
    pairs = payload["contrasts"]["alpha"]["pairs"]
    assert any("hard" in (pr["a"], pr["b"]) for pr in pairs)


def test_analyze_missing_table(tmp_path, capsys):
    code, _, err = run_cli(capsys, "analyze", "--bands", str(tmp_path / "nope.csv"),
                           "--out-dir", str(tmp_path / "o"))
    assert code == 3
    assert json.loads(err)["error"] == "data"
