import numpy as np
import pytest

from earpipe.cardiac import (
    BeatSeries,
    match_beats,
    paired_rr,
    pan_tompkins,
    rr_outlier_filter,
    rr_periods,
)
from earpipe.synth import EcgSynthSpec, gen_ecg

from oracles import fir_response


def noisy_ecg(bpm: float, rate: float, snr_db: float, seed: int, duration_s: float = 60.0):
    rec, truth = gen_ecg(
        EcgSynthSpec(rate=rate, duration_s=duration_s, seed=seed, bpm=bpm, rr_jitter_ms=25.0)
    )
    x = rec.data[0]
    rng = np.random.default_rng(seed + 1000)
    noise_std = np.sqrt(np.mean(x**2)) / 10 ** (snr_db / 20.0)
    return x + rng.normal(scale=noise_std, size=x.shape), truth


def detection_scores(beats: BeatSeries, truth: BeatSeries, tol_s: float = 0.05):
    m = match_beats(truth, beats, tolerance_s=tol_s)
    tp = len(m.pairs)
    sens = tp / len(truth)
    prec = tp / len(beats) if len(beats) else 0.0
    return sens, prec, m


def test_beat_series_validation():
    with pytest.raises(ValueError):
        BeatSeries(beat_times=np.array([1.0, 1.05]), rate=250.0)  # inside refractory
    with pytest.raises(ValueError):
        BeatSeries(beat_times=np.array([[1.0]]), rate=250.0)


def test_rejects_low_rate_and_short_signal():
    with pytest.raises(ValueError):
        pan_tompkins(np.zeros(1000), rate=50.0)
    with pytest.raises(ValueError):
        pan_tompkins(np.zeros(200), rate=250.0)


def test_clean_ecg_all_beats_found():
    rec, truth = gen_ecg(EcgSynthSpec(rate=250.0, duration_s=60.0, seed=2, bpm=70.0))
    beats = pan_tompkins(rec.data[0], 250.0)
    sens, prec, _ = detection_scores(beats, truth)
    assert sens == 1.0 and prec == 1.0


def test_detection_inverted_polarity():
    rec, truth = gen_ecg(EcgSynthSpec(rate=250.0, duration_s=60.0, seed=3, bpm=65.0))
    beats = pan_tompkins(-rec.data[0], 250.0)
    # detector is one-sided; the caller tries both polarities
    flipped = pan_tompkins(rec.data[0] * -1.0, 250.0)
    assert len(flipped) == len(beats)


def test_noisy_ecg_high_sensitivity():
    x, truth = noisy_ecg(bpm=75.0, rate=250.0, snr_db=10.0, seed=4)
    beats = pan_tompkins(x, 250.0)
    sens, prec, _ = detection_scores(beats, truth)
    assert sens >= 0.99
    assert prec >= 0.99


def test_qrs_bandpass_passes_10hz_blocks_edges():
    from earpipe.cardiac import _bandpass_qrs

    rate = 250.0
    impulse = np.zeros(2001)
    impulse[1000] = 1.0
    h = _bandpass_qrs(impulse, rate)
    mid = abs(fir_response(h, 10.0, rate))
    low = abs(fir_response(h, 0.5, rate))
    high = abs(fir_response(h, 40.0, rate))
    assert mid > 5 * low
    assert mid > 5 * high


def test_rr_periods_values():
    beats = BeatSeries(beat_times=np.array([0.0, 1.0, 1.8, 2.9]), rate=250.0)
    rr = rr_periods(beats)
    assert np.allclose(rr.intervals_ms, [1000.0, 800.0, 1100.0])
    assert np.allclose(rr.anchored_at_s, [0.0, 1.0, 1.8])


def test_rr_periods_needs_two_beats():
    with pytest.raises(ValueError):
        rr_periods(BeatSeries(beat_times=np.array([1.0]), rate=250.0))


def test_outlier_filter_drops_extremes():
    rng = np.random.default_rng(5)
    rr = 900.0 + rng.normal(scale=30.0, size=200)
    rr[50] = 3200.0  # missed beat
    rr[120] = 150.0  # double detection
    anchors = np.cumsum(rr) / 1000.0
    from earpipe.cardiac import RrSeries

    series = RrSeries(intervals_ms=rr, anchored_at_s=anchors)
    result = rr_outlier_filter(series)
    assert result.dropped_count == 2
    assert not result.kept_mask[50]
    assert not result.kept_mask[120]


def test_outlier_filter_clean_drop_rate_below_one_percent():
    from earpipe.cardiac import RrSeries

    rates = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        rr = 1000.0 + rng.normal(scale=20.0, size=500)
        series = RrSeries(intervals_ms=rr, anchored_at_s=np.cumsum(rr) / 1000.0)
        rates.append(rr_outlier_filter(series).dropped_count / 500)
    assert np.mean(rates) < 0.01


def test_outlier_filter_constant_series_untouched():
    from earpipe.cardiac import RrSeries

    rr = np.full(50, 1000.0)
    series = RrSeries(intervals_ms=rr, anchored_at_s=np.cumsum(rr) / 1000.0)
    result = rr_outlier_filter(series)
    assert result.dropped_count == 0
    assert np.array_equal(result.kept.intervals_ms, rr)


def test_match_beats_identical():
    beats = BeatSeries(beat_times=np.arange(0.0, 30.0, 0.8), rate=250.0)
    m = match_beats(beats, beats, tolerance_s=0.15)
    assert len(m.pairs) == len(beats)
    assert m.unmatched_ref == 0 and m.unmatched_alt == 0


def test_match_beats_alt_missing_every_tenth():
    times = np.arange(0.0, 80.0, 0.8)
    keep = np.array([i % 10 != 9 for i in range(len(times))])
    ref = BeatSeries(beat_times=times, rate=250.0)
    alt = BeatSeries(beat_times=times[keep], rate=250.0)
    m = match_beats(ref, alt, tolerance_s=0.15)
    assert m.unmatched_ref == len(times) // 10
    assert m.unmatched_alt == 0
    assert len(m.pairs) == keep.sum()


def test_match_beats_symmetric_counts():
    rng = np.random.default_rng(7)
    a = BeatSeries(beat_times=np.sort(rng.uniform(0, 60, 50)) + np.arange(50) * 0.5, rate=0.0)
    b_times = a.beat_times[: 40] + rng.normal(scale=0.02, size=40)
    b = BeatSeries(beat_times=np.sort(b_times), rate=0.0)
    fwd = match_beats(a, b, tolerance_s=0.1)
    rev = match_beats(b, a, tolerance_s=0.1)
    assert len(fwd.pairs) == len(rev.pairs)
    assert fwd.unmatched_ref == rev.unmatched_alt
    assert fwd.unmatched_alt == rev.unmatched_ref


def test_match_beats_respects_tolerance():
    ref = BeatSeries(beat_times=np.array([1.0, 2.0, 3.0]), rate=0.0)
    alt = BeatSeries(beat_times=np.array([1.05, 2.5, 3.02]), rate=0.0)
    m = match_beats(ref, alt, tolerance_s=0.1)
    assert len(m.pairs) == 2
    assert m.unmatched_ref == 1 and m.unmatched_alt == 1


def test_paired_rr_requires_consecutive_matches():
    # alt misses the middle beat: no R-R pair may straddle the gap
    ref = BeatSeries(beat_times=np.array([0.0, 1.0, 2.0, 3.0, 4.0]), rate=0.0)
    alt = BeatSeries(beat_times=np.array([0.0, 1.0, 3.0, 4.0]), rate=0.0)
    m = match_beats(ref, alt, tolerance_s=0.1)
    rr_ref, rr_alt = paired_rr(m, ref, alt)
    assert len(rr_ref) == 2  # (0,1) and (3,4) only
    assert np.allclose(rr_ref, [1000.0, 1000.0])
    assert np.allclose(rr_alt, [1000.0, 1000.0])


def test_rr_error_under_noise_is_small():
    x, truth = noisy_ecg(bpm=60.0, rate=250.0, snr_db=10.0, seed=8)
    beats = pan_tompkins(x, 250.0)
    m = match_beats(truth, beats, tolerance_s=0.05)
    rr_ref, rr_alt = paired_rr(m, truth, beats)
    assert np.mean(np.abs(rr_alt - rr_ref)) <= 4.0
