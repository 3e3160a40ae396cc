import numpy as np
import pytest

from vitalconv.features import (
    FeatureMeasurement,
    FeatureUnavailable,
    abp_features,
    bazett,
    detect_r_peaks,
    extract,
    ppg_features,
    pulse_beats,
    qtc_bazett,
    relative_error,
    rr_intervals,
    subgroup,
    write_feature_table,
)
from vitalconv.synth import generate_patient, synthesize_record
from dataclasses import replace


def _rec(seed, **kw):
    prof = replace(generate_patient(np.random.default_rng(seed)), **kw)
    return synthesize_record(prof, rng=np.random.default_rng(seed + 100))


def test_rr_and_bazett_arithmetic():
    assert rr_intervals([0, 100], 125.0) == pytest.approx([0.8])
    with pytest.raises(FeatureUnavailable):
        rr_intervals([5], 125.0)
    assert bazett(0.36, 0.81) == pytest.approx(0.400, abs=1e-12)


def test_relative_error():
    assert relative_error(0.44, 0.40) == pytest.approx(0.10)
    assert relative_error(3.0, 3.0) == 0.0
    with pytest.raises(ZeroDivisionError):
        relative_error(1.0, 0.0)


@pytest.mark.parametrize("name,value,group", [
    ("QTc", 0.50, "abnormal"), ("QTc", 0.45, "normal"), ("QTc", 0.35, "normal"),
    ("RR", 0.59, "abnormal"), ("AspDT", 2.5, "normal"), ("IPR", 110, "abnormal"),
    ("SBP", 85, "abnormal"), ("SBP", 130, "normal"), ("DBP", 81, "abnormal"),
])
def test_subgroups_closed_interval(name, value, group):
    assert subgroup(name, value) == group
    assert FeatureMeasurement(name, value).subgroup == group


def test_ppg_ratio_arithmetic():
    # triangle pulses: onset 0 -> peak 1.0 over 50 samples (0.4 s at 125 Hz)
    beat = np.concatenate([np.linspace(0, 1, 51)[:-1], np.linspace(1, 0, 51)[:-1]])
    x = np.concatenate([np.zeros(5), np.tile(beat, 5), np.zeros(5)])
    f = ppg_features(x, 125.0)
    assert f["AspDT"].value == pytest.approx(2.5, rel=1e-9)
    assert f["AspDT"].subgroup == "normal"
    assert f["IPR"].value == pytest.approx(75.0, rel=1e-9)


def test_flat_signals_unavailable():
    with pytest.raises(FeatureUnavailable):
        detect_r_peaks(np.zeros(512), 125.0)
    with pytest.raises(FeatureUnavailable):
        pulse_beats(np.ones(512), 125.0)
    assert extract("ECG", np.zeros(512), 125.0) == {}


def test_r_peaks_match_truth():
    for seed in range(6):
        rec = _rec(seed)
        det = detect_r_peaks(rec.ecg.samples, rec.fs)
        truth = rec.truth.r_peaks
        assert len(det) == len(truth)
        assert np.max(np.abs(det - truth)) <= 2


def test_r_peak_count_75_bpm():
    for seed in range(6):
        rec = _rec(seed, heart_rate=75.0)
        assert 4 <= len(detect_r_peaks(rec.ecg.samples, rec.fs)) <= 6


def test_features_vs_generator_truth():
    for seed in range(8):
        rec = _rec(seed)
        fs, t = rec.fs, rec.truth
        rr = rr_intervals(detect_r_peaks(rec.ecg.samples, fs), fs)
        assert abs(rr.mean() - t.rr.mean() / fs) <= 1 / fs
        q = qtc_bazett(rec.ecg.samples, detect_r_peaks(rec.ecg.samples, fs), fs)
        assert abs(q.value - t.qtc) <= 0.02
        ipr = ppg_features(rec.ppg.samples, fs)["IPR"].value
        assert abs(ipr - 60.0 / np.mean(np.diff(t.ppg_peaks) / fs)) <= 1.0
        a = abp_features(rec.abp.samples)
        assert abs(a["SBP"].value - rec.sbp) <= 0.5 and abs(a["DBP"].value - rec.dbp) <= 0.5
        assert a["MAP"].value == pytest.approx((a["SBP"].value + 2 * a["DBP"].value) / 3)


def test_extractors_deterministic():
    rec = _rec(3)
    a = extract("PPG", rec.ppg.samples, rec.fs)
    b = extract("PPG", rec.ppg.samples, rec.fs)
    assert {k: v.value for k, v in a.items()} == {k: v.value for k, v in b.items()}


def test_feature_table(tmp_path):
    rows = [{"record_id": 3, "direction": "PPG->ABP", "feature": "SBP", "predicted": 121.5, "truth": 120.0,
             "relative_error": 0.0125, "subgroup": "normal"}]
    write_feature_table(tmp_path / "f.csv", rows)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "record_id,direction,feature,predicted,truth,relative_error,subgroup"
    assert lines[1] == "3,PPG->ABP,SBP,121.5,120,0.0125,normal"
