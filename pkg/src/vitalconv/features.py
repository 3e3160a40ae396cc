"""Morphology features (QTc, RR, Asp/dT, IPR, SBP, DBP, MAP) and normal/abnormal subgrouping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample

from .signals import mean_arterial_pressure

NORMAL_RANGES = {
    "QTc": (0.35, 0.45),
    "RR": (0.6, 1.0),
    "AspDT": (2.0, 3.5),
    "IPR": (60.0, 100.0),
    "SBP": (90.0, 130.0),
    "DBP": (60.0, 80.0),
}
UNITS = {"QTc": "s", "RR": "s", "AspDT": "au/s", "IPR": "BPM", "SBP": "mmHg", "DBP": "mmHg", "MAP": "mmHg"}
# features compared for each target waveform type
TARGET_FEATURES = {"ECG": ("QTc", "RR"), "PPG": ("AspDT", "IPR"), "ABP": ("SBP", "DBP", "MAP")}

R_THRESHOLD_K = 1.5
R_REFRACTORY_S = 0.2
PULSE_REFRACTORY_S = 0.3
QRS_SEARCH_S = 0.12
UPSAMPLE = 8


class FeatureUnavailable(ValueError):
    """The waveform does not support this feature (too few beats, missing wave)."""


def subgroup(name: str, value: float) -> str | None:
    if name not in NORMAL_RANGES:
        return None
    lo, hi = NORMAL_RANGES[name]
    return "normal" if lo <= value <= hi else "abnormal"


@dataclass
class FeatureMeasurement:
    name: str
    value: float
    per_beat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def unit(self) -> str:
        return UNITS[self.name]

    @property
    def normal_range(self):
        return NORMAL_RANGES.get(self.name)

    @property
    def subgroup(self) -> str | None:
        return subgroup(self.name, self.value)


def detect_peaks(x, fs, refractory_s, k: float = R_THRESHOLD_K, rel: float = 0.5) -> np.ndarray:
    """Amplitude-threshold peak detector with a refractory window.

    Candidates are local maxima above ``max(mean + k*std, mean + rel*(max - mean))``;
    they are accepted greedily by amplitude unless an accepted peak lies within
    the refractory window.
    """
    x = np.asarray(x, dtype=np.float64)
    mu, sd = x.mean(), x.std()
    if sd <= 1e-12:
        raise FeatureUnavailable("flat signal")
    thr = max(mu + k * sd, mu + rel * (x.max() - mu))
    inner = np.flatnonzero((x[1:-1] >= x[:-2]) & (x[1:-1] > x[2:])) + 1
    cand = inner[x[inner] > thr]
    gap = int(round(refractory_s * fs))
    taken: list[int] = []
    for i in cand[np.argsort(-x[cand], kind="stable")]:
        if all(abs(i - j) > gap for j in taken):
            taken.append(int(i))
    return np.array(sorted(taken), dtype=np.int64)


def detect_r_peaks(ecg, fs: float) -> np.ndarray:
    peaks = detect_peaks(ecg, fs, R_REFRACTORY_S, R_THRESHOLD_K, 0.5)
    if len(peaks) < 2:
        raise FeatureUnavailable(f"found {len(peaks)} R peak(s); need at least 2")
    return peaks


def rr_intervals(peaks, fs: float) -> np.ndarray:
    peaks = np.asarray(peaks)
    if len(peaks) < 2:
        raise FeatureUnavailable("RR needs at least two peaks")
    return np.diff(peaks) / fs


def bazett(qt: float, rr: float) -> float:
    return qt / np.sqrt(rr)


def _tangent_to_level(t0, v0, slope, level):
    return t0 + (level - v0) / slope


def qtc_bazett(ecg, peaks, fs: float) -> FeatureMeasurement:
    """Mean Bazett-corrected QT over beats with a preceding RR interval.

    QRS onset: tangent at the steepest downstroke within 120 ms before R,
    extended to the isoelectric level (fixed 50 ms before R if there is no
    downstroke). T end: tangent at the steepest T-wave downslope, extended to
    the isoelectric level. Isoelectric level: mean of the 100-60 ms pre-R window.
    """
    x = np.asarray(ecg, dtype=np.float64)
    peaks = np.asarray(peaks)
    up = UPSAMPLE
    xf = resample(x, len(x) * up)
    fsf = fs * up
    dx = np.gradient(xf) * fsf
    n = len(xf)
    r_amp = np.median(x[peaks]) - np.median(x)
    qtcs = []
    for k in range(1, len(peaks)):
        rr = (peaks[k] - peaks[k - 1]) / fs
        r = peaks[k] * up
        lo, hi = r - int(0.10 * fsf), r - int(0.06 * fsf)
        if lo < 0:
            continue
        level = xf[lo:hi].mean()

        a = r - int(QRS_SEARCH_S * fsf)
        if a < 0:
            continue
        i = a + int(np.argmin(dx[a:r]))
        if dx[i] < -0.5 * r_amp / 0.05:
            onset = _tangent_to_level(i, xf[i], dx[i] / fsf, level)
        else:
            onset = r - 0.05 * fsf

        t_lo, t_hi = r + int(0.10 * fsf), r + int(0.7 * rr * fsf)
        if t_hi + int(0.25 * fsf) >= n:
            continue
        tp = t_lo + int(np.argmax(xf[t_lo:t_hi]))
        if xf[tp] - level < 0.05 * r_amp:
            continue
        j = tp + int(np.argmin(dx[tp:tp + int(0.25 * fsf)]))
        if dx[j] >= 0:
            continue
        t_end = _tangent_to_level(j, xf[j], dx[j] / fsf, level)
        if not onset < t_end < n:
            continue
        qtcs.append(bazett((t_end - onset) / fsf, rr))
    if not qtcs:
        raise FeatureUnavailable("no beat with a locatable QRS onset and T end")
    qtcs = np.asarray(qtcs)
    return FeatureMeasurement("QTc", float(qtcs.mean()), qtcs)


@dataclass
class PulseBeats:
    peaks: np.ndarray
    onsets: np.ndarray  # onset[k] precedes peaks[k]; -1 when not locatable


def pulse_beats(x, fs: float) -> PulseBeats:
    """Systolic peaks and their preceding onsets (local minima) of a pulsatile waveform."""
    x = np.asarray(x, dtype=np.float64)
    peaks = detect_peaks(x, fs, PULSE_REFRACTORY_S, k=0.0, rel=0.5)
    if len(peaks) < 2:
        raise FeatureUnavailable(f"found {len(peaks)} pulse(s); need at least 2")
    span = int(np.median(np.diff(peaks)) * 0.7)
    onsets = np.full(len(peaks), -1, dtype=np.int64)
    for k, p in enumerate(peaks):
        lo = peaks[k - 1] if k > 0 else p - span
        if lo < 0:
            continue
        i = lo + int(np.argmin(x[lo:p + 1]))
        if 0 < i < p:
            onsets[k] = i
    return PulseBeats(peaks, onsets)


def ppg_features(ppg, fs: float) -> dict[str, FeatureMeasurement]:
    """Asp/dT (amplitude over onset-to-peak delay, au/s) and IPR (BPM)."""
    x = np.asarray(ppg, dtype=np.float64)
    beats = pulse_beats(x, fs)
    ok = beats.onsets >= 0
    if not ok.any():
        raise FeatureUnavailable("no pulse onset found")
    pk, on = beats.peaks[ok], beats.onsets[ok]
    asp = x[pk] - x[on]
    dt = (pk - on) / fs
    ratio = asp / dt
    ipr = 60.0 / (np.diff(beats.peaks) / fs)
    return {
        "AspDT": FeatureMeasurement("AspDT", float(ratio.mean()), ratio),
        "IPR": FeatureMeasurement("IPR", float(60.0 / np.mean(np.diff(beats.peaks) / fs)), ipr),
    }


def abp_features(abp) -> dict[str, FeatureMeasurement]:
    """SBP/DBP as per-beat maxima/minima averaged over beats, MAP from those."""
    x = np.asarray(abp, dtype=np.float64)
    # peak spacing only matters relative to itself here; 125 Hz is the data rate
    beats = pulse_beats(x, 125.0)
    sys_vals = x[beats.peaks]
    dia_vals = np.array([x[a:b + 1].min() for a, b in zip(beats.peaks[:-1], beats.peaks[1:])])
    first = beats.onsets[0]
    if first >= 0:
        dia_vals = np.concatenate([[x[first]], dia_vals])
    sbp, dbp = float(sys_vals.mean()), float(dia_vals.mean())
    return {
        "SBP": FeatureMeasurement("SBP", sbp, sys_vals),
        "DBP": FeatureMeasurement("DBP", dbp, dia_vals),
        "MAP": FeatureMeasurement("MAP", float(mean_arterial_pressure(sbp, dbp))),
    }


def ecg_features(ecg, fs: float) -> dict[str, FeatureMeasurement]:
    peaks = detect_r_peaks(ecg, fs)
    rr = rr_intervals(peaks, fs)
    out = {"RR": FeatureMeasurement("RR", float(rr.mean()), rr)}
    try:
        out["QTc"] = qtc_bazett(ecg, peaks, fs)
    except FeatureUnavailable:
        pass
    return out


def extract(kind: str, samples, fs: float) -> dict[str, FeatureMeasurement]:
    """All features for one waveform; empty dict when the waveform is unusable."""
    fn = {"ECG": lambda: ecg_features(samples, fs), "PPG": lambda: ppg_features(samples, fs),
          "ABP": lambda: abp_features(samples)}[str(kind)]
    try:
        return fn()
    except FeatureUnavailable:
        return {}


def relative_error(pred: float, true: float) -> float:
    if true == 0:
        raise ZeroDivisionError("relative error undefined for a zero reference value")
    return abs(pred - true) / abs(true)


FEATURE_COLUMNS = ("record_id", "direction", "feature", "predicted", "truth", "relative_error", "subgroup")


def write_feature_table(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FEATURE_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
