"""Synthetic ECG/PPG/ABP cohorts, calibration-free splits, direction sampling and dataset I/O.

Generated triplets are coupled through a shared beat train: every beat's R peak,
ABP upstroke and PPG upstroke sit on integer samples, so all landmarks stored
as ground truth are exact when noise is off.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import blob
from .signals import DEFAULT_FS, KINDS, GlobalBounds, Kind, Unit, Waveform, mean_arterial_pressure, minmax

FORMAT_VERSION = 1
SHARD_MAGIC = b"VCDATA"
MANIFEST_NAME = "manifest.json"
APX_SPLITS = ("apx-train", "apx-val", "apx-test")
FINETUNE_SPLITS = ("ref-finetune-train", "ref-finetune-val", "ref-finetune-test")
FINETUNE_FRACTIONS = (0.81, 0.09, 0.10)

# All six ordered (source, target) pairs, source-major.
DIRECTIONS = tuple((i, j) for i in range(3) for j in range(3) if i != j)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PatientProfile:
    patient_id: int
    age: float
    sex: str
    height: float | None
    weight: float | None
    bmi: float | None
    sbp: float
    dbp: float
    heart_rate: float
    ptt_ms: float  # R peak -> PPG systolic peak
    ppg_rise_ms: float  # PPG onset -> systolic peak
    abp_lead_ms: float  # ABP peak precedes PPG peak by this much
    qtc_s: float
    morph_seed: int

    def __post_init__(self):
        if not self.sbp > self.dbp:
            raise ValueError("profile needs SBP > DBP")
        if not 30 <= self.heart_rate <= 200:
            raise ValueError(f"heart rate {self.heart_rate} outside [30, 200]")


@dataclass
class GroundTruth:
    r_peaks: np.ndarray
    ppg_peaks: np.ndarray
    ppg_onsets: np.ndarray
    abp_peaks: np.ndarray
    abp_onsets: np.ndarray
    qtc: float  # mean Bazett QTc over beats with a preceding RR inside the segment

    @property
    def rr(self) -> np.ndarray:
        return np.diff(self.r_peaks)


@dataclass
class Record:
    patient_id: int
    segment_id: int
    ecg: Waveform
    ppg: Waveform
    abp: Waveform
    sbp: float
    dbp: float
    truth: GroundTruth | None = None

    def __post_init__(self):
        lens = {len(self.ecg), len(self.ppg), len(self.abp)}
        rates = {self.ecg.sample_rate, self.ppg.sample_rate, self.abp.sample_rate}
        if len(lens) != 1 or len(rates) != 1:
            raise ValueError("ECG/PPG/ABP must share length and sample rate")

    @property
    def map(self) -> float:
        return float(mean_arterial_pressure(self.sbp, self.dbp))

    @property
    def length(self) -> int:
        return len(self.ecg)

    @property
    def fs(self) -> float:
        return self.ecg.sample_rate

    def waveform(self, kind) -> Waveform:
        return {Kind.ECG: self.ecg, Kind.PPG: self.ppg, Kind.ABP: self.abp}[Kind(kind)]


@dataclass
class SplitManifest:
    dataset_id: str
    seed: int
    bounds: GlobalBounds
    patients: dict[str, list[int]]
    segments: dict[str, list[int]]
    fractions: dict[str, float]
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def pi_available(self) -> bool:
        return bool(self.config.get("pi_available", True))

    @property
    def zero_center(self) -> tuple[str, ...]:
        return tuple(self.config.get("zero_center", ("ECG",)))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "bounds": self.bounds.to_dict(),
            "patients": self.patients,
            "segments": self.segments,
            "fractions": self.fractions,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        if d.get("version") != FORMAT_VERSION:
            raise blob.FormatError(f"manifest version {d.get('version')!r} not supported (expected {FORMAT_VERSION})")
        return cls(
            dataset_id=d["dataset_id"],
            seed=d["seed"],
            bounds=GlobalBounds(**d["bounds"]),
            patients={k: list(v) for k, v in d["patients"].items()},
            segments={k: list(v) for k, v in d["segments"].items()},
            fractions=dict(d["fractions"]),
            config=dict(d.get("config", {})),
        )


# ---------------------------------------------------------------- generation


def generate_patient(rng: np.random.Generator, patient_id: int = 0) -> PatientProfile:
    age = float(rng.integers(20, 86))
    sex = "M" if rng.random() < 0.5 else "F"
    height = float(np.round(rng.normal(176.0, 7.0) if sex == "M" else rng.normal(163.0, 6.5), 1))
    bmi_draw = float(np.clip(rng.normal(26.0, 4.5), 16.0, 45.0))
    weight = float(np.round(bmi_draw * (height / 100.0) ** 2, 1))
    bmi = float(np.round(weight / (height / 100.0) ** 2, 1))

    sbp = 104.0 + 0.45 * (age - 20) + 0.8 * (bmi - 25) + (4.0 if sex == "M" else 0.0) + rng.normal(0, 16)
    sbp = float(np.clip(sbp, 75.0, 195.0))
    dbp = 0.55 * sbp + 8.0 + rng.normal(0, 7)
    dbp = float(np.clip(dbp, 38.0, min(110.0, sbp - 20.0)))

    hr = float(np.clip(rng.normal(76.0, 13.0) + 0.1 * (sbp - 120.0), 48.0, 112.0))
    rr_s = 60.0 / hr
    rise = float(np.clip(rng.normal(220.0 + 2.0 * (age - 20), 40.0), 150.0, 480.0))
    rise = min(rise, 0.5 * rr_s * 1000.0)
    ptt = float(np.clip(rng.normal(330.0 - 0.9 * (sbp - 120.0), 15.0), 200.0, 420.0))
    ptt = max(ptt, rise + 80.0)
    # the peripheral pulse trails the arterial pulse more when the upstroke is slow
    lead = float(np.clip(35.0 + 0.12 * rise + rng.normal(0, 4.0), 40.0, 100.0))
    qtc = float(np.clip(rng.normal(0.41, 0.035), 0.33, 0.52))
    return PatientProfile(
        patient_id=int(patient_id),
        age=age,
        sex=sex,
        height=height,
        weight=weight,
        bmi=bmi,
        sbp=round(sbp, 2),
        dbp=round(dbp, 2),
        heart_rate=round(hr, 2),
        ptt_ms=round(ptt, 1),
        ppg_rise_ms=round(rise, 1),
        abp_lead_ms=round(lead, 1),
        qtc_s=round(qtc, 4),
        morph_seed=int(rng.integers(0, 2**31 - 1)),
    )


@dataclass(frozen=True)
class _Morphology:
    amp: tuple[float, float, float, float, float]  # P Q R S T
    sigma: tuple[float, float, float, float]  # P Q R S widths (s); T width scales with sqrt(RR)
    t_sigma: float
    p_offset: float
    q_offset: float
    s_offset: float
    ppg_decay: float
    ppg_shoulder: float
    abp_tau: float
    abp_notch: float
    abp_dicrotic: float


def _morphology(seed: int) -> _Morphology:
    r = np.random.default_rng(seed)
    decay = r.uniform(1.4, 2.4)
    shoulder = r.uniform(0.15, 0.40)
    return _Morphology(
        amp=(r.uniform(0.12, 0.18), -r.uniform(0.10, 0.16), r.uniform(1.0, 1.1), -r.uniform(0.20, 0.30), r.uniform(0.25, 0.35)),
        sigma=(r.uniform(0.020, 0.030), 0.010, 0.011, 0.012),
        t_sigma=r.uniform(0.040, 0.050),
        p_offset=-r.uniform(0.16, 0.20),
        q_offset=-0.030,
        s_offset=0.030,
        ppg_decay=decay,
        ppg_shoulder=shoulder,
        # arterial shape tracks the (low-passed) peripheral one
        abp_tau=0.75 - 0.15 * decay + r.uniform(-0.03, 0.03),
        abp_notch=0.04 + 0.25 * shoulder + r.uniform(-0.01, 0.01),
        abp_dicrotic=0.03 + 0.3 * shoulder + r.uniform(-0.01, 0.01),
    )


def qrs_onset_offset(m: _Morphology) -> float:
    """QRS onset relative to the R peak (s): tangent at the Q downstroke meets baseline."""
    return m.q_offset - 2.0 * m.sigma[1]


def _gauss(t, mu, sigma):
    return np.exp(-0.5 * ((t - mu) / sigma) ** 2)


def _rise(n: int) -> np.ndarray:
    # n+1 samples from onset (0) to peak (1) inclusive
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(n + 1) / n))


def _ppg_decay(n: int, m: _Morphology) -> np.ndarray:
    u = np.arange(n + 1) / n
    return (1.0 - u) ** m.ppg_decay * (1.0 + m.ppg_shoulder * np.sin(np.pi * u))


def _abp_decay(n: int, m: _Morphology) -> np.ndarray:
    u = np.arange(n + 1) / n
    base = (np.exp(-u / m.abp_tau) - np.exp(-1.0 / m.abp_tau)) / (1.0 - np.exp(-1.0 / m.abp_tau))
    s = np.sin(np.pi * u)
    return base - m.abp_notch * _gauss(u, 0.28, 0.05) * s + m.abp_dicrotic * _gauss(u, 0.38, 0.07) * s


def _pulse_train(n_samples, peaks, rise, decay_fn, offset):
    """Piecewise pulse: 0 at each onset, 1 at each peak, decaying to 0 at the next onset."""
    out = np.zeros(n_samples)
    onsets = peaks - rise
    for k in range(len(peaks) - 1):
        seg_rise = _rise(rise)
        seg_decay = decay_fn(onsets[k + 1] - peaks[k])
        idx = np.arange(onsets[k], onsets[k + 1] + 1)
        vals = np.concatenate([seg_rise, seg_decay[1:]])
        pos = idx - offset
        ok = (pos >= 0) & (pos < n_samples)
        out[pos[ok]] = vals[ok]
    return out


def synthesize_record(
    profile: PatientProfile,
    segment_len_s: float = 4.096,
    fs: float = DEFAULT_FS,
    rng: np.random.Generator | None = None,
    noise: float = 0.0,
    segment_id: int = 0,
) -> Record:
    """Synthesize one synchronized ECG/PPG/ABP segment for ``profile``.

    Segment-level SBP/DBP wander a few mmHg around the profile baseline; the
    ABP waveform spans exactly [DBP, SBP] when ``noise`` is 0.
    """
    n = segment_len_s * fs
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"fs * segment_len_s must be integral, got {n}")
    n = int(round(n))
    rng = rng if rng is not None else np.random.default_rng(0)
    m = _morphology(profile.morph_seed)

    sbp = profile.sbp + rng.normal(0, 3.0)
    dbp = profile.dbp + rng.normal(0, 2.0)
    dbp = min(dbp, sbp - 15.0)
    hr = float(np.clip(profile.heart_rate + rng.normal(0, 2.0), 30.0, 200.0))
    rr_mean = 60.0 / hr * fs

    # beat train covering [-3 s, end + 3 s]
    margin = int(3 * fs)
    r_peaks = [int(-margin + rng.integers(0, int(rr_mean)))]
    while r_peaks[-1] < n + margin:
        r_peaks.append(r_peaks[-1] + int(round(rr_mean * rng.uniform(0.95, 1.05))))
    r_peaks = np.asarray(r_peaks)
    start = -margin - 2 * int(rr_mean)
    total = n + 2 * margin + 4 * int(rr_mean)

    t = (np.arange(total) + start) / fs
    ecg = np.zeros(total)
    qt_on = qrs_onset_offset(m)
    qtc_vals = []
    for k, rp in enumerate(r_peaks):
        tr = rp / fs
        rr_prev = (r_peaks[k] - r_peaks[k - 1]) / fs if k > 0 else rr_mean / fs
        qt = profile.qtc_s * math.sqrt(rr_prev)
        t_sigma = m.t_sigma * math.sqrt(rr_prev)
        t_center = qt_on + qt - 2.0 * t_sigma
        lo, hi = np.searchsorted(t, [tr - 0.4, tr + 0.9])
        tt = t[lo:hi]
        ecg[lo:hi] += (
            m.amp[0] * _gauss(tt, tr + m.p_offset, m.sigma[0])
            + m.amp[1] * _gauss(tt, tr + m.q_offset, m.sigma[1])
            + m.amp[2] * _gauss(tt, tr, m.sigma[2])
            + m.amp[3] * _gauss(tt, tr + m.s_offset, m.sigma[3])
            + m.amp[4] * _gauss(tt, tr + t_center, t_sigma)
        )
        if 0 <= rp < n and k > 0 and r_peaks[k - 1] >= 0:
            qtc_vals.append(qt / math.sqrt(rr_prev))

    ptt = int(round(profile.ptt_ms * fs / 1000.0))
    lead = int(round(profile.abp_lead_ms * fs / 1000.0))
    ppg_rise = max(2, int(round(profile.ppg_rise_ms * fs / 1000.0)))
    abp_rise = max(2, int(round(0.7 * ppg_rise)))
    ppg_peaks = r_peaks + ptt
    abp_peaks = r_peaks + ptt - lead
    ppg = _pulse_train(total, ppg_peaks, ppg_rise, lambda d: _ppg_decay(d, m), start)
    abp = _pulse_train(total, abp_peaks, abp_rise, lambda d: _abp_decay(d, m), start)

    crop = slice(-start, -start + n)
    ecg, ppg, abp = ecg[crop], ppg[crop], abp[crop]
    abp = dbp + (sbp - dbp) * abp
    if noise > 0:
        ecg = ecg + rng.normal(0, noise * m.amp[2], n)
        ppg = ppg + rng.normal(0, noise, n)
        abp = abp + rng.normal(0, noise * (sbp - dbp), n)

    def inside(idx):
        # boundary samples cannot be confirmed as extrema, so they are not landmarks
        idx = np.asarray(idx)
        return idx[(idx >= 1) & (idx < n - 1)].astype(np.int64)

    truth = GroundTruth(
        r_peaks=inside(r_peaks),
        ppg_peaks=inside(ppg_peaks),
        ppg_onsets=inside(ppg_peaks - ppg_rise),
        abp_peaks=inside(abp_peaks),
        abp_onsets=inside(abp_peaks - abp_rise),
        qtc=float(np.mean(qtc_vals)) if qtc_vals else float("nan"),
    )
    return Record(
        patient_id=profile.patient_id,
        segment_id=segment_id,
        ecg=Waveform(Kind.ECG, minmax(ecg), fs, Unit.LOCAL),
        ppg=Waveform(Kind.PPG, minmax(ppg), fs, Unit.LOCAL),
        abp=Waveform(Kind.ABP, abp, fs, Unit.MMHG),
        sbp=float(sbp),
        dbp=float(dbp),
        truth=truth,
    )


def generate_cohort(
    n_patients: int,
    segments_per_patient: int,
    seed: int,
    segment_len_s: float = 4.096,
    fs: float = DEFAULT_FS,
    noise: float = 0.0,
) -> tuple[list[PatientProfile], list[Record]]:
    """Patients and records from independent rng streams spawned off ``seed``."""
    root = np.random.SeedSequence(seed)
    profiles, records = [], []
    for pid, child in enumerate(root.spawn(n_patients)):
        prng, *seg_seqs = [np.random.default_rng(s) for s in child.spawn(1 + segments_per_patient)]
        prof = generate_patient(prng, pid)
        profiles.append(prof)
        for k, srng in enumerate(seg_seqs):
            records.append(
                synthesize_record(prof, segment_len_s, fs, srng, noise, segment_id=pid * segments_per_patient + k)
            )
    return profiles, records


# ---------------------------------------------------------------- splits


def make_splits(
    records: list[Record],
    seed: int,
    test_fraction: float = 0.2,
    val_fraction: float = 0.2,
    min_patients: int = 100,
    dataset_id: str = "synthetic",
    config: dict | None = None,
) -> SplitManifest:
    """Patient-disjoint approximation splits plus the calibration-based finetune re-split.

    ``val_fraction`` is taken from the train side (0.2 gives the 4:1 ratio).
    Global bounds are frozen from the train+val segments.
    """
    pids = sorted({r.patient_id for r in records})
    if len(pids) < max(min_patients, 3):
        raise DatasetError(f"need at least {max(min_patients, 3)} patients for splitting, got {len(pids)}")
    rng = np.random.default_rng(seed)
    order = [int(p) for p in rng.permutation(pids)]
    n_test = max(1, int(round(test_fraction * len(order))))
    n_val = max(1, int(round(val_fraction * (len(order) - n_test))))
    test, val, train = order[:n_test], order[n_test:n_test + n_val], order[n_test + n_val:]
    if not train:
        raise DatasetError("train split is empty")
    patients = {"apx-train": sorted(train), "apx-val": sorted(val), "apx-test": sorted(test)}

    by_split: dict[str, list[int]] = {}
    lookup = {p: s for s, ps in patients.items() for p in ps}
    for r in records:
        by_split.setdefault(lookup[r.patient_id], []).append(r.segment_id)
    segments = {s: sorted(by_split.get(s, [])) for s in APX_SPLITS}
    segments["ref-pretrain-train"] = list(segments["apx-train"])
    segments["ref-pretrain-val"] = list(segments["apx-val"])

    test_segs = [int(s) for s in rng.permutation(segments["apx-test"])]
    n = len(test_segs)
    # val/test get at least one segment each when there is room; train takes the rest
    floor = 1 if n >= 3 else 0
    n_ft_val = max(floor, int(round(FINETUNE_FRACTIONS[1] * n)))
    n_ft_test = max(floor, int(round(FINETUNE_FRACTIONS[2] * n)))
    n_ft_train = n - n_ft_val - n_ft_test
    segments["ref-finetune-train"] = sorted(test_segs[:n_ft_train])
    segments["ref-finetune-val"] = sorted(test_segs[n_ft_train:n_ft_train + n_ft_val])
    segments["ref-finetune-test"] = sorted(test_segs[n_ft_train + n_ft_val:])

    fit = [r for r in records if lookup[r.patient_id] in ("apx-train", "apx-val")]
    bounds = GlobalBounds(float(min(r.dbp for r in fit)), float(max(r.sbp for r in fit)))
    return SplitManifest(
        dataset_id=dataset_id,
        seed=int(seed),
        bounds=bounds,
        patients=patients,
        segments=segments,
        fractions={
            "test": test_fraction,
            "val": val_fraction,
            "finetune-train": FINETUNE_FRACTIONS[0],
            "finetune-val": FINETUNE_FRACTIONS[1],
            "finetune-test": FINETUNE_FRACTIONS[2],
        },
        config=dict(config or {}),
    )


# ---------------------------------------------------------------- dataset


class Dataset:
    """Records, patient profiles and a manifest, with stacked-array views for batching."""

    def __init__(self, records: list[Record], profiles: dict[int, PatientProfile] | list, manifest: SplitManifest):
        if not records:
            raise DatasetError("dataset has no records")
        self.records = list(records)
        if not isinstance(profiles, dict):
            profiles = {p.patient_id: p for p in profiles}
        self.profiles = profiles
        self.manifest = manifest
        self._index = {r.segment_id: i for i, r in enumerate(self.records)}

    def __len__(self):
        return len(self.records)

    @property
    def length(self) -> int:
        return self.records[0].length

    @property
    def fs(self) -> float:
        return self.records[0].fs

    def split(self, name: str) -> list[Record]:
        try:
            ids = self.manifest.segments[name]
        except KeyError:
            raise DatasetError(f"unknown split {name!r}") from None
        return [self.records[self._index[s]] for s in ids]

    def model_inputs(self, records: list[Record]) -> np.ndarray:
        """(N, 3, L) array of locally normalized ECG/PPG/ABP, zero-centered per manifest."""
        centered = set(self.manifest.zero_center)
        out = np.empty((len(records), 3, records[0].length))
        for n, r in enumerate(records):
            for c, kind in enumerate(KINDS):
                x = minmax(r.waveform(kind).samples)
                if kind.value in centered:
                    x = x - x.mean()
                out[n, c] = x
        return out


@dataclass
class DirectionBatch:
    x: np.ndarray  # (B, 1, L) source
    d: np.ndarray  # (B, 3) one-hot target selector
    y: np.ndarray  # (B, 1, L) target
    source: np.ndarray
    target: np.ndarray
    segment_ids: np.ndarray


def sample_direction_batch(
    inputs: np.ndarray,
    segment_ids,
    batch_size: int,
    rng: np.random.Generator,
    direction: tuple[int, int] | None = None,
) -> DirectionBatch:
    """Draw synchronized (source, selector, target) triples with source != target.

    ``inputs`` is the (N, 3, L) stack from :meth:`Dataset.model_inputs`.
    ``direction`` pins every element to one (source, target) pair.
    """
    if len(inputs) == 0:
        raise DatasetError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rows = rng.integers(0, len(inputs), batch_size)
    if direction is None:
        src = rng.integers(0, 3, batch_size)
        tgt = (src + rng.integers(1, 3, batch_size)) % 3
    else:
        i, j = direction
        if i == j or not (0 <= i < 3 and 0 <= j < 3):
            raise ValueError(f"invalid direction {direction}")
        src = np.full(batch_size, i)
        tgt = np.full(batch_size, j)
    return DirectionBatch(
        x=inputs[rows, src][:, None, :],
        d=np.eye(3)[tgt],
        y=inputs[rows, tgt][:, None, :],
        source=src,
        target=tgt,
        segment_ids=np.asarray(segment_ids)[rows],
    )


def _ragged(arrays):
    flat = np.concatenate([np.asarray(a, dtype=np.int64) for a in arrays]) if arrays else np.zeros(0, np.int64)
    offsets = np.cumsum([0] + [len(a) for a in arrays]).astype(np.int64)
    return flat, offsets


def _unragged(flat, offsets):
    return [flat[offsets[k]:offsets[k + 1]].copy() for k in range(len(offsets) - 1)]


_TRUTH_KEYS = ("r_peaks", "ppg_peaks", "ppg_onsets", "abp_peaks", "abp_onsets")


def _shard_arrays(records: list[Record]) -> dict[str, np.ndarray]:
    arrays = {
        "patient_id": np.array([r.patient_id for r in records], np.int64),
        "segment_id": np.array([r.segment_id for r in records], np.int64),
        "ecg": np.stack([r.ecg.samples for r in records]),
        "ppg": np.stack([r.ppg.samples for r in records]),
        "abp": np.stack([r.abp.samples for r in records]),
        "sbp": np.array([r.sbp for r in records]),
        "dbp": np.array([r.dbp for r in records]),
        "has_truth": np.array([r.truth is not None for r in records]),
        "qtc": np.array([r.truth.qtc if r.truth else np.nan for r in records]),
    }
    for key in _TRUTH_KEYS:
        flat, off = _ragged([getattr(r.truth, key) if r.truth else [] for r in records])
        arrays[f"{key}.flat"], arrays[f"{key}.offsets"] = flat, off
    return arrays


def _records_from_shard(meta: dict, a: dict[str, np.ndarray]) -> list[Record]:
    fs = meta["fs"]
    units = meta["units"]
    ragged = {k: _unragged(a[f"{k}.flat"], a[f"{k}.offsets"]) for k in _TRUTH_KEYS}
    out = []
    for n in range(len(a["segment_id"])):
        truth = None
        if a["has_truth"][n]:
            truth = GroundTruth(**{k: ragged[k][n] for k in _TRUTH_KEYS}, qtc=float(a["qtc"][n]))
        out.append(
            Record(
                patient_id=int(a["patient_id"][n]),
                segment_id=int(a["segment_id"][n]),
                ecg=Waveform(Kind.ECG, a["ecg"][n].copy(), fs, units["ECG"]),
                ppg=Waveform(Kind.PPG, a["ppg"][n].copy(), fs, units["PPG"]),
                abp=Waveform(Kind.ABP, a["abp"][n].copy(), fs, units["ABP"]),
                sbp=float(a["sbp"][n]),
                dbp=float(a["dbp"][n]),
                truth=truth,
            )
        )
    return out


def write_dataset(path, records: list[Record], manifest: SplitManifest, profiles) -> None:
    """Write ``manifest.json`` plus one binary shard per approximation split."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not isinstance(profiles, dict):
        profiles = {p.patient_id: p for p in profiles}
    doc = manifest.to_dict()
    doc["patients_table"] = [asdict(profiles[p]) for p in sorted(profiles)]
    doc["shards"] = {s: f"{s}.bin" for s in APX_SPLITS}
    (path / MANIFEST_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    by_id = {r.segment_id: r for r in records}
    for s in APX_SPLITS:
        recs = [by_id[i] for i in manifest.segments[s]]
        meta = {
            "split": s,
            "fs": recs[0].fs if recs else DEFAULT_FS,
            "units": {k.value: (recs[0].waveform(k).unit.value if recs else "raw") for k in KINDS},
        }
        blob.write_blob(path / f"{s}.bin", SHARD_MAGIC, FORMAT_VERSION, meta, _shard_arrays(recs) if recs else {})


def read_dataset(path) -> Dataset:
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.exists():
        raise DatasetError(f"{path}: no {MANIFEST_NAME}; not a dataset directory")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise blob.FormatError(f"{mpath}: corrupt manifest") from exc
    manifest = SplitManifest.from_dict(doc)
    profiles = {p["patient_id"]: PatientProfile(**p) for p in doc.get("patients_table", [])}
    records = []
    for s in APX_SPLITS:
        meta, arrays = blob.read_blob(path / doc["shards"][s], SHARD_MAGIC, FORMAT_VERSION)
        if arrays:
            records.extend(_records_from_shard(meta, arrays))
    records.sort(key=lambda r: r.segment_id)
    return Dataset(records, profiles, manifest)


def build_synthetic(
    n_patients: int,
    segments_per_patient: int,
    seed: int,
    segment_len_s: float = 4.096,
    fs: float = DEFAULT_FS,
    noise: float = 0.0,
    pi_available: bool = True,
    min_patients: int = 100,
    test_fraction: float = 0.2,
) -> Dataset:
    profiles, records = generate_cohort(n_patients, segments_per_patient, seed, segment_len_s, fs, noise)
    if not pi_available:
        profiles = [blank_pi(p) for p in profiles]
    config = {
        "generator": "synthetic",
        "patients": n_patients,
        "segments_per_patient": segments_per_patient,
        "segment_len_s": segment_len_s,
        "fs": fs,
        "noise": noise,
        "pi_available": pi_available,
        "zero_center": ["ECG"],
        "zero_center_model_input": "as-is",
    }
    manifest = make_splits(
        records, seed, test_fraction=test_fraction, min_patients=min_patients,
        dataset_id=f"synthetic-{n_patients}x{segments_per_patient}-s{seed}", config=config,
    )
    return Dataset(records, profiles, manifest)


def blank_pi(p: PatientProfile) -> PatientProfile:
    """Copy of ``p`` with demographics removed (datasets without patient info)."""
    d = asdict(p)
    d.update(age=float("nan"), sex="", height=None, weight=None, bmi=None)
    return PatientProfile(**d)


# ---------------------------------------------------------------- CSV ingest


def ingest_csv(
    samples_csv,
    patients_csv=None,
    segment_len: int = 512,
    fs: float = DEFAULT_FS,
    seed: int = 0,
    min_patients: int = 3,
) -> Dataset:
    """Build a dataset from real recordings.

    ``samples_csv`` has one row per sample with columns ``patient_id, ecg, ppg, abp``
    (ABP in mmHg), rows in time order. ``patients_csv`` optionally holds
    ``patient_id, age, sex, height, weight, bmi``; blanks become nulls. Each
    patient's stream is cut into non-overlapping ``segment_len`` windows.
    """
    streams: dict[int, list[list[float]]] = {}
    with open(samples_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"patient_id", "ecg", "ppg", "abp"} - set(reader.fieldnames or ())
        if missing:
            raise DatasetError(f"{samples_csv}: missing columns {sorted(missing)}")
        for row in reader:
            streams.setdefault(int(row["patient_id"]), []).append(
                [float(row["ecg"]), float(row["ppg"]), float(row["abp"])]
            )

    def opt(v):
        return None if v in (None, "") else float(v)

    demo: dict[int, dict] = {}
    if patients_csv is not None:
        with open(patients_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                demo[int(row["patient_id"])] = row

    records, profiles = [], []
    seg_id = 0
    for pid in sorted(streams):
        arr = np.asarray(streams[pid])
        segs = []
        for k in range(len(arr) // segment_len):
            chunk = arr[k * segment_len:(k + 1) * segment_len]
            abp = chunk[:, 2]
            segs.append(
                Record(
                    patient_id=pid,
                    segment_id=seg_id,
                    ecg=Waveform(Kind.ECG, minmax(chunk[:, 0]), fs, Unit.LOCAL),
                    ppg=Waveform(Kind.PPG, minmax(chunk[:, 1]), fs, Unit.LOCAL),
                    abp=Waveform(Kind.ABP, abp, fs, Unit.MMHG),
                    sbp=float(abp.max()),
                    dbp=float(abp.min()),
                )
            )
            seg_id += 1
        if not segs:
            continue
        records.extend(segs)
        row = demo.get(pid, {})
        age = opt(row.get("age"))
        profiles.append(
            PatientProfile(
                patient_id=pid,
                age=float("nan") if age is None else age,
                sex=(row.get("sex") or "").strip().upper()[:1],
                height=opt(row.get("height")),
                weight=opt(row.get("weight")),
                bmi=opt(row.get("bmi")),
                sbp=float(np.mean([s.sbp for s in segs])),
                dbp=float(np.mean([s.dbp for s in segs])),
                heart_rate=75.0,
                ptt_ms=float("nan"),
                ppg_rise_ms=float("nan"),
                abp_lead_ms=float("nan"),
                qtc_s=float("nan"),
                morph_seed=0,
            )
        )
    config = {"generator": "csv", "fs": fs, "pi_available": bool(demo), "zero_center": ["ECG"]}
    manifest = make_splits(records, seed, min_patients=min_patients, dataset_id=Path(samples_csv).stem, config=config)
    return Dataset(records, profiles, manifest)
