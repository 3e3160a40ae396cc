"""Waveform similarity metrics and the AAMI / BHS blood-pressure standards."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MEASURES = ("SBP", "MAP", "DBP")

AAMI_MAX_ABS_ME = 5.0
AAMI_MAX_SD = 8.0
AAMI_MIN_SUBJECTS = 85

# grade -> minimum cumulative percentages within 5 / 10 / 15 mmHg
BHS_THRESHOLDS = {"A": (60, 85, 95), "B": (50, 75, 90), "C": (40, 65, 85)}
BHS_LIMITS = (5.0, 10.0, 15.0)
GRADE_ORDER = "ABCD"


def mae(pred, true) -> float:
    pred, true = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return float(np.mean(np.abs(pred - true)))


def pearson(pred, true) -> float:
    pred, true = np.asarray(pred, dtype=np.float64).ravel(), np.asarray(true, dtype=np.float64).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    a, b = pred - pred.mean(), true - true.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den <= 1e-15:
        raise ValueError("Pearson correlation undefined for a constant input")
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


@dataclass(frozen=True)
class ErrorSample:
    patient_id: int
    measure: str
    error: float  # predicted - true, mmHg

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if not np.isfinite(self.error):
            raise ValueError("error must be finite")


@dataclass
class AAMIResult:
    me: dict[str, float]
    sd: dict[str, float]
    subjects: int
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "Pass"


def aami_verdict(me: dict[str, float], sd: dict[str, float], subjects: int) -> str:
    if subjects < AAMI_MIN_SUBJECTS:
        return "Fail"
    ok = all(abs(me[m]) <= AAMI_MAX_ABS_ME and sd[m] <= AAMI_MAX_SD for m in MEASURES)
    return "Pass" if ok else "Fail"


def _group(errors: list[ErrorSample]) -> dict[str, np.ndarray]:
    if not errors:
        raise ValueError("no error samples")
    out = {m: np.array([e.error for e in errors if e.measure == m]) for m in MEASURES}
    missing = [m for m, v in out.items() if v.size == 0]
    if missing:
        raise ValueError(f"no error samples for {missing}")
    return out


def aami(errors: list[ErrorSample], subjects: int) -> AAMIResult:
    """Mean error and SD per measure over pooled samples; ``subjects`` comes from the manifest."""
    g = _group(errors)
    me = {m: float(v.mean()) for m, v in g.items()}
    sd = {m: float(v.std(ddof=1)) if v.size > 1 else 0.0 for m, v in g.items()}
    return AAMIResult(me, sd, int(subjects), aami_verdict(me, sd, subjects))


@dataclass
class BHSResult:
    cumulative: dict[str, tuple[float, float, float]]
    grades: dict[str, str]
    overall: str = field(init=False)

    def __post_init__(self):
        self.overall = worst_grade(self.grades.values())


def worst_grade(grades) -> str:
    return max(grades, key=GRADE_ORDER.index)


def bhs_grade_counts(counts: tuple[int, int, int], n: int) -> str:
    """Best grade whose three thresholds are all met (inclusive); exact integer comparison."""
    for grade, th in BHS_THRESHOLDS.items():
        if all(100 * c >= t * n for c, t in zip(counts, th)):
            return grade
    return "D"


def bhs_grade(cum5: float, cum10: float, cum15: float) -> str:
    for grade, th in BHS_THRESHOLDS.items():
        if cum5 >= th[0] and cum10 >= th[1] and cum15 >= th[2]:
            return grade
    return "D"


def bhs(abs_errors: dict[str, np.ndarray] | list[ErrorSample]) -> BHSResult:
    if isinstance(abs_errors, list):
        abs_errors = {m: np.abs(v) for m, v in _group(abs_errors).items()}
    cum, grades = {}, {}
    for m, v in abs_errors.items():
        v = np.abs(np.asarray(v, dtype=np.float64))
        if v.size == 0:
            raise ValueError(f"no errors for {m}")
        counts = tuple(int((v <= lim).sum()) for lim in BHS_LIMITS)
        cum[m] = tuple(100.0 * c / v.size for c in counts)
        grades[m] = bhs_grade_counts(counts, v.size)
    return BHSResult(cum, grades)
