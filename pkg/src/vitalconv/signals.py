"""Deterministic waveform transforms: normalization, centering, padding, ABP rescaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_FS = 125.0


class Kind(str, Enum):
    ECG = "ECG"
    PPG = "PPG"
    ABP = "ABP"


KINDS = (Kind.ECG, Kind.PPG, Kind.ABP)


class Unit(str, Enum):
    LOCAL = "local-norm"
    GLOBAL = "global-norm"
    MMHG = "mmHg"
    RAW = "raw"


class UnitError(ValueError):
    """A transform was applied to a waveform in the wrong unit."""


@dataclass(frozen=True)
class Waveform:
    kind: Kind
    samples: np.ndarray
    sample_rate: float = DEFAULT_FS
    unit: Unit = Unit.RAW

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"waveform must be a non-empty 1-D array, got shape {arr.shape}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples, unit: Unit | None = None) -> "Waveform":
        return replace(self, samples=samples, unit=self.unit if unit is None else unit)


@dataclass(frozen=True)
class GlobalBounds:
    min_mmHg: float
    max_mmHg: float

    def __post_init__(self):
        if not self.min_mmHg < self.max_mmHg:
            raise ValueError(f"global bounds need min < max, got [{self.min_mmHg}, {self.max_mmHg}]")

    @property
    def span(self) -> float:
        return self.max_mmHg - self.min_mmHg

    def normalize(self, mmhg):
        return (np.asarray(mmhg, dtype=np.float64) - self.min_mmHg) / self.span

    def denormalize(self, norm):
        return np.asarray(norm, dtype=np.float64) * self.span + self.min_mmHg

    def to_dict(self) -> dict:
        return {"min_mmHg": self.min_mmHg, "max_mmHg": self.max_mmHg}


def mean_arterial_pressure(sbp, dbp):
    return (np.asarray(sbp, dtype=np.float64) + 2.0 * np.asarray(dbp, dtype=np.float64)) / 3.0


@dataclass(frozen=True)
class BPEstimate:
    """Predicted SBP/DBP on the global-norm scale, with mmHg views."""

    sbp_norm: float
    dbp_norm: float
    bounds: GlobalBounds = field(repr=False)

    def __post_init__(self):
        if not self.sbp_norm > self.dbp_norm:
            raise ValueError(f"SBP must exceed DBP (got sbp={self.sbp_norm:.4f}, dbp={self.dbp_norm:.4f})")

    @classmethod
    def from_mmHg(cls, sbp: float, dbp: float, bounds: GlobalBounds) -> "BPEstimate":
        return cls(float(bounds.normalize(sbp)), float(bounds.normalize(dbp)), bounds)

    @property
    def sbp_mmHg(self) -> float:
        return float(self.bounds.denormalize(self.sbp_norm))

    @property
    def dbp_mmHg(self) -> float:
        return float(self.bounds.denormalize(self.dbp_norm))

    @property
    def map_mmHg(self) -> float:
        return float(mean_arterial_pressure(self.sbp_mmHg, self.dbp_mmHg))


def minmax(x: np.ndarray) -> np.ndarray:
    """Array-level local min-max; constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def local_minmax(w: Waveform) -> Waveform:
    return w.with_samples(minmax(w.samples), Unit.LOCAL)


def global_minmax(w: Waveform, bounds: GlobalBounds, slack: float = 0.05) -> Waveform:
    """mmHg -> global-norm. Values beyond ``slack`` (fraction of the span) are clamped."""
    if w.unit is not Unit.MMHG:
        raise UnitError(f"global_minmax expects mmHg input, got {w.unit.value}")
    out = bounds.normalize(w.samples)
    if out.min() < -slack or out.max() > 1.0 + slack:
        log.warning(
            "%s waveform outside global bounds [%.2f, %.2f] mmHg by more than slack; clamping",
            w.kind.value, bounds.min_mmHg, bounds.max_mmHg,
        )
        out = np.clip(out, -slack, 1.0 + slack)
    return w.with_samples(out, Unit.GLOBAL)


def to_mmHg(w: Waveform, bounds: GlobalBounds) -> Waveform:
    if w.unit is not Unit.GLOBAL:
        raise UnitError(f"to_mmHg expects global-norm input, got {w.unit.value}")
    return w.with_samples(bounds.denormalize(w.samples), Unit.MMHG)


def zero_center(w: Waveform) -> Waveform:
    if w.unit is not Unit.LOCAL:
        raise UnitError(f"zero-centering applies to local-norm waveforms only, got {w.unit.value}")
    return w.with_samples(w.samples - w.samples.mean())


def pad_widths(length: int, target_len: int) -> tuple[int, int]:
    if target_len < length:
        raise ValueError(f"target length {target_len} shorter than waveform length {length}")
    deficit = target_len - length
    return deficit // 2, deficit - deficit // 2


def zero_pad(w: Waveform, target_len: int) -> Waveform:
    left, right = pad_widths(len(w), target_len)
    return w.with_samples(np.pad(w.samples, (left, right)))


def rescale_abp(y_apx: Waveform, bp: BPEstimate, bounds: GlobalBounds | None = None) -> Waveform:
    """Map a local-norm ABP shape onto [DBP, SBP] and return it in mmHg.

    The affine map runs on the global-norm scale, then ``bounds`` converts to mmHg.
    """
    if y_apx.unit is not Unit.LOCAL:
        raise UnitError(f"rescale_abp expects a local-norm approximation, got {y_apx.unit.value}")
    if not bp.sbp_norm > bp.dbp_norm:
        raise ValueError("rescale_abp needs sbp > dbp")
    bounds = bounds or bp.bounds
    g = y_apx.samples * (bp.sbp_norm - bp.dbp_norm) + bp.dbp_norm
    return to_mmHg(Waveform(Kind.ABP, g, y_apx.sample_rate, Unit.GLOBAL), bounds)
