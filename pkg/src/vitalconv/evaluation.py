"""Per-direction evaluation: waveform similarity, feature fidelity, AAMI and BHS,
plus multi-seed aggregation and the report writers (JSON, CSV, SVG).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import features as fx
from .approx import ApproxNet, one_hot
from .refine import RefineNet, linearize_pi
from .signals import BPEstimate, Kind, Unit, Waveform, minmax, rescale_abp
from .standards import MEASURES, AAMIResult, BHSResult, ErrorSample, aami, bhs, mae, pearson
from .synth import DIRECTIONS, Dataset, Record
from .training import KIND_NAMES, parse_direction

log = logging.getLogger(__name__)

ABP = 2


class EvaluationError(RuntimeError):
    pass


def direction_name(direction) -> str:
    i, j = parse_direction(direction)
    return f"{KIND_NAMES[i]}->{KIND_NAMES[j]}"


def parse_directions(spec: str) -> list[tuple[int, int]]:
    """``"all"`` or a comma list like ``"ECG:ABP,PPG:ECG"``."""
    if spec.strip().lower() == "all":
        return list(DIRECTIONS)
    return [parse_direction(p) for p in spec.split(",") if p.strip()]


# ---------------------------------------------------------------- conversion


def convert(model: ApproxNet, x: np.ndarray, target: int, chunk: int = 64) -> np.ndarray:
    """Run f_apx on model-ready source rows (N, L); returns (N, L) on the normalized scale."""
    dtype = next(model.parameters()).dtype
    model.eval()
    out = []
    with torch.no_grad():
        for a in range(0, len(x), chunk):
            xb = torch.as_tensor(x[a:a + chunk, None, :], dtype=dtype)
            d = one_hot(torch.full((len(xb),), target)).to(dtype)
            out.append(model(xb, d)[:, 0].double().numpy())
    return np.concatenate(out) if out else np.zeros((0, x.shape[-1]))


@dataclass
class BPPrediction:
    sbp: np.ndarray
    dbp: np.ndarray
    abp_mmHg: np.ndarray
    reordered: int  # segments whose predicted SBP did not exceed DBP


def refine_abp(refiner: RefineNet, y_apx: np.ndarray, x_source: np.ndarray, kind: str, texts: list[str] | None,
               dataset: Dataset, chunk: int = 128) -> BPPrediction:
    """Single-modality mmHg ABP: predicted SBP/DBP from the source waveform (+ PI), then
    the locally re-normalized approximation is mapped onto [DBP, SBP]."""
    bounds = dataset.manifest.bounds
    dtype = next(refiner.parameters()).dtype
    refiner.eval()
    s_all, d_all = [], []
    with torch.no_grad():
        for a in range(0, len(x_source), chunk):
            xb = torch.as_tensor(x_source[a:a + chunk, None, :], dtype=dtype)
            tb = texts[a:a + chunk] if texts is not None else None
            s, d, _, _ = refiner(xb, kind, tb)
            s_all.append(s.double().numpy())
            d_all.append(d.double().numpy())
    s_n, d_n = np.concatenate(s_all), np.concatenate(d_all)
    hi, lo = np.maximum(s_n, d_n), np.minimum(s_n, d_n)
    reordered = int((s_n <= d_n).sum())
    hi = np.where(hi - lo < 1e-6, lo + 1e-6, hi)
    waves = []
    for y, sn, dn in zip(y_apx, hi, lo):
        w = Waveform(Kind.ABP, minmax(y), dataset.fs, Unit.LOCAL)
        waves.append(rescale_abp(w, BPEstimate(float(sn), float(dn), bounds)).samples)
    return BPPrediction(bounds.denormalize(hi), bounds.denormalize(lo), np.array(waves), reordered)


# ---------------------------------------------------------------- reports


@dataclass
class DirectionReport:
    direction: str
    unit: str
    n: int
    mae: float
    pc: float
    mae_norm: float | None = None  # ABP targets: normalized-scale MAE on the approximation test split
    feature_rows: list[dict] = field(default_factory=list)
    feature_summary: dict = field(default_factory=dict)
    unavailable: int = 0
    aami: AAMIResult | None = None
    bhs: BHSResult | None = None
    reordered: int = 0

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("feature_rows", "aami", "bhs")}
        if self.aami is not None:
            d["aami"] = asdict(self.aami)
        if self.bhs is not None:
            d["bhs"] = {"cumulative": self.bhs.cumulative, "grades": self.bhs.grades, "overall": self.bhs.overall}
        return d


@dataclass
class EvalReport:
    dataset: str
    directions: dict[str, DirectionReport]
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "seeds": self.seeds,
                "directions": {k: v.to_dict() for k, v in self.directions.items()}}


def _features_by_kind(kind: str, x, fs) -> dict[str, float]:
    return {k: m.value for k, m in fx.extract(kind, x, fs).items()}


def _feature_rows(records: list[Record], pred: np.ndarray, kind: str, name: str, fs: float,
                  truth_waves: np.ndarray) -> tuple[list[dict], int]:
    rows, missing = [], 0
    for r, p, t in zip(records, pred, truth_waves):
        fp, ft = _features_by_kind(kind, p, fs), _features_by_kind(kind, t, fs)
        for feat in fx.TARGET_FEATURES[kind]:
            if feat not in fp or feat not in ft or ft[feat] == 0:
                missing += 1
                continue
            rows.append({
                "record_id": r.segment_id, "direction": name, "feature": feat,
                "predicted": float(fp[feat]), "truth": float(ft[feat]),
                "relative_error": fx.relative_error(fp[feat], ft[feat]),
                "subgroup": fx.subgroup(feat, ft[feat]) or "all",
            })
    return rows, missing


def summarize_features(rows: list[dict]) -> dict:
    """feature -> subgroup -> {mean_relative_error, n}; ``overall`` pools subgroups."""
    out: dict = {}
    for r in rows:
        for g in (r["subgroup"], "overall"):
            out.setdefault(r["feature"], {}).setdefault(g, []).append(r["relative_error"])
    return {f: {g: {"mean_relative_error": float(np.mean(v)), "n": len(v)} for g, v in sorted(gs.items())}
            for f, gs in sorted(out.items())}


def _similarity(pred: np.ndarray, true: np.ndarray) -> tuple[float, float]:
    pcs = []
    for p, t in zip(pred, true):
        try:
            pcs.append(pearson(p, t))
        except ValueError:
            continue
    return mae(pred, true), float(np.mean(pcs)) if pcs else float("nan")


def evaluate_direction(apx: ApproxNet | None, dataset: Dataset, direction, refiner: RefineNet | None = None,
                       split: str = "apx-test", abp_split: str = "ref-finetune-test",
                       require_refiner: bool = True) -> DirectionReport:
    """Convert the test split in one direction and score it.

    ECG/PPG targets are scored on the normalized scale over ``split``. ABP
    targets are rescaled to mmHg with the refiner and scored in mmHg over
    ``abp_split`` (segments the finetuned refiner never saw), with features,
    AAMI and BHS; their normalized-scale MAE over ``split`` is kept as ``mae_norm``.
    With ``require_refiner=False`` and no refiner, ABP targets are scored like
    the others, on the normalized scale.
    """
    if apx is None:
        raise EvaluationError("approximation checkpoint missing")
    i, j = parse_direction(direction)
    name = direction_name((i, j))
    fs = dataset.fs
    records = dataset.split(split)
    if not records:
        raise EvaluationError(f"split {split!r} is empty")
    inputs = dataset.model_inputs(records)
    y = convert(apx, inputs[:, i], j)
    if j != ABP or (refiner is None and not require_refiner):
        m, pc = _similarity(y, inputs[:, j])
        # pressure features need mmHg, so a normalized ABP target reports none
        rows, missing = ([], 0) if j == ABP else _feature_rows(records, y, KIND_NAMES[j], name, fs, inputs[:, j])
        return DirectionReport(name, Unit.LOCAL.value, len(records), m, pc, feature_rows=rows,
                               feature_summary=summarize_features(rows), unavailable=missing)

    if refiner is None:
        raise EvaluationError(f"{name} needs a refinement checkpoint (ref.ckpt missing)")
    mae_norm = mae(y, inputs[:, j])
    recs = dataset.split(abp_split)
    if not recs:
        raise EvaluationError(f"split {abp_split!r} is empty")
    xin = dataset.model_inputs(recs)
    y_apx = convert(apx, xin[:, i], j)
    texts = None
    if dataset.manifest.pi_available:
        texts = [linearize_pi(dataset.profiles[r.patient_id]) for r in recs]
    bp = refine_abp(refiner, y_apx, xin[:, i], KIND_NAMES[i], texts, dataset)
    truth = np.stack([r.abp.samples for r in recs])
    m, pc = _similarity(bp.abp_mmHg, truth)
    rows, missing = _feature_rows(recs, bp.abp_mmHg, "ABP", name, fs, truth)

    errors = []
    for k, r in enumerate(recs):
        fp, ft = _features_by_kind("ABP", bp.abp_mmHg[k], fs), _features_by_kind("ABP", truth[k], fs)
        if not ft:
            continue
        if not fp:  # no beats in the converted waveform: fall back to the predicted pressures
            fp = {"SBP": bp.sbp[k], "DBP": bp.dbp[k], "MAP": (bp.sbp[k] + 2 * bp.dbp[k]) / 3}
        errors += [ErrorSample(r.patient_id, ms, float(fp[ms] - ft[ms])) for ms in MEASURES]
    subjects = len({r.patient_id for r in recs})
    return DirectionReport(
        name, Unit.MMHG.value, len(recs), m, pc, mae_norm=mae_norm, feature_rows=rows,
        feature_summary=summarize_features(rows), unavailable=missing,
        aami=aami(errors, subjects) if errors else None, bhs=bhs(errors) if errors else None,
        reordered=bp.reordered,
    )


def evaluate(apx: ApproxNet | None, dataset: Dataset, directions="all", refiner: RefineNet | None = None) -> EvalReport:
    dirs = parse_directions(directions) if isinstance(directions, str) else [parse_direction(d) for d in directions]
    reports = {}
    for d in dirs:
        rep = evaluate_direction(apx, dataset, d, refiner)
        reports[rep.direction] = rep
    return EvalReport(dataset.manifest.dataset_id, reports)


def aggregate(reports: list[EvalReport]) -> dict[str, dict[str, float]]:
    """direction -> {mae_mean, mae_sd, pc_mean, pc_sd, seeds} over runs (sample SD)."""
    if not reports:
        raise ValueError("nothing to aggregate")
    out = {}
    for name in reports[0].directions:
        maes = np.array([r.directions[name].mae for r in reports])
        pcs = np.array([r.directions[name].pc for r in reports])
        sd = (lambda v: float(v.std(ddof=1)) if len(v) > 1 else 0.0)
        out[name] = {"mae_mean": float(maes.mean()), "mae_sd": sd(maes),
                     "pc_mean": float(pcs.mean()), "pc_sd": sd(pcs), "seeds": len(reports),
                     "unit": reports[0].directions[name].unit}
    return out


# ---------------------------------------------------------------- writers


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_report(report: EvalReport, out_dir, charts: bool = True) -> Path:
    """``report.json``, ``similarity.csv``, ``features.csv``, ``feature_summary.csv``,
    ``standards.csv`` and (optionally) ``similarity.svg`` / ``bhs.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=float) + "\n")
    reps = list(report.directions.values())
    write_csv(out / "similarity.csv", ("direction", "unit", "n", "mae", "pc", "mae_norm"),
              [(r.direction, r.unit, r.n, r.mae, r.pc, "" if r.mae_norm is None else r.mae_norm) for r in reps])
    fx.write_feature_table(out / "features.csv", [row for r in reps for row in r.feature_rows])
    write_csv(out / "feature_summary.csv", ("direction", "feature", "subgroup", "mean_relative_error", "n"),
              [(r.direction, f, g, s["mean_relative_error"], s["n"])
               for r in reps for f, gs in r.feature_summary.items() for g, s in gs.items()])
    std_rows = []
    for r in reps:
        if r.aami is None:
            continue
        for m in MEASURES:
            c = r.bhs.cumulative[m]
            std_rows.append((r.direction, m, r.aami.me[m], r.aami.sd[m], r.aami.subjects, r.aami.verdict,
                             c[0], c[1], c[2], r.bhs.grades[m], r.bhs.overall))
    write_csv(out / "standards.csv", ("direction", "measure", "me", "sd", "subjects", "aami", "cum5", "cum10",
                                      "cum15", "bhs_grade", "bhs_overall"), std_rows)
    if charts:
        from .plots import bhs_chart, similarity_chart
        similarity_chart({r.direction: (r.mae, 0.0, r.unit) for r in reps}, out / "similarity.svg")
        bhs_rows = {r.direction: r.bhs for r in reps if r.bhs is not None}
        if bhs_rows:
            bhs_chart(bhs_rows, out / "bhs.svg")
    return out


def write_aggregate(agg: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "aggregate.csv", ("direction", "unit", "seeds", "mae_mean", "mae_sd", "pc_mean", "pc_sd"),
              [(k, v["unit"], v["seeds"], v["mae_mean"], v["mae_sd"], v["pc_mean"], v["pc_sd"]) for k, v in agg.items()])
    from .plots import similarity_chart
    similarity_chart({k: (v["mae_mean"], v["mae_sd"], v["unit"]) for k, v in agg.items()}, out / "aggregate.svg")
