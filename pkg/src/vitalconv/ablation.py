"""Desk-scale ablations: multi- vs uni-directional training, and WCL x PI for refinement."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .approx import ApproxConfig, ApproxNet
from .evaluation import direction_name, evaluate_direction, write_csv
from .refine import RefineConfig, WCLConfig
from .synth import DIRECTIONS, Dataset
from .training import RunConfig, train_apx, train_ref, train_uni

log = logging.getLogger(__name__)

ABP = 2


def _mean_sd(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def _refiner(cfg: RunConfig, dataset: Dataset, seed: int, pretrain_steps: int, finetune_steps: int,
             use_wcl: bool, use_pi: bool, model_cfg: RefineConfig | None, wcl_cfg: WCLConfig | None):
    init = None
    if use_wcl and pretrain_steps > 0:
        pre = cfg.replace(stage="ref-pretrain", seed=seed, max_steps=pretrain_steps, use_wcl=True, use_pi=use_pi)
        init = train_ref(pre, dataset, None, model_cfg, wcl_cfg).model
    ft = cfg.replace(stage="ref-finetune", seed=seed, max_steps=finetune_steps, use_wcl=use_wcl, use_pi=use_pi,
                     require_pretrain=False)
    return train_ref(ft, dataset, init, model_cfg, wcl_cfg).model


@dataclass
class AblationTable:
    title: str
    columns: list[str]
    rows: dict[str, dict[str, tuple[float, float]]]  # row label -> column -> (mean, sd)
    units: dict[str, str]
    seeds: list[int]
    notes: list[str]

    def text(self) -> str:
        lines = [self.title, f"seeds: {self.seeds}", ""]
        head = ["row"] + [f"{c} [{self.units[c]}]" for c in self.columns]
        lines.append(" | ".join(head))
        for label, cols in self.rows.items():
            cells = [label] + [f"{cols[c][0]:.4g} +/- {cols[c][1]:.2g}" if c in cols else "--" for c in self.columns]
            lines.append(" | ".join(cells))
        lines += [""] + self.notes
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.txt").write_text(self.text())
        rows = [(label, c, self.units[c], *cols[c]) for label, cols in self.rows.items() for c in self.columns if c in cols]
        write_csv(out / f"{stem}.csv", ("row", "column", "unit", "mean", "sd"), rows)
        (out / f"{stem}.json").write_text(json.dumps(
            {"title": self.title, "columns": self.columns, "units": self.units, "seeds": self.seeds,
             "rows": {k: {c: list(v) for c, v in cols.items()} for k, cols in self.rows.items()}, "notes": self.notes},
            indent=2, sort_keys=True) + "\n")


def multi_vs_uni(dataset: Dataset, cfg: RunConfig, seeds=(0, 1, 2), model_cfg: ApproxConfig | None = None,
                 refine_steps: tuple[int, int] = (0, 0), refine_cfg: RefineConfig | None = None) -> AblationTable:
    """Six directions x {uni, multi}; every model gets the same ``cfg.max_steps`` budget.

    ABP rows are in mmHg when ``refine_steps`` (pretrain, finetune) is non-zero (one
    refiner per seed shared by both variants), else on the normalized scale.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    refine = refine_steps[1] > 0
    scores: dict[str, dict[str, list[float]]] = {direction_name(d): {"uni": [], "multi": []} for d in DIRECTIONS}
    units = {}
    for seed in seeds:
        c = cfg.replace(seed=seed)
        refiner = _refiner(cfg, dataset, seed, *refine_steps, True, True, refine_cfg, None) if refine else None
        multi = train_apx(c.replace(stage="apx"), dataset, model_cfg).model
        for d in DIRECTIONS:
            name = direction_name(d)
            uni = train_uni(c, dataset, d, model_cfg).model
            for label, model in (("uni", uni), ("multi", multi)):
                rep = evaluate_direction(model, dataset, d, refiner, require_refiner=refine)
                value = rep.mae
                scores[name][label].append(value)
                units[name] = "mmHg" if (d[1] == ABP and refine) else "local-norm"
            log.info("seed %d %s uni %.4g multi %.4g", seed, name, scores[name]["uni"][-1], scores[name]["multi"][-1])
    rows = {f"{name} ({units[name]})": {v: _mean_sd(s[v]) for v in ("uni", "multi")} for name, s in scores.items()}
    wins = sum(r["multi"][0] <= r["uni"][0] for r in rows.values())
    notes = [f"multi <= uni in {wins}/6 directions (reported, not gated)",
             f"equal step budget per model: {cfg.max_steps} optimizer updates"]
    return AblationTable("Multi-directional vs uni-directional training (MAE, mean +/- SD)",
                         ["uni", "multi"], rows, {"uni": "MAE", "multi": "MAE"}, list(seeds), notes)


def wcl_pi(dataset: Dataset, cfg: RunConfig, apx: ApproxNet, seeds=(0, 1, 2), pretrain_steps: int = 200,
           finetune_steps: int = 600, refine_cfg: RefineConfig | None = None,
           wcl_cfg: WCLConfig | None = None) -> AblationTable:
    """{WCL on/off} x {PI on/off} grid of end-to-end mmHg ABP MAE on the finetune-test split.

    PI rows are omitted when the manifest says demographics are unavailable.
    """
    pi_options = (False, True) if dataset.manifest.pi_available else (False,)
    cols = [direction_name((1, ABP)), direction_name((0, ABP))]
    rows: dict[str, dict[str, tuple[float, float]]] = {}
    for use_pi in pi_options:
        for use_wcl in (False, True):
            vals = {c: [] for c in cols}
            for seed in seeds:
                ref = _refiner(cfg, dataset, seed, pretrain_steps, finetune_steps, use_wcl, use_pi, refine_cfg, wcl_cfg)
                for src, c in ((1, cols[0]), (0, cols[1])):
                    vals[c].append(evaluate_direction(apx, dataset, (src, ABP), ref).mae)
            label = f"WCL={'Y' if use_wcl else 'N'} PI={'Y' if use_pi else 'N'}"
            rows[label] = {c: _mean_sd(v) for c, v in vals.items()}
            log.info("%s %s", label, rows[label])
    notes = []
    if not dataset.manifest.pi_available:
        notes.append("dataset has no patient demographics: PI rows not applicable")
    base = "WCL=N PI=N"
    if base in rows and "WCL=Y PI=N" in rows:
        d = rows[base][cols[0]][0] - rows["WCL=Y PI=N"][cols[0]][0]
        notes.append(f"WCL changes {cols[0]} MAE by {-d:+.3f} mmHg without PI (reported, not gated)")
    return AblationTable("WCL and patient-information ablation (end-to-end ABP MAE, mmHg, mean +/- SD)",
                         cols, rows, {c: "mmHg" for c in cols}, list(seeds), notes)
